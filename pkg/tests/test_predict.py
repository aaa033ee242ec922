"""Predictor contract tests: persistence, historical average, ridge."""

import numpy as np
import pytest

from conftest import (
    apply_rule,
    linear_flow_system,
    single_cluster_partition,
    strip_partition,
    tensor_from_arrays,
)
from flowshap.errors import ConfigError, InputError, StateError
from flowshap.partition import GridSpec
from flowshap.predict import (
    FlowFrame,
    PredictorSpec,
    RidgePredictor,
    frame_at,
    predict_next,
    rolling_forecast,
    train,
    window_at,
)


def constant_tensor(grid, n_intervals, value=1):
    shape = (n_intervals, grid.rows, grid.cols)
    return tensor_from_arrays(grid, np.full(shape, value), np.full(shape, value))


# ------------------------------------------------------------- persistence

def test_persistence_returns_last_frame(grid2x2):
    tensor = constant_tensor(grid2x2, 8)
    predictor = train(PredictorSpec("persistence"), tensor, range(8))
    window = window_at(tensor, 5)
    frame = predict_next(predictor, window, 6)
    np.testing.assert_array_equal(frame.inflow, window[-1].inflow)
    np.testing.assert_array_equal(frame.outflow, window[-1].outflow)


def test_persistence_rollout_fixed_point(grid2x2):
    rng = np.random.default_rng(3)
    inflow = rng.integers(0, 9, size=(12, 2, 2))
    tensor = tensor_from_arrays(grid2x2, inflow, inflow + 1)
    predictor = train(PredictorSpec("persistence"), tensor, range(12))
    for horizons in (1, 3, 7):
        fc = rolling_forecast(predictor, tensor, 6, horizons)
        assert fc.horizons == horizons
        for frame in fc.frames:
            np.testing.assert_array_equal(frame.inflow, tensor.inflow[6].astype(float))
    assert fc.clamped == 0


def test_window_must_be_five_frames(grid2x2):
    tensor = constant_tensor(grid2x2, 8)
    predictor = train(PredictorSpec("persistence"), tensor, range(8))
    frames = [frame_at(tensor, i) for i in range(3)]
    with pytest.raises(InputError):
        predict_next(predictor, frames)


# ------------------------------------------------------ historical average

def test_historical_average_means_prior_periods(grid2x2):
    # period 4: predicting interval 9 sees intervals 5 and 1 holding 2 and 4
    inflow = np.zeros((10, 2, 2), dtype=int)
    inflow[1] = 4
    inflow[5] = 2
    tensor = tensor_from_arrays(grid2x2, inflow, inflow)
    spec = PredictorSpec("historical_average", period_intervals=4)
    predictor = train(spec, tensor, range(10))
    frame = predict_next(predictor, window_at(tensor, 8), target_interval=9)
    np.testing.assert_allclose(frame.inflow, np.full((2, 2), 3.0))


def test_historical_average_falls_back_to_persistence(grid2x2):
    inflow = np.arange(10 * 4).reshape(10, 2, 2)
    tensor = tensor_from_arrays(grid2x2, inflow, inflow)
    spec = PredictorSpec("historical_average", period_intervals=1008)
    predictor = train(spec, tensor, range(10))
    frame = predict_next(predictor, window_at(tensor, 6), target_interval=7)
    np.testing.assert_array_equal(frame.inflow, tensor.inflow[6].astype(float))


# ------------------------------------------------------------------- ridge

def normal_equations_oracle(x, y):
    """Independent least-squares path for the recovery checks."""
    return np.linalg.solve(x.T @ x, x.T @ y).T


def test_ridge_recovers_planted_rule(grid2x2):
    # 100 training windows generated by an exact linear rule
    partition = single_cluster_partition(grid2x2)
    tensor, a, train_indices, block_ends = linear_flow_system(grid2x2, n_blocks=100, seed=11)
    spec = PredictorSpec("ridge", ridge_lambda=0.0)
    predictor = train(spec, tensor, train_indices, partition)

    # oracle: solve the normal equations on the same training windows
    x = np.stack([predictor.flatten_window(window_at(tensor, t), 0) for t in block_ends])
    y = np.stack([predictor.flatten_target(frame_at(tensor, t + 1), 0) for t in block_ends])
    w_oracle = normal_equations_oracle(x, y)
    np.testing.assert_allclose(predictor.weights[0], w_oracle, atol=1e-8)
    np.testing.assert_allclose(predictor.weights[0], a, atol=1e-6)


def test_ridge_reproduces_rule_on_held_out_windows(grid2x2):
    partition = single_cluster_partition(grid2x2)
    tensor, a, train_indices, block_ends = linear_flow_system(grid2x2, n_blocks=70, seed=13)
    held_out = block_ends[60:]
    spec = PredictorSpec("ridge", ridge_lambda=0.0)
    predictor = train(spec, tensor, train_indices[: 60 * 6], partition)
    for t in held_out:
        window = window_at(tensor, t)
        got = predict_next(predictor, window, t + 1)
        want_in, want_out = apply_rule(a, window, grid2x2)
        np.testing.assert_allclose(got.inflow, want_in, atol=1e-6)
        np.testing.assert_allclose(got.outflow, want_out, atol=1e-6)


def test_ridge_rollout_matches_iterated_generator(grid2x2):
    partition = single_cluster_partition(grid2x2)
    tensor, a, train_indices, block_ends = linear_flow_system(grid2x2, n_blocks=60, seed=17)
    spec = PredictorSpec("ridge", ridge_lambda=0.0)
    predictor = train(spec, tensor, train_indices, partition)

    base = block_ends[30]
    fc = rolling_forecast(predictor, tensor, base, 3)
    window = window_at(tensor, base)
    for h in range(3):
        want_in, want_out = apply_rule(a, window, grid2x2)
        np.testing.assert_allclose(fc.frames[h].inflow, want_in, atol=1e-5)
        np.testing.assert_allclose(fc.frames[h].outflow, want_out, atol=1e-5)
        window = window[1:] + [FlowFrame(want_in, want_out)]


def test_ridge_infinite_lambda_limit_predicts_zero(grid2x2):
    partition = single_cluster_partition(grid2x2)
    tensor, _, train_indices, block_ends = linear_flow_system(grid2x2, n_blocks=30, seed=19)
    spec = PredictorSpec("ridge", ridge_lambda=1e12)
    predictor = train(spec, tensor, train_indices, partition)
    frame = predict_next(predictor, window_at(tensor, block_ends[0]), block_ends[0] + 1)
    assert float(frame.inflow.max()) < 1e-6
    assert float(frame.outflow.max()) < 1e-6


def test_ridge_requires_partition_and_enough_data(grid2x2):
    tensor = constant_tensor(grid2x2, 12)
    with pytest.raises(ConfigError):
        train(PredictorSpec("ridge", ridge_lambda=0.0), tensor, range(12))
    partition = single_cluster_partition(grid2x2)
    with pytest.raises(ConfigError, match="6"):
        train(PredictorSpec("ridge", ridge_lambda=0.0), tensor, range(4), partition)


def test_untrained_ridge_raises_state_error(grid2x2):
    partition = single_cluster_partition(grid2x2)
    tensor = constant_tensor(grid2x2, 8)
    predictor = RidgePredictor(PredictorSpec("ridge"), partition)
    with pytest.raises(StateError):
        predict_next(predictor, window_at(tensor, 5), 6)


def test_ridge_rejects_window_of_wrong_grid(grid2x2):
    partition = single_cluster_partition(grid2x2)
    tensor, _, train_indices, _ = linear_flow_system(grid2x2, n_blocks=20, seed=37)
    predictor = train(PredictorSpec("ridge", ridge_lambda=1.0), tensor, train_indices, partition)
    other = GridSpec(bbox=(0.0, 0.0, 0.03, 0.03), rows=3, cols=3)
    alien = constant_tensor(other, 8)
    with pytest.raises(InputError, match="does not match"):
        predict_next(predictor, window_at(alien, 5), 6)


def test_ridge_locality_is_cluster_plus_neighbors():
    grid = GridSpec(bbox=(0.0, 0.0, 0.03, 0.01), rows=1, cols=3)
    partition = strip_partition(grid, 3)
    predictor = RidgePredictor(PredictorSpec("ridge"), partition)
    assert predictor.input_locality((0, 0)) == {(0, 0), (0, 1)}
    assert predictor.input_locality((0, 1)) == {(0, 0), (0, 1), (0, 2)}


def test_ridge_model_round_trip(tmp_path, grid2x2):
    partition = single_cluster_partition(grid2x2)
    tensor, _, train_indices, block_ends = linear_flow_system(grid2x2, n_blocks=30, seed=23)
    predictor = train(PredictorSpec("ridge", ridge_lambda=0.5), tensor, train_indices, partition)
    path = tmp_path / "model.bin"
    predictor.save(path)
    loaded = RidgePredictor.load(path, partition)
    assert loaded.spec.ridge_lambda == 0.5
    np.testing.assert_array_equal(loaded.weights[0], predictor.weights[0])
    base = block_ends[0]
    f1 = predict_next(predictor, window_at(tensor, base), base + 1)
    f2 = predict_next(loaded, window_at(tensor, base), base + 1)
    np.testing.assert_array_equal(f1.inflow, f2.inflow)
    assert path.read_bytes()[:4] == b"TPRM"


# ---------------------------------------------------------------- rollout

def test_rollout_prefix_consistency(grid2x2):
    partition = single_cluster_partition(grid2x2)
    tensor, _, train_indices, block_ends = linear_flow_system(grid2x2, n_blocks=40, seed=29)
    predictor = train(PredictorSpec("ridge", ridge_lambda=0.0), tensor, train_indices, partition)
    base = block_ends[10]
    full = rolling_forecast(predictor, tensor, base, 6)
    for h in range(1, 7):
        prefix = rolling_forecast(predictor, tensor, base, h)
        for i in range(h):
            np.testing.assert_array_equal(prefix.frames[i].inflow, full.frames[i].inflow)
            np.testing.assert_array_equal(prefix.frames[i].outflow, full.frames[i].outflow)


def test_rollout_h1_equals_predict_next(grid2x2):
    tensor = constant_tensor(grid2x2, 8, value=3)
    predictor = train(PredictorSpec("persistence"), tensor, range(8))
    fc = rolling_forecast(predictor, tensor, 5, 1)
    frame = predict_next(predictor, window_at(tensor, 5), 6)
    np.testing.assert_array_equal(fc.frames[0].inflow, frame.inflow)


def test_rollout_clamps_and_counts_negative_outputs(grid2x2):
    partition = single_cluster_partition(grid2x2)
    predictor = RidgePredictor(PredictorSpec("ridge"), partition)
    in_dim = 2 * 5 * 4
    predictor.weights = {0: np.full((8, in_dim), -0.01)}
    tensor = constant_tensor(grid2x2, 8, value=2)
    fc = rolling_forecast(predictor, tensor, 5, 2)
    assert float(fc.frames[0].inflow.min()) == 0.0
    # every cell-channel clamps at both horizons: the horizon-2 window still
    # holds four observed positive frames, so the raw output stays negative
    assert fc.clamped == 16


def test_rollout_rejects_bad_horizons(grid2x2):
    tensor = constant_tensor(grid2x2, 8)
    predictor = train(PredictorSpec("persistence"), tensor, range(8))
    with pytest.raises(ConfigError):
        rolling_forecast(predictor, tensor, 5, 0)


def test_determinism_bit_identical(grid2x2):
    partition = single_cluster_partition(grid2x2)
    tensor, _, train_indices, block_ends = linear_flow_system(grid2x2, n_blocks=40, seed=31)
    p1 = train(PredictorSpec("ridge", ridge_lambda=2.0), tensor, train_indices, partition)
    p2 = train(PredictorSpec("ridge", ridge_lambda=2.0), tensor, train_indices, partition)
    f1 = rolling_forecast(p1, tensor, block_ends[5], 4)
    f2 = rolling_forecast(p2, tensor, block_ends[5], 4)
    for a, b in zip(f1.frames, f2.frames):
        assert a.inflow.tobytes() == b.inflow.tobytes()
        assert a.outflow.tobytes() == b.outflow.tobytes()


def test_spec_validation():
    with pytest.raises(ConfigError):
        PredictorSpec("unknown")
    with pytest.raises(ConfigError):
        PredictorSpec("ridge", ridge_lambda=-1.0)
    with pytest.raises(ConfigError):
        PredictorSpec("historical_average", period_intervals=0)
