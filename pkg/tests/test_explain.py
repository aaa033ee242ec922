"""Attribution tests: estimators, axioms, prediction games, summaries."""

import numpy as np
import pytest

from conftest import strip_partition, tensor_from_arrays
from flowshap.errors import CapacityError, DegenerateGameError, InputError
from flowshap.explain import (
    Attribution,
    CoalitionGame,
    ExplainEngine,
    HistoricalMeanMasker,
    ZeroMasker,
    attribute,
    cluster_game,
    derive_seed,
    game_from_table,
    glyph_summaries,
    grid_game,
    sector_summary,
    shapley_exact,
    shapley_mc,
    time_channel_report,
)
from flowshap.partition import ClusterPartition, GridSpec
from flowshap.predict import PredictorSpec, RidgePredictor, train
from flowshap.trajdata import TrajectoryRecord, TrajectoryStore, build_flow_tensor


def players(n):
    return [f"p{i}" for i in range(n)]


def random_game(rng, n):
    return game_from_table(players(n), rng.normal(size=1 << n))


def phis(atts):
    return np.array([a.phi for a in atts])


# ------------------------------------------------------------- estimators

def test_constant_game_all_zero():
    game = game_from_table(players(3), np.full(8, 4.2))
    assert np.allclose(phis(shapley_exact(game)), 0.0, atol=1e-12)


def test_cardinality_game_all_one():
    n = 4
    table = np.array([bin(m).count("1") for m in range(1 << n)], dtype=float)
    game = game_from_table(players(n), table)
    np.testing.assert_allclose(phis(shapley_exact(game)), np.ones(n), atol=1e-12)


def test_two_player_hand_example():
    # v() = 0, v({1}) = 1, v({2}) = 2, v({1,2}) = 4; averaging both join orders
    # by hand gives phi1 = (1 + 2)/2 = 1.5 and phi2 = (2 + 3)/2 = 2.5
    game = game_from_table(["p1", "p2"], np.array([0.0, 1.0, 2.0, 4.0]))
    atts = shapley_exact(game)
    assert atts[0].phi == pytest.approx(1.5, abs=1e-12)
    assert atts[1].phi == pytest.approx(2.5, abs=1e-12)
    assert all(a.method == "exact" and a.stderr == 0.0 for a in atts)


def test_exact_efficiency_on_random_games():
    rng = np.random.default_rng(61)
    for n in range(2, 9):
        game = random_game(rng, n)
        total = phis(shapley_exact(game)).sum()
        want = game.value(game.full_mask()) - game.baseline
        assert total == pytest.approx(want, abs=1e-9)


def test_exact_capacity_error_directs_to_mc():
    game = CoalitionGame(players(21), lambda mask: 0.0)
    with pytest.raises(CapacityError, match="shapley_mc"):
        shapley_exact(game)


def test_mc_single_permutation_telescopes():
    rng = np.random.default_rng(67)
    game = random_game(rng, 6)
    atts = shapley_mc(game, permutations=1, seed=5)
    want = game.value(game.full_mask()) - game.baseline
    assert phis(atts).sum() == pytest.approx(want, abs=1e-12)
    assert all(a.stderr == 0.0 for a in atts)


def test_mc_efficiency_exact_for_any_m():
    rng = np.random.default_rng(71)
    game = random_game(rng, 5)
    for m in (1, 7, 40):
        atts = shapley_mc(game, permutations=m, seed=9)
        want = game.value(game.full_mask()) - game.baseline
        assert phis(atts).sum() == pytest.approx(want, abs=1e-10)


def test_mc_within_three_stderr_of_hand_value():
    game = game_from_table(["p1", "p2"], np.array([0.0, 1.0, 2.0, 4.0]))
    atts = shapley_mc(game, permutations=1000, seed=11)
    assert abs(atts[0].phi - 1.5) <= max(3 * atts[0].stderr, 1e-12)


def test_mc_close_to_exact_on_random_game():
    rng = np.random.default_rng(73)
    game = random_game(rng, 10)
    exact = phis(shapley_exact(game))
    atts = shapley_mc(game, permutations=5000, seed=13)
    for i, att in enumerate(atts):
        assert abs(att.phi - exact[i]) <= 4 * att.stderr


def test_mc_deterministic_given_seed():
    rng = np.random.default_rng(79)
    game = random_game(rng, 6)
    a1 = shapley_mc(game, 50, seed=21)
    a2 = shapley_mc(game, 50, seed=21)
    assert phis(a1).tolist() == phis(a2).tolist()
    a3 = shapley_mc(game, 50, seed=22)
    assert phis(a1).tolist() != phis(a3).tolist()


def test_additive_game_closed_form_both_methods():
    # dyadic weights keep float addition exact, so MC marginals equal w exactly
    rng = np.random.default_rng(83)
    n = 8
    w = rng.integers(-100, 100, size=n) / 8.0
    table = np.array([w[[i for i in range(n) if m >> i & 1]].sum() for m in range(1 << n)])
    game = game_from_table(players(n), table)
    np.testing.assert_allclose(phis(shapley_exact(game)), w, atol=1e-9)
    game2 = game_from_table(players(n), table)
    mc = phis(shapley_mc(game2, permutations=37, seed=3))
    assert mc.tolist() == w.tolist()


def test_mc_evaluation_count_is_m_times_n():
    rng = np.random.default_rng(89)
    game = random_game(rng, 7)
    before = game.eval_count
    shapley_mc(game, permutations=13, seed=1)
    assert game.eval_count - before == 13 * 7


def test_exact_evaluation_count_is_two_to_n():
    rng = np.random.default_rng(97)
    game = random_game(rng, 6)
    before = game.eval_count
    shapley_exact(game)
    assert game.eval_count - before == 1 << 6


# ----------------------------------------------------------------- axioms

def symmetrized_game(rng, n):
    """Players 0 and 1 are exchangeable by construction."""
    base = {}
    table = np.empty(1 << n)
    for mask in range(1 << n):
        key = (mask >> 2, (mask & 1) + (mask >> 1 & 1))
        if key not in base:
            base[key] = rng.normal()
        table[mask] = base[key]
    return game_from_table(players(n), table)


def test_symmetry_axiom():
    rng = np.random.default_rng(101)
    for n in range(3, 8):
        atts = shapley_exact(symmetrized_game(rng, n))
        assert atts[0].phi == pytest.approx(atts[1].phi, abs=1e-9)


def test_null_player_axiom():
    rng = np.random.default_rng(103)
    n = 6
    sub = rng.normal(size=1 << n)
    bit = 1 << 2
    table = np.array([sub[m & ~bit] for m in range(1 << n)])
    atts = shapley_exact(game_from_table(players(n), table))
    assert atts[2].phi == pytest.approx(0.0, abs=1e-12)


def test_linearity_axiom():
    rng = np.random.default_rng(107)
    n = 7
    t1 = rng.normal(size=1 << n)
    t2 = rng.normal(size=1 << n)
    alpha = 2.75
    combo = phis(shapley_exact(game_from_table(players(n), alpha * t1 + t2)))
    parts = alpha * phis(shapley_exact(game_from_table(players(n), t1))) + phis(
        shapley_exact(game_from_table(players(n), t2))
    )
    np.testing.assert_allclose(combo, parts, atol=1e-9)


def test_monotone_marginal_gives_nonnegative_phi():
    rng = np.random.default_rng(109)
    n = 6
    w = rng.uniform(0.5, 3.0, size=n)
    table = np.array(
        [max([w[i] for i in range(n) if m >> i & 1], default=0.0) for m in range(1 << n)]
    )
    atts = shapley_exact(game_from_table(players(n), table))
    assert (phis(atts) >= -1e-12).all()


def test_attribute_switches_methods_by_size():
    rng = np.random.default_rng(113)
    small = random_game(rng, 4)
    assert all(a.method == "exact" for a in attribute(small, seed=1, exact_threshold=12))
    big = random_game(rng, 6)
    atts = attribute(big, seed=1, exact_threshold=5, mc_permutations=10)
    assert all(a.method == "monte_carlo" for a in atts)


def test_derive_seed_stable_and_distinct():
    assert derive_seed(1, "cluster", 3, 10, 2) == derive_seed(1, "cluster", 3, 10, 2)
    assert derive_seed(1, "cluster", 3, 10, 2) != derive_seed(1, "cluster", 4, 10, 2)
    assert derive_seed(1, "grid", 3, 10, 2) != derive_seed(2, "grid", 3, 10, 2)


# ----------------------------------------------------------- cluster games

GRID13 = GridSpec(bbox=(0.0, 0.0, 0.03, 0.01), rows=1, cols=3)


def make_tensor(grid, inflow, outflow):
    return tensor_from_arrays(grid, inflow, outflow)


def west_coupled_ridge(partition):
    """Hand-built linear map: middle cell's inflow = 2 * west cell's outflow
    at the last window frame; everything else predicts zero."""
    predictor = RidgePredictor(PredictorSpec("ridge"), partition)
    weights = {}
    for c in range(3):
        n_in = 2 * 5 * len(predictor.group_cells[c])
        weights[c] = np.zeros((2, n_in))
    # cluster 1 group cells: [(0,0), (0,1), (0,2)]; flat index of
    # (frame 4, outflow, cell (0,0)) = 4*6 + 3 + 0 = 27
    weights[1][0, 27] = 2.0
    predictor.weights = weights
    return predictor


def demo_tensor():
    rng = np.random.default_rng(127)
    inflow = rng.integers(0, 5, size=(10, 1, 3))
    outflow = rng.integers(0, 5, size=(10, 1, 3))
    outflow[5, 0, 0] = 7  # west cell's outflow at the base interval
    return make_tensor(GRID13, inflow, outflow)


def test_cluster_game_persistence_null_cascade():
    partition = strip_partition(GRID13, 3)
    tensor = demo_tensor()
    predictor = train(PredictorSpec("persistence"), tensor, range(10))
    game = cluster_game(tensor, partition, predictor, 1, 5, 1, ZeroMasker(tensor))
    atts = shapley_exact(game)
    assert np.allclose(phis(atts), 0.0, atol=1e-12)


def test_cluster_game_west_neighbor_carries_everything():
    partition = strip_partition(GRID13, 3)
    tensor = demo_tensor()
    predictor = west_coupled_ridge(partition)
    game = cluster_game(tensor, partition, predictor, 1, 5, 1, ZeroMasker(tensor))
    assert game.players == ["0", "2"]
    atts = shapley_exact(game)
    want = game.value(game.full_mask()) - game.baseline
    assert atts[0].phi == pytest.approx(14.0, abs=1e-9)  # 2 * outflow 7
    assert atts[0].phi == pytest.approx(want, abs=1e-9)
    assert atts[1].phi == pytest.approx(0.0, abs=1e-9)


def test_linear_game_phi_equals_singleton_effect():
    partition = strip_partition(GRID13, 3)
    tensor = demo_tensor()
    predictor = west_coupled_ridge(partition)
    game = cluster_game(tensor, partition, predictor, 1, 5, 1, ZeroMasker(tensor))
    atts = shapley_exact(game)
    for i, att in enumerate(atts):
        single = game.value(1 << i) - game.baseline
        assert att.phi == pytest.approx(single, abs=1e-9)


def test_cluster_game_no_neighbors_degenerate():
    partition = strip_partition(GRID13, 1)
    tensor = demo_tensor()
    predictor = train(PredictorSpec("persistence"), tensor, range(10))
    with pytest.raises(DegenerateGameError):
        cluster_game(tensor, partition, predictor, 0, 5, 1, ZeroMasker(tensor))


def test_cluster_game_rejects_bad_cluster():
    partition = strip_partition(GRID13, 3)
    tensor = demo_tensor()
    predictor = train(PredictorSpec("persistence"), tensor, range(10))
    with pytest.raises(InputError):
        cluster_game(tensor, partition, predictor, 9, 5, 1, ZeroMasker(tensor))


def test_historical_mean_masker_baseline():
    tensor = demo_tensor()
    masker = HistoricalMeanMasker(tensor, range(5))
    # 3-hour scenario: no prior same-time-of-day slot, so the baseline falls
    # back to the mean over earlier training intervals
    base_in, _ = masker.baseline(5)
    np.testing.assert_allclose(base_in, tensor.inflow[:5].mean(axis=0))


def test_historical_mean_masker_prefers_same_slot_of_day():
    # 3 days of 144 slots; the masked interval's slot appeared twice before
    rng = np.random.default_rng(137)
    n = 3 * 144
    inflow = rng.integers(0, 6, size=(n, 1, 3))
    tensor = make_tensor(GRID13, inflow, inflow)
    masker = HistoricalMeanMasker(tensor, range(n))
    target = 2 * 144 + 17
    base_in, base_out = masker.baseline(target)
    want = tensor.inflow[[17, 144 + 17]].mean(axis=0)
    np.testing.assert_allclose(base_in, want)
    np.testing.assert_allclose(base_out, want)


# ---------------------------------------------------------- trajectory games

GRID33 = GridSpec(bbox=(0.0, 0.0, 3.0, 3.0), rows=3, cols=3)


def crossing_record(trip, t_cross, into=True):
    """One segment crossing the (1,0)->(1,1) border at t_cross (+-50 s fixes)."""
    x0, x1 = (0.5, 1.5) if into else (1.5, 0.5)
    return TrajectoryRecord(
        vehicle_id="v",
        trip_id=trip,
        points=np.array([[t_cross - 50.0, x0, 1.5], [t_cross + 50.0, x1, 1.5]]),
    )


def game_setup(records, base=5):
    ts = [p[0] for r in records for p in r.points.tolist()]
    store = TrajectoryStore(records, (min(ts), max(ts)) if ts else None)
    tensor = build_flow_tensor(store, GRID33, 600, t0=0, n_intervals=10)
    predictor = train(PredictorSpec("persistence"), tensor, range(10))
    return store, tensor, predictor


def test_grid_game_no_candidates_is_empty():
    records = [crossing_record("far", 5 * 600 + 100)]
    store, tensor, predictor = game_setup(records)
    ctx = grid_game(tensor, store, predictor, (2, 2), 5, 1)
    assert ctx.game is None and ctx.candidates == []


def test_grid_game_single_candidate_phi_is_delta():
    records = [crossing_record("t1", 5 * 600 + 100)]
    store, tensor, predictor = game_setup(records)
    ctx = grid_game(tensor, store, predictor, (1, 1), 5, 1)
    assert [c.trip_id for c in ctx.candidates] == ["t1"]
    atts = shapley_exact(ctx.game)
    delta = ctx.game.value(1) - ctx.game.baseline
    assert atts[0].phi == pytest.approx(delta, abs=1e-12)
    assert delta == pytest.approx(1.0)


def test_grid_game_additive_matches_own_contributions():
    # four trips cross into the cell during the base interval, one crossed a
    # window earlier, one crosses outward; persistence at h=1 reads only the
    # last window frame, so the game is additive with phi = own contribution
    records = [
        crossing_record("t1", 5 * 600 + 100),
        crossing_record("t2", 5 * 600 + 200),
        crossing_record("t3", 5 * 600 + 300),
        crossing_record("t4", 5 * 600 + 400),
        crossing_record("t5", 4 * 600 + 100),
        crossing_record("t6", 5 * 600 + 500, into=False),
    ]
    store, tensor, predictor = game_setup(records)
    ctx = grid_game(tensor, store, predictor, (1, 1), 5, 1)
    assert sorted(c.trip_id for c in ctx.candidates) == [f"t{i}" for i in range(1, 7)]
    atts = {a.player: a.phi for a in shapley_exact(ctx.game)}
    for trip in ("t1", "t2", "t3", "t4"):
        assert atts[trip] == pytest.approx(1.0, abs=1e-12)
    assert atts["t5"] == pytest.approx(0.0, abs=1e-12)
    assert atts["t6"] == pytest.approx(0.0, abs=1e-12)


def test_grid_game_candidate_cap_ranked_by_events():
    records = [crossing_record(f"t{i:02d}", 5 * 600 + 20 + i * 30) for i in range(8)]
    # t99 crosses in and back out: one inflow plus one outflow event at the
    # cell, so it outranks the single-crossing trips and survives the cap
    busy = TrajectoryRecord(
        vehicle_id="v", trip_id="t99",
        points=np.array([
            [5 * 600 + 10, 0.5, 1.5],
            [5 * 600 + 110, 1.5, 1.5],
            [5 * 600 + 210, 0.5, 1.5],
        ]),
    )
    store, tensor, predictor = game_setup(records + [busy])
    ctx = grid_game(tensor, store, predictor, (1, 1), 5, 1, candidate_cap=4)
    assert len(ctx.candidates) == 4
    assert ctx.candidates[0].trip_id == "t99"
    assert ctx.candidates[0].event_count == 2
    assert [c.trip_id for c in ctx.candidates[1:]] == ["t00", "t01", "t02"]


# ----------------------------------------------------------------- sectors

def fan_partition():
    """Star layout: cluster 0 centered, neighbors 1..8 at the 8 compass points."""
    grid = GridSpec(bbox=(0.0, 0.0, 0.09, 0.09), rows=3, cols=3)
    part = strip_partition(grid, 3)  # geometry unused below; centroids overridden
    offsets = {
        1: (0.0, 1.0), 2: (1.0, 1.0), 3: (1.0, 0.0), 4: (1.0, -1.0),
        5: (0.0, -1.0), 6: (-1.0, -1.0), 7: (-1.0, 0.0), 8: (-1.0, 1.0),
    }
    centroids = np.zeros((9, 2))
    for cid, (dx, dy) in offsets.items():
        centroids[cid] = (dx * 100.0, dy * 100.0)
    part.centroids = centroids
    part.k = 9
    return part


def att(player, phi):
    return Attribution(player=str(player), phi=phi, stderr=0.0, method="exact")


def test_sector_single_neighbor_due_east():
    part = fan_partition()
    sectors = sector_summary([att(3, 3.0)], part, 0)
    by_name = {s.direction: s for s in sectors}
    assert by_name["E"].positive == pytest.approx(3.0)
    assert by_name["E"].negative == 0.0
    assert sum(s.positive + s.negative for s in sectors) == pytest.approx(3.0)


def test_sector_mixed_signs_not_netted():
    part = fan_partition()
    part.centroids[2] = part.centroids[1] * 1.5  # move neighbor 2 due north too
    sectors = sector_summary([att(1, 2.0), att(2, -1.0)], part, 0)
    north = {s.direction: s for s in sectors}["N"]
    assert north.positive == pytest.approx(2.0)
    assert north.negative == pytest.approx(1.0)


def test_sector_reconciliation_random():
    part = fan_partition()
    rng = np.random.default_rng(131)
    atts = [att(i, float(rng.normal())) for i in range(1, 9)]
    sectors = sector_summary(atts, part, 0)
    total = sum(s.positive - s.negative for s in sectors)
    assert total == pytest.approx(sum(a.phi for a in atts), abs=1e-9)


def test_sector_all_eight_directions():
    part = fan_partition()
    atts = [att(i, 1.0) for i in range(1, 9)]
    sectors = sector_summary(atts, part, 0)
    assert [s.positive for s in sectors] == [1.0] * 8


def test_sector_coincident_centroid_warns_north():
    part = fan_partition()
    part.centroids[1] = part.centroids[0]
    with pytest.warns(UserWarning):
        sectors = sector_summary([att(1, 2.0)], part, 0)
    assert sectors[0].direction == "N" and sectors[0].positive == 2.0


# ------------------------------------------------------------ time channels

def test_time_channels_bucket_by_last_event():
    # window ends at t=3600; the crossing at t=2100 is 25 minutes earlier
    records = [crossing_record("t1", 2100)]
    store, tensor, predictor = game_setup(records)
    ctx = grid_game(tensor, store, predictor, (1, 1), 5, 1)
    atts = [Attribution("t1", -2.0, 0.0, "exact")]
    report = time_channel_report(ctx, atts, tensor)
    by_bucket = {c.lookback: c for c in report.time_channels}
    assert by_bucket["20-30"].negative == pytest.approx(2.0)
    assert by_bucket["20-30"].positive == 0.0
    assert sum(c.positive + c.negative for c in report.time_channels) == pytest.approx(2.0)


def test_time_channels_top5_excludes_smallest():
    records = [crossing_record(f"t{i}", 5 * 600 + 50 + i * 40) for i in range(6)]
    store, tensor, predictor = game_setup(records)
    ctx = grid_game(tensor, store, predictor, (1, 1), 5, 1)
    atts = [Attribution(f"t{i}", float(6 - i), 0.0, "exact") for i in range(6)]
    report = time_channel_report(ctx, atts, tensor)
    assert len(report.top) == 5
    assert [a.player for a in report.top] == [f"t{i}" for i in range(5)]
    assert sum(c.positive for c in report.time_channels) == pytest.approx(
        sum(a.phi for a in report.top)
    )


def test_time_channels_tie_break_by_trip_id():
    records = [crossing_record(f"t{i}", 5 * 600 + 50 + i * 40) for i in range(6)]
    store, tensor, predictor = game_setup(records)
    ctx = grid_game(tensor, store, predictor, (1, 1), 5, 1)
    atts = [Attribution(f"t{i}", 1.0, 0.0, "exact") for i in range(6)]
    report = time_channel_report(ctx, atts, tensor)
    assert [a.player for a in report.top] == ["t0", "t1", "t2", "t3", "t4"]


# ---------------------------------------------------------------- glyphs

def test_glyph_points_sum_cluster_inflow():
    partition = strip_partition(GRID13, 3)
    tensor = demo_tensor()
    predictor = train(PredictorSpec("persistence"), tensor, range(10))
    engine = ExplainEngine(tensor, TrajectoryStore([], None), partition, predictor,
                           ZeroMasker(tensor))
    glyphs = engine.glyphs(5, horizons=6, interpreted_horizon=2)
    assert len(glyphs) == 3
    for g in glyphs:
        want = float(tensor.inflow[5, 0, g.cluster])  # persistence repeats the base frame
        assert g.forecast_points == [pytest.approx(want)] * 5
        assert g.highlighted_horizon == 2
        total = sum(s.positive - s.negative for s in g.sectors)
        atts, degenerate = engine.cluster_attributions(g.cluster, 5, 2)
        assert not degenerate
        assert total == pytest.approx(sum(a.phi for a in atts), abs=1e-9)


def test_glyph_uniform_frame_over_four_cell_cluster():
    # uniform predicted inflow of 1 over a 4-cell cluster sums to 4 per point
    grid = GridSpec(bbox=(0.0, 0.0, 0.04, 0.01), rows=1, cols=4)
    partition = strip_partition(grid, 1)
    ones = np.ones((10, 1, 4), dtype=int)
    tensor = tensor_from_arrays(grid, ones, ones)
    predictor = train(PredictorSpec("persistence"), tensor, range(10))
    from flowshap.predict import rolling_forecast

    forecast = rolling_forecast(predictor, tensor, 5, 5)
    glyphs = glyph_summaries(partition, forecast, {0: None})
    assert glyphs[0].forecast_points == [pytest.approx(4.0)] * 5


def test_glyphs_require_five_horizons():
    partition = strip_partition(GRID13, 3)
    tensor = demo_tensor()
    predictor = train(PredictorSpec("persistence"), tensor, range(10))
    from flowshap.predict import rolling_forecast

    forecast = rolling_forecast(predictor, tensor, 5, 3)
    with pytest.raises(Exception):
        glyph_summaries(partition, forecast, {0: [], 1: [], 2: []})


def test_degenerate_cluster_glyph_marked():
    partition = strip_partition(GRID13, 1)
    tensor = demo_tensor()
    predictor = train(PredictorSpec("persistence"), tensor, range(10))
    engine = ExplainEngine(tensor, TrajectoryStore([], None), partition, predictor,
                           ZeroMasker(tensor))
    glyphs = engine.glyphs(5, horizons=6, interpreted_horizon=2)
    assert glyphs[0].degenerate
    assert all(s.positive == 0.0 and s.negative == 0.0 for s in glyphs[0].sectors)
