"""Pluggable next-frame flow prediction and closed-loop multi-step rollout.

Three baselines share one contract: a 5-frame input window maps to the next
frame. Persistence repeats the last frame, historical-average returns the
mean of the same time slot in prior periods, and ridge applies a fitted
linear map per cluster group (the target cluster plus its Voronoi
neighbors). Negative raw outputs are clamped to zero and counted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, InputError, StateError
from .partition import ClusterPartition
from .trajdata import FlowTensor

WINDOW_LENGTH = 5
PREDICTOR_KINDS = ("persistence", "historical_average", "ridge")
DEFAULT_HA_PERIOD = 1008  # one week of 10-minute slots
MODEL_MAGIC = b"TPRM"
MODEL_VERSION = 1


def _index_arrays(cells: list[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    rows = np.array([c[0] for c in cells], dtype=int)
    cols = np.array([c[1] for c in cells], dtype=int)
    return rows, cols


@dataclass(frozen=True)
class FlowFrame:
    """One interval slice of the flow raster, real-valued to admit model output."""

    inflow: np.ndarray  # (rows, cols) float64
    outflow: np.ndarray

    def __post_init__(self):
        if self.inflow.shape != self.outflow.shape or self.inflow.ndim != 2:
            raise InputError("frame inflow/outflow must be matching 2-d matrices")
        if not (np.isfinite(self.inflow).all() and np.isfinite(self.outflow).all()):
            raise InputError("frame values must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.inflow.shape

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "FlowFrame":
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols)))


def frame_at(tensor: FlowTensor, interval: int) -> FlowFrame:
    if not (0 <= interval < tensor.n_intervals):
        raise InputError(f"interval {interval} outside tensor range 0..{tensor.n_intervals - 1}")
    return FlowFrame(tensor.inflow[interval].astype(float), tensor.outflow[interval].astype(float))


def window_at(tensor: FlowTensor, base_interval: int) -> list[FlowFrame]:
    """The 5 observed frames ending at base_interval."""
    if base_interval < WINDOW_LENGTH - 1:
        raise InputError(
            f"base interval {base_interval} needs at least {WINDOW_LENGTH - 1} predecessors"
        )
    return [frame_at(tensor, i) for i in range(base_interval - WINDOW_LENGTH + 1, base_interval + 1)]


@dataclass(frozen=True)
class PredictorSpec:
    kind: str
    ridge_lambda: float = 1.0
    period_intervals: int = DEFAULT_HA_PERIOD

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ConfigError(f"unknown predictor kind {self.kind!r}; expected one of {PREDICTOR_KINDS}")
        if not np.isfinite(self.ridge_lambda) or self.ridge_lambda < 0:
            raise ConfigError(f"ridge_lambda must be finite and >= 0, got {self.ridge_lambda}")
        if self.period_intervals < 1:
            raise ConfigError(f"period_intervals must be >= 1, got {self.period_intervals}")


@dataclass
class Forecast:
    """Closed-loop rollout: frames for horizons 1..H past base_interval."""

    base_interval: int
    frames: list[FlowFrame]
    clamped: int = 0

    @property
    def horizons(self) -> int:
        return len(self.frames)


class TrainedPredictor:
    """Shared contract: step() maps a 5-frame window to the next frame."""

    kind: str = ""

    def step(self, window: list[FlowFrame], target_interval: int | None) -> tuple[FlowFrame, int]:
        raise NotImplementedError

    def input_locality(self, cell: tuple[int, int]) -> set[tuple[int, int]]:
        """Cells whose window values can influence the prediction at `cell`."""
        raise NotImplementedError

    def _check_window(self, window: list[FlowFrame]) -> None:
        if len(window) != WINDOW_LENGTH:
            raise InputError(f"window must hold exactly {WINDOW_LENGTH} frames, got {len(window)}")
        shape = window[0].shape
        if any(f.shape != shape for f in window):
            raise InputError("window frames disagree in shape")


class PersistencePredictor(TrainedPredictor):
    kind = "persistence"

    def __init__(self, spec: PredictorSpec):
        self.spec = spec

    def step(self, window, target_interval=None):
        self._check_window(window)
        return window[-1], 0

    def input_locality(self, cell):
        return {cell}


class HistoricalAveragePredictor(TrainedPredictor):
    """Mean of the same slot in prior periods, persistence when none exist."""

    kind = "historical_average"

    def __init__(self, spec: PredictorSpec, tensor: FlowTensor, train_range: set[int]):
        self.spec = spec
        self.tensor = tensor
        self.train_range = train_range

    def step(self, window, target_interval=None):
        self._check_window(window)
        if target_interval is None:
            return window[-1], 0
        period = self.spec.period_intervals
        samples_in = []
        samples_out = []
        i = target_interval - period
        while i >= 0:
            if i in self.train_range and i < self.tensor.n_intervals:
                samples_in.append(self.tensor.inflow[i])
                samples_out.append(self.tensor.outflow[i])
            i -= period
        if not samples_in:
            return window[-1], 0
        frame = FlowFrame(
            np.mean(np.stack(samples_in), axis=0).astype(float),
            np.mean(np.stack(samples_out), axis=0).astype(float),
        )
        return frame, 0

    def input_locality(self, cell):
        return {cell}


class RidgePredictor(TrainedPredictor):
    """One linear map per cluster over the flattened window of its cell group.

    The group of cluster c is c's cells plus the cells of its Voronoi
    neighbors; the flattened input is ordered frame-major, then channel
    (inflow, outflow), then cells sorted by (row, col). No intercept, so
    lambda -> inf drives predictions to the zero frame.
    """

    kind = "ridge"

    def __init__(self, spec: PredictorSpec, partition: ClusterPartition,
                 weights: dict[int, np.ndarray] | None = None):
        self.spec = spec
        self.partition = partition
        self.weights = weights
        self.cluster_cells = {c: sorted(partition.cluster_cells(c)) for c in range(partition.k)}
        self.group_cells = {
            c: sorted(
                set(self.cluster_cells[c]).union(
                    *[self.cluster_cells[n] for n in partition.neighbors(c)]
                )
            )
            for c in range(partition.k)
        }
        self._cluster_idx = {c: _index_arrays(cells) for c, cells in self.cluster_cells.items()}
        self._group_idx = {c: _index_arrays(cells) for c, cells in self.group_cells.items()}
        # flat gather indices into the stacked window vector used by step();
        # layout matches flatten_window: frame-major, inflow then outflow,
        # cells row-major
        n = partition.grid.rows * partition.grid.cols
        cols = partition.grid.cols
        self._group_flat_idx = {}
        for c, cells in self.group_cells.items():
            flat = np.array([r * cols + col for r, col in cells], dtype=int)
            self._group_flat_idx[c] = np.concatenate(
                [j * 2 * n + ch * n + flat for j in range(WINDOW_LENGTH) for ch in (0, 1)]
            ) if cells else np.empty(0, dtype=int)

    def flatten_window(self, window: list[FlowFrame], cluster: int) -> np.ndarray:
        rows, cols = self._group_idx[cluster]
        parts = []
        for frame in window:
            parts.append(frame.inflow[rows, cols])
            parts.append(frame.outflow[rows, cols])
        return np.concatenate(parts)

    def flatten_target(self, frame: FlowFrame, cluster: int) -> np.ndarray:
        rows, cols = self._cluster_idx[cluster]
        return np.concatenate([frame.inflow[rows, cols], frame.outflow[rows, cols]])

    def step(self, window, target_interval=None):
        self._check_window(window)
        if self.weights is None:
            raise StateError("ridge predictor used before training")
        shape = window[0].shape
        grid = self.partition.grid
        if shape != (grid.rows, grid.cols):
            raise InputError(
                f"window shape {shape} does not match the {grid.rows}x{grid.cols} grid"
            )
        n = shape[0] * shape[1]
        stacked = np.empty(WINDOW_LENGTH * 2 * n)
        for j, frame in enumerate(window):
            stacked[j * 2 * n:j * 2 * n + n] = frame.inflow.ravel()
            stacked[j * 2 * n + n:(j + 1) * 2 * n] = frame.outflow.ravel()
        inflow = np.zeros(shape)
        outflow = np.zeros(shape)
        for c in range(self.partition.k):
            rows, cols = self._cluster_idx[c]
            m = rows.size
            if m == 0:
                continue
            y = self.weights[c] @ stacked[self._group_flat_idx[c]]
            inflow[rows, cols] = y[:m]
            outflow[rows, cols] = y[m:]
        clamped = int((inflow < 0).sum() + (outflow < 0).sum())
        return FlowFrame(np.maximum(inflow, 0.0), np.maximum(outflow, 0.0)), clamped

    def input_locality(self, cell):
        cid = int(self.partition.grid_assignment[cell[0], cell[1]])
        return set(self.group_cells[cid])

    def save(self, path) -> None:
        if self.weights is None:
            raise StateError("cannot save an untrained ridge predictor")
        grid = self.partition.grid
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIIII", MODEL_MAGIC, MODEL_VERSION,
                                 self.partition.k, grid.rows, grid.cols))
            fh.write(struct.pack("<d", self.spec.ridge_lambda))
            for c in range(self.partition.k):
                w = np.ascontiguousarray(self.weights[c], dtype="<f8")
                fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
                fh.write(w.tobytes())

    @classmethod
    def load(cls, path, partition: ClusterPartition) -> "RidgePredictor":
        raw = Path(path).read_bytes()
        if len(raw) < 20:
            raise DataFormatError(f"{path}: truncated model file")
        magic, version, k, rows, cols = struct.unpack("<4sIIII", raw[:20])
        if magic != MODEL_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        if version != MODEL_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        if k != partition.k or rows != partition.grid.rows or cols != partition.grid.cols:
            raise DataFormatError(f"{path}: model does not match the partition")
        (lam,) = struct.unpack_from("<d", raw, 20)
        spec = PredictorSpec(kind="ridge", ridge_lambda=lam)
        predictor = cls(spec, partition)
        offset = 28
        weights = {}
        for c in range(k):
            n_out, n_in = struct.unpack_from("<II", raw, offset)
            offset += 8
            w = np.frombuffer(raw, dtype="<f8", count=n_out * n_in, offset=offset)
            offset += 8 * n_out * n_in
            expected = (2 * len(predictor.cluster_cells[c]),
                        2 * WINDOW_LENGTH * len(predictor.group_cells[c]))
            if (n_out, n_in) != expected:
                raise DataFormatError(f"{path}: cluster {c} weight shape mismatch")
            weights[c] = w.reshape(n_out, n_in).copy()
        predictor.weights = weights
        return predictor


def train(
    spec: PredictorSpec,
    tensor: FlowTensor,
    train_range,
    partition: ClusterPartition | None = None,
) -> TrainedPredictor:
    """Fit (or record) a predictor on the given interval indices.

    `train_range` is any iterable of interval indices; ridge uses every
    window whose 6 consecutive indices all belong to it, so disjoint blocks
    are allowed. Ridge requires the cluster partition.
    """
    indices = sorted(set(int(i) for i in train_range))
    if any(i < 0 or i >= tensor.n_intervals for i in indices):
        raise ConfigError("train_range indices outside the tensor")
    if spec.kind == "persistence":
        return PersistencePredictor(spec)
    if spec.kind == "historical_average":
        if not indices:
            raise ConfigError("historical_average needs a non-empty train_range")
        return HistoricalAveragePredictor(spec, tensor, set(indices))
    if partition is None:
        raise ConfigError("ridge training requires a cluster partition")
    index_set = set(indices)
    ends = [
        t
        for t in indices
        if all(t - j in index_set for j in range(WINDOW_LENGTH)) and (t + 1) in index_set
    ]
    if not ends:
        raise ConfigError(
            f"ridge needs at least {WINDOW_LENGTH + 1} consecutive intervals in train_range"
        )
    predictor = RidgePredictor(spec, partition)
    windows = [window_at(tensor, t) for t in ends]
    targets = [frame_at(tensor, t + 1) for t in ends]
    weights: dict[int, np.ndarray] = {}
    for c in range(partition.k):
        if not predictor.cluster_cells[c]:
            weights[c] = np.zeros((0, 2 * WINDOW_LENGTH * len(predictor.group_cells[c])))
            continue
        x = np.stack([predictor.flatten_window(w, c) for w in windows])
        y = np.stack([predictor.flatten_target(t, c) for t in targets])
        if spec.ridge_lambda == 0.0:
            w, *_ = np.linalg.lstsq(x, y, rcond=None)
        else:
            gram = x.T @ x + spec.ridge_lambda * np.eye(x.shape[1])
            w = np.linalg.solve(gram, x.T @ y)
        # C-contiguous so in-memory and file-loaded weights take the same BLAS path
        weights[c] = np.ascontiguousarray(w.T)
    predictor.weights = weights
    return predictor


def predict_next(
    predictor: TrainedPredictor,
    window: list[FlowFrame],
    target_interval: int | None = None,
) -> FlowFrame:
    """One-step prediction from a 5-frame window (clamped at zero)."""
    frame, _ = predictor.step(window, target_interval)
    return frame


def rollout_from_window(
    predictor: TrainedPredictor,
    window: list[FlowFrame],
    base_interval: int,
    horizons: int,
) -> Forecast:
    """Closed-loop rollout: later horizons consume earlier predictions."""
    if horizons < 1:
        raise ConfigError(f"horizons must be >= 1, got {horizons}")
    if len(window) != WINDOW_LENGTH:
        raise InputError(f"window must hold exactly {WINDOW_LENGTH} frames")
    frames: list[FlowFrame] = []
    clamped = 0
    current = list(window)
    for h in range(1, horizons + 1):
        frame, n_clamped = predictor.step(current, base_interval + h)
        frames.append(frame)
        clamped += n_clamped
        current = current[1:] + [frame]
    return Forecast(base_interval=base_interval, frames=frames, clamped=clamped)


def rolling_forecast(
    predictor: TrainedPredictor,
    tensor: FlowTensor,
    base_interval: int,
    horizons: int,
) -> Forecast:
    """Rollout starting from the observed window ending at base_interval."""
    return rollout_from_window(predictor, window_at(tensor, base_interval), base_interval, horizons)
