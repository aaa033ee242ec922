"""Shapley attribution of flow predictions.

Two game families share one estimator pair. Region games attribute a
cluster's predicted in-flow to its Voronoi-neighbor clusters by masking the
input window of absent neighbors with a baseline; trajectory games attribute
a grid cell's prediction to individual trips by re-rasterizing the input
window from coalition members only. Values are exact for small player sets
(full 2^n enumeration) and permutation-sampled above the cap.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CapacityError, ConfigError, DegenerateGameError, InputError
from .partition import ClusterPartition
from .predict import (
    FlowFrame,
    Forecast,
    TrainedPredictor,
    WINDOW_LENGTH,
    rollout_from_window,
    window_at,
)
from .trajdata import (
    FlowTensor,
    TrajectoryRecord,
    TrajectoryStore,
    _grid_path,
    rasterize_window,
)

EXACT_PLAYER_LIMIT = 20
DEFAULT_EXACT_THRESHOLD = 12
DEFAULT_MC_PERMUTATIONS = 200
DEFAULT_CANDIDATE_CAP = 12
SECTOR_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
LOOKBACK_BUCKETS = ("0-10", "10-20", "20-30", "30-40", "40-50")


@dataclass(frozen=True)
class Attribution:
    player: str
    phi: float
    stderr: float
    method: str  # "exact" | "monte_carlo"

    def __post_init__(self):
        if self.method == "exact" and self.stderr != 0.0:
            raise InputError("exact attributions must carry stderr 0")
        if self.stderr < 0.0:
            raise InputError("stderr must be >= 0")


class CoalitionGame:
    """Players plus a total value function over coalitions.

    Coalitions are bitmasks over player indices. value(0) is evaluated once
    at construction as the baseline; later calls go through the counter so
    estimator work is measurable.
    """

    def __init__(self, players: list[str], value_fn: Callable[[int], float]):
        if not players:
            raise DegenerateGameError("a game needs at least one player")
        self.players = list(players)
        self.n = len(players)
        self._value_fn = value_fn
        self.eval_count = 0
        self.baseline = float(value_fn(0))
        if not math.isfinite(self.baseline):
            raise InputError("game baseline value(empty) must be finite")

    def value(self, mask: int) -> float:
        self.eval_count += 1
        return float(self._value_fn(mask))

    def full_mask(self) -> int:
        return (1 << self.n) - 1


def game_from_table(players: list[str], table) -> CoalitionGame:
    """Game backed by a dense table indexed by coalition bitmask."""
    table = np.asarray(table, dtype=float)
    if table.shape != (1 << len(players),):
        raise InputError(f"table must have 2^{len(players)} entries")
    return CoalitionGame(players, lambda mask: table[mask])


def _popcounts(n: int) -> np.ndarray:
    pc = np.zeros(1, dtype=np.int64)
    for _ in range(n):
        pc = np.concatenate([pc, pc + 1])
    return pc


def shapley_exact(game: CoalitionGame) -> list[Attribution]:
    """Exact Shapley values by full subset enumeration (2^n evaluations).

    phi_i = sum over S not containing i of |S|!(n-|S|-1)!/n! * (v(S+i) - v(S));
    the efficiency identity sum(phi) = v(N) - v(empty) holds to float noise.
    """
    n = game.n
    if n > EXACT_PLAYER_LIMIT:
        raise CapacityError(
            f"exact enumeration capped at {EXACT_PLAYER_LIMIT} players (got {n}); use shapley_mc"
        )
    size = 1 << n
    values = np.empty(size)
    for mask in range(size):
        values[mask] = game.value(mask)
    fact = [math.factorial(i) for i in range(n + 1)]
    weight_by_size = np.array(
        [fact[s] * fact[n - s - 1] / fact[n] for s in range(n)]
    )
    pc = _popcounts(n)
    masks = np.arange(size)
    out = []
    for i in range(n):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        w = weight_by_size[pc[without]]
        phi = float(np.dot(w, values[without | bit] - values[without]))
        out.append(Attribution(player=game.players[i], phi=phi, stderr=0.0, method="exact"))
    return out


def shapley_mc(game: CoalitionGame, permutations: int, seed: int) -> list[Attribution]:
    """Permutation-sampling estimate: mean marginal contribution over M orders.

    Each permutation telescopes to v(N) - v(empty), so efficiency holds for
    the estimate exactly. stderr is the sample standard deviation of a
    player's marginals over the M permutations divided by sqrt(M) (zero when
    M = 1). Exactly M * n value evaluations are performed.
    """
    if permutations < 1:
        raise ConfigError(f"permutations must be >= 1, got {permutations}")
    n = game.n
    rng = np.random.default_rng(seed)
    sums = np.zeros(n)
    squares = np.zeros(n)
    for _ in range(permutations):
        order = rng.permutation(n)
        prev = game.baseline
        mask = 0
        for i in order:
            mask |= 1 << int(i)
            cur = game.value(mask)
            marginal = cur - prev
            sums[i] += marginal
            squares[i] += marginal * marginal
            prev = cur
    phi = sums / permutations
    if permutations > 1:
        var = np.maximum(squares - permutations * phi * phi, 0.0) / (permutations - 1)
        stderr = np.sqrt(var / permutations)
    else:
        stderr = np.zeros(n)
    return [
        Attribution(player=game.players[i], phi=float(phi[i]), stderr=float(stderr[i]),
                    method="monte_carlo")
        for i in range(n)
    ]


def attribute(
    game: CoalitionGame,
    seed: int,
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD,
    mc_permutations: int = DEFAULT_MC_PERMUTATIONS,
) -> list[Attribution]:
    """Exact enumeration up to the threshold, permutation sampling beyond."""
    if game.n <= exact_threshold:
        return shapley_exact(game)
    return shapley_mc(game, mc_permutations, seed)


def derive_seed(root_seed: int, *parts) -> int:
    """Stable per-query seed so repeated requests sample identically."""
    text = ":".join([str(root_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class ZeroMasker:
    """Absent regions contribute zero flows."""

    name = "zero"

    def __init__(self, tensor: FlowTensor):
        self.shape = (tensor.grid.rows, tensor.grid.cols)

    def baseline(self, interval: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.shape), np.zeros(self.shape)


class HistoricalMeanMasker:
    """Absent regions fall back to their historical mean at the time-of-day slot.

    Sampled over training intervals strictly before the masked interval;
    when the slot is unseen there, the per-cell mean over the earlier part
    of the training range (or the whole range as a last resort) is used.
    """

    name = "historical_mean"

    def __init__(self, tensor: FlowTensor, train_range):
        self.tensor = tensor
        self.train_intervals = sorted(set(int(i) for i in train_range))
        if not self.train_intervals:
            raise ConfigError("masker needs a non-empty train_range")
        self.slots_per_day = max(1, 86400 // tensor.interval_seconds)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _slot(self, interval: int) -> int:
        return (interval + self.tensor.t0 // self.tensor.interval_seconds) % self.slots_per_day

    def baseline(self, interval: int) -> tuple[np.ndarray, np.ndarray]:
        if interval in self._cache:
            return self._cache[interval]
        slot = self._slot(interval)
        same_slot = [
            i for i in self.train_intervals if i < interval and self._slot(i) == slot
        ]
        pool = same_slot or [i for i in self.train_intervals if i < interval] or self.train_intervals
        idx = np.array(pool)
        result = (
            self.tensor.inflow[idx].mean(axis=0).astype(float),
            self.tensor.outflow[idx].mean(axis=0).astype(float),
        )
        self._cache[interval] = result
        return result


def cluster_game(
    tensor: FlowTensor,
    partition: ClusterPartition,
    predictor: TrainedPredictor,
    cluster: int,
    base_interval: int,
    horizon: int,
    masker,
    target: str = "inflow",
) -> CoalitionGame:
    """Attribution game for one cluster's predicted flow at one horizon.

    Players are the cluster's Voronoi neighbors. v(S) is the total predicted
    flow over the cluster's cells at the horizon when the input-window flows
    of every neighbor NOT in S are replaced by the masker baseline; the
    cluster's own cells and non-neighbor cells stay observed.
    """
    if not (0 <= cluster < partition.k):
        raise InputError(f"unknown cluster {cluster}")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if target not in ("inflow", "outflow"):
        raise ConfigError(f"target must be inflow or outflow, got {target!r}")
    neighbors = partition.neighbors(cluster)
    if not neighbors:
        raise DegenerateGameError(f"cluster {cluster} has no neighbors")

    window = window_at(tensor, base_interval)
    own_cells = partition.cluster_cells(cluster)
    own_rows = np.array([c[0] for c in own_cells], dtype=int)
    own_cols = np.array([c[1] for c in own_cells], dtype=int)
    neighbor_masks = []
    for nbr in neighbors:
        sel = partition.grid_assignment == nbr
        neighbor_masks.append(sel)
    baselines = [
        masker.baseline(base_interval - WINDOW_LENGTH + 1 + j) for j in range(WINDOW_LENGTH)
    ]

    def value(mask: int) -> float:
        frames = []
        for j, frame in enumerate(window):
            inflow = frame.inflow.copy()
            outflow = frame.outflow.copy()
            for p, sel in enumerate(neighbor_masks):
                if mask & (1 << p):
                    continue  # present: keep observed flows
                inflow[sel] = baselines[j][0][sel]
                outflow[sel] = baselines[j][1][sel]
            frames.append(FlowFrame(inflow, outflow))
        forecast = rollout_from_window(predictor, frames, base_interval, horizon)
        out = forecast.frames[horizon - 1]
        values = out.inflow if target == "inflow" else out.outflow
        return float(values[own_rows, own_cols].sum())

    return CoalitionGame([str(n) for n in neighbors], value)


@dataclass
class CandidateTrajectory:
    trip_id: str
    event_count: int
    last_event_t: float
    window_inflow: np.ndarray  # (5, rows, cols) contribution of this trip alone
    window_outflow: np.ndarray


@dataclass
class GridGameContext:
    """Trajectory-attribution game plus the candidate metadata reports need."""

    cell: tuple[int, int]
    base_interval: int
    horizon: int
    candidates: list[CandidateTrajectory]
    game: CoalitionGame | None  # None when there are no candidates


def grid_game(
    tensor: FlowTensor,
    store: TrajectoryStore,
    predictor: TrainedPredictor,
    cell: tuple[int, int],
    base_interval: int,
    horizon: int,
    candidate_cap: int = DEFAULT_CANDIDATE_CAP,
    target: str = "inflow",
) -> GridGameContext:
    """Attribution game for one cell's prediction over individual trips.

    Candidates are trips with at least one crossing event in the predictor's
    input locality during the 5-frame window, ranked by event count (ties by
    trip id) and capped. v(S) re-rasterizes the window with non-candidates
    plus the coalition; rasterization is additive per trip, so coalition
    windows are composed from per-trip contributions.
    """
    grid = tensor.grid
    if not (0 <= cell[0] < grid.rows and 0 <= cell[1] < grid.cols):
        raise InputError(f"cell {cell} outside the {grid.rows}x{grid.cols} grid")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if candidate_cap < 1:
        raise ConfigError(f"candidate_cap must be >= 1, got {candidate_cap}")
    window = window_at(tensor, base_interval)
    first_interval = base_interval - WINDOW_LENGTH + 1
    locality = predictor.input_locality(cell)
    loc_rows = np.array([c[0] for c in sorted(locality)], dtype=int)
    loc_cols = np.array([c[1] for c in sorted(locality)], dtype=int)

    window_start = tensor.interval_start(first_interval)
    window_end = tensor.interval_start(base_interval + 1)

    candidates: list[CandidateTrajectory] = []
    for record in store.records:
        # cheap time prefilter before rasterizing the single trip
        if record.points[-1, 0] < window_start or record.points[0, 0] >= window_end:
            continue
        w_in, w_out = rasterize_window(
            [record], grid, tensor.interval_seconds, tensor.t0, first_interval, WINDOW_LENGTH
        )
        events = int(w_in[:, loc_rows, loc_cols].sum() + w_out[:, loc_rows, loc_cols].sum())
        if events < 1:
            continue
        last_t = _last_locality_event_time(record, tensor, locality, window_start, window_end)
        candidates.append(CandidateTrajectory(record.trip_id, events, last_t, w_in, w_out))

    candidates.sort(key=lambda c: (-c.event_count, c.trip_id))
    candidates = candidates[:candidate_cap]
    if not candidates:
        return GridGameContext(cell, base_interval, horizon, [], None)

    full_in = np.stack([f.inflow for f in window])
    full_out = np.stack([f.outflow for f in window])
    base_in = full_in - sum(c.window_inflow for c in candidates)
    base_out = full_out - sum(c.window_outflow for c in candidates)
    row, col = cell

    def value(mask: int) -> float:
        w_in = base_in.copy()
        w_out = base_out.copy()
        for p, cand in enumerate(candidates):
            if mask & (1 << p):
                w_in += cand.window_inflow
                w_out += cand.window_outflow
        frames = [FlowFrame(w_in[j], w_out[j]) for j in range(WINDOW_LENGTH)]
        forecast = rollout_from_window(predictor, frames, base_interval, horizon)
        out = forecast.frames[horizon - 1]
        values = out.inflow if target == "inflow" else out.outflow
        return float(values[row, col])

    game = CoalitionGame([c.trip_id for c in candidates], value)
    return GridGameContext(cell, base_interval, horizon, candidates, game)


def _last_locality_event_time(
    record: TrajectoryRecord,
    tensor: FlowTensor,
    locality: set[tuple[int, int]],
    window_start: float,
    window_end: float,
) -> float:
    """Time of the trip's last crossing event touching the locality in the window."""
    visits = _grid_path(record.points, tensor.grid)
    last = -math.inf
    for (cell_a, _, _), (cell_b, enter_b, _) in zip(visits[:-1], visits[1:]):
        if not (window_start <= enter_b < window_end):
            continue
        if (cell_a in locality) or (cell_b in locality):
            last = max(last, enter_b)
    return last


@dataclass
class SectorSummary:
    direction: str
    positive: float
    negative: float


@dataclass
class GlyphSummary:
    cluster: int
    forecast_points: list[float]  # total predicted inflow at +1..+5 intervals
    highlighted_horizon: int  # 1-based horizon; 2 = +20 minutes
    sectors: list[SectorSummary]
    degenerate: bool = False


def sector_summary(
    attributions: list[Attribution],
    partition: ClusterPartition,
    cluster: int,
) -> list[SectorSummary]:
    """Fold neighbor attributions into 8 compass sectors around the cluster.

    Bearings run from the cluster's centroid to each neighbor's centroid
    (0 = north, clockwise). Positive and negative phi accumulate separately
    so opposing contributions in one sector stay visible.
    """
    pos = np.zeros(8)
    neg = np.zeros(8)
    cx, cy = partition.centroids[cluster]
    for att in attributions:
        nbr = int(att.player)
        nx, ny = partition.centroids[nbr]
        dx, dy = nx - cx, ny - cy
        if dx == 0.0 and dy == 0.0:
            warnings.warn(f"cluster {nbr} centroid coincides with cluster {cluster}; using sector N")
            sector = 0
        else:
            bearing = math.degrees(math.atan2(dx, dy)) % 360.0
            sector = int(round(bearing / 45.0)) % 8
        if att.phi >= 0:
            pos[sector] += att.phi
        else:
            neg[sector] += -att.phi
    return [
        SectorSummary(SECTOR_NAMES[i], float(pos[i]), float(neg[i])) for i in range(8)
    ]


@dataclass
class TimeChannel:
    lookback: str  # "0-10" .. "40-50" minutes before the window end
    positive: float
    negative: float


@dataclass
class TrajectoryAttributionReport:
    cell: tuple[int, int]
    horizon: int
    top: list[Attribution]  # at most 5, by |phi| descending
    time_channels: list[TimeChannel]
    n_candidates: int = 0


def time_channel_report(
    context: GridGameContext,
    attributions: list[Attribution],
    tensor: FlowTensor,
) -> TrajectoryAttributionReport:
    """Top-5 trips by |phi| plus their attribution folded into lookback buckets.

    Each top trip lands in the 10-minute bucket of its last crossing event
    before the window end; positive and negative phi sum separately per
    bucket, so the bucket totals reconcile with the listed trips.
    """
    by_trip = {c.trip_id: c for c in context.candidates}
    ranked = sorted(attributions, key=lambda a: (-abs(a.phi), a.player))
    top = ranked[:5]
    window_end = tensor.interval_start(context.base_interval + 1)
    pos = np.zeros(len(LOOKBACK_BUCKETS))
    neg = np.zeros(len(LOOKBACK_BUCKETS))
    for att in top:
        cand = by_trip[att.player]
        lookback = window_end - cand.last_event_t
        bucket = min(len(LOOKBACK_BUCKETS) - 1, max(0, int(lookback // 600)))
        if att.phi >= 0:
            pos[bucket] += att.phi
        else:
            neg[bucket] += -att.phi
    channels = [
        TimeChannel(LOOKBACK_BUCKETS[i], float(pos[i]), float(neg[i]))
        for i in range(len(LOOKBACK_BUCKETS))
    ]
    return TrajectoryAttributionReport(
        cell=context.cell,
        horizon=context.horizon,
        top=top,
        time_channels=channels,
        n_candidates=len(context.candidates),
    )


def glyph_summaries(
    partition: ClusterPartition,
    forecast: Forecast,
    attributions_by_cluster: dict[int, list[Attribution] | None],
    highlighted_horizon: int = 2,
) -> list[GlyphSummary]:
    """One radar-glyph summary per cluster from a shared forecast.

    forecast_points[i] is the cluster's total predicted inflow at horizon
    i+1; five points cover the next 50 minutes. attributions_by_cluster maps
    cluster id to its neighbor attributions, or None for degenerate
    (neighborless) clusters.
    """
    if forecast.horizons < 5:
        raise ConfigError(f"glyphs need a forecast with >= 5 horizons, got {forecast.horizons}")
    out = []
    for cluster in range(partition.k):
        cells = partition.cluster_cells(cluster)
        points = []
        for h in range(5):
            frame = forecast.frames[h]
            points.append(float(sum(frame.inflow[r, c] for r, c in cells)))
        atts = attributions_by_cluster.get(cluster)
        if atts is None:
            sectors = [SectorSummary(name, 0.0, 0.0) for name in SECTOR_NAMES]
            degenerate = True
        else:
            sectors = sector_summary(atts, partition, cluster)
            degenerate = False
        out.append(
            GlyphSummary(
                cluster=cluster,
                forecast_points=points,
                highlighted_horizon=highlighted_horizon,
                sectors=sectors,
                degenerate=degenerate,
            )
        )
    return out


@dataclass
class ExplainEngine:
    """Scenario-bound attribution entry points with stable seed derivation."""

    tensor: FlowTensor
    store: TrajectoryStore
    partition: ClusterPartition
    predictor: TrainedPredictor
    masker: object
    root_seed: int = 0
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD
    mc_permutations: int = DEFAULT_MC_PERMUTATIONS
    candidate_cap: int = DEFAULT_CANDIDATE_CAP
    target: str = "inflow"

    def forecast(self, base_interval: int, horizons: int) -> Forecast:
        from .predict import rolling_forecast

        return rolling_forecast(self.predictor, self.tensor, base_interval, horizons)

    def cluster_attributions(
        self, cluster: int, base_interval: int, horizon: int
    ) -> tuple[list[Attribution], bool]:
        """Neighbor attributions for a cluster; degenerate flag when it has none."""
        try:
            game = cluster_game(
                self.tensor, self.partition, self.predictor, cluster,
                base_interval, horizon, self.masker, self.target,
            )
        except DegenerateGameError:
            return [], True
        seed = derive_seed(self.root_seed, "cluster", cluster, base_interval, horizon)
        atts = attribute(game, seed, self.exact_threshold, self.mc_permutations)
        return sorted(atts, key=lambda a: int(a.player)), False

    def grid_report(
        self, cell: tuple[int, int], base_interval: int, horizon: int
    ) -> TrajectoryAttributionReport:
        context = grid_game(
            self.tensor, self.store, self.predictor, cell,
            base_interval, horizon, self.candidate_cap, self.target,
        )
        if context.game is None:
            return TrajectoryAttributionReport(
                cell=cell, horizon=horizon, top=[],
                time_channels=[TimeChannel(b, 0.0, 0.0) for b in LOOKBACK_BUCKETS],
                n_candidates=0,
            )
        seed = derive_seed(self.root_seed, "grid", cell[0], cell[1], base_interval, horizon)
        atts = attribute(context.game, seed, self.exact_threshold, self.mc_permutations)
        return time_channel_report(context, atts, self.tensor)

    def glyphs(self, base_interval: int, horizons: int, interpreted_horizon: int) -> list[GlyphSummary]:
        forecast = self.forecast(base_interval, max(horizons, 5))
        by_cluster: dict[int, list[Attribution] | None] = {}
        for cluster in range(self.partition.k):
            atts, degenerate = self.cluster_attributions(cluster, base_interval, interpreted_horizon)
            by_cluster[cluster] = None if degenerate else atts
        return glyph_summaries(self.partition, forecast, by_cluster, interpreted_horizon)
