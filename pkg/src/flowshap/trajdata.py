"""Trajectory ingestion and rasterization into grid flow tensors.

Each record is one trip: an ordered GPS trace. Traces are decomposed into
grid-cell visits by intersecting the straight segment between consecutive
fixes with the grid lines; border-crossing times are linearly interpolated
between the two fixes. Every cell-to-cell crossing increments the departed
cell's out-flow and the entered cell's in-flow in the 10-minute interval of
the crossing instant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, InputError
from .partition import GridSpec

TENSOR_MAGIC = b"TPFT"
TENSOR_VERSION = 1
DEFAULT_INTERVAL_SECONDS = 600

# crossings separated by less than this fraction of a segment are merged
# (a pass through a cell corner counts as one diagonal crossing)
_CORNER_EPS = 1e-12


@dataclass(frozen=True)
class TrajectoryRecord:
    """One trip: strictly time-ordered GPS fixes."""

    vehicle_id: str
    trip_id: str
    points: np.ndarray  # (n, 3) float64 columns: timestamp, lon, lat

    def __post_init__(self):
        pts = self.points
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise InputError(f"trip {self.trip_id}: points must be a non-empty (n, 3) array")
        if np.any(np.diff(pts[:, 0]) <= 0):
            raise InputError(f"trip {self.trip_id}: timestamps must be strictly increasing")
        if np.any(np.abs(pts[:, 1]) > 180.0) or np.any(np.abs(pts[:, 2]) > 90.0):
            raise InputError(f"trip {self.trip_id}: coordinates out of range")


@dataclass
class ParseSummary:
    data_lines: int = 0
    skipped: int = 0
    duplicate_timestamps: int = 0
    sample_bad_line: str | None = None


@dataclass
class TrajectoryStore:
    """All parsed records plus the tight time range of their points."""

    records: list[TrajectoryRecord]
    time_range: tuple[float, float] | None  # None for an empty store
    summary: ParseSummary = field(default_factory=ParseSummary)

    def __len__(self) -> int:
        return len(self.records)

    def by_trip(self) -> dict[str, TrajectoryRecord]:
        return {r.trip_id: r for r in self.records}


@dataclass(frozen=True)
class CellVisit:
    cell: tuple[int, int]
    enter_t: float
    exit_t: float


@dataclass
class RasterSummary:
    transitions: int = 0  # in-box cell-to-cell crossings applied
    box_entries: int = 0  # entries from outside the box applied
    box_exits: int = 0  # exits to outside the box applied
    dropped_out_of_time: int = 0  # events outside [t0, t0 + n*interval)
    records_without_cells: int = 0


@dataclass
class FlowTensor:
    """In/out crossing counts per cell per interval; immutable after build."""

    grid: GridSpec
    interval_seconds: int
    t0: int
    inflow: np.ndarray  # (n_intervals, rows, cols) uint32
    outflow: np.ndarray
    summary: RasterSummary = field(default_factory=RasterSummary)

    def __post_init__(self):
        if self.inflow.shape != self.outflow.shape:
            raise InputError("inflow and outflow must have identical dimensions")
        if self.inflow.shape[1:] != (self.grid.rows, self.grid.cols):
            raise InputError("tensor shape does not match the grid")
        if self.interval_seconds <= 0:
            raise ConfigError("interval_seconds must be positive")

    @property
    def n_intervals(self) -> int:
        return self.inflow.shape[0]

    def interval_of(self, t: float) -> int | None:
        i = int(np.floor((t - self.t0) / self.interval_seconds))
        return i if 0 <= i < self.n_intervals else None

    def interval_start(self, i: int) -> int:
        return self.t0 + i * self.interval_seconds

    def save(self, path) -> None:
        header = struct.pack(
            "<4sIIIIIq",
            TENSOR_MAGIC,
            TENSOR_VERSION,
            self.grid.rows,
            self.grid.cols,
            self.n_intervals,
            self.interval_seconds,
            self.t0,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.inflow, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(self.outflow, dtype="<u4").tobytes())

    @classmethod
    def load(cls, path, grid: GridSpec | None = None) -> "FlowTensor":
        """Read the flat binary format; bbox comes from `grid` when given.

        The file stores only the raster dimensions, so a caller who needs
        geographic placement must supply the GridSpec it was built with.
        """
        raw = Path(path).read_bytes()
        if len(raw) < 32:
            raise DataFormatError(f"{path}: truncated tensor file")
        magic, version, rows, cols, n_intervals, interval_seconds, t0 = struct.unpack(
            "<4sIIIIIq", raw[:32]
        )
        if magic != TENSOR_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        if version != TENSOR_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        count = n_intervals * rows * cols
        expected = 32 + 2 * 4 * count
        if len(raw) != expected:
            raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
        if grid is None:
            grid = GridSpec((0.0, 0.0, float(cols), float(rows)), rows=rows, cols=cols)
        elif grid.rows != rows or grid.cols != cols:
            raise DataFormatError(
                f"{path}: file raster {rows}x{cols} does not match grid {grid.rows}x{grid.cols}"
            )
        inflow = np.frombuffer(raw, dtype="<u4", count=count, offset=32).reshape(
            n_intervals, rows, cols
        )
        outflow = np.frombuffer(raw, dtype="<u4", count=count, offset=32 + 4 * count).reshape(
            n_intervals, rows, cols
        )
        return cls(grid, interval_seconds, t0, inflow.copy(), outflow.copy())


def parse_trajectories(source) -> TrajectoryStore:
    """Parse `driver_id,order_id,timestamp,lon,lat` lines into a store.

    Lines are grouped by order id (one record per trip) and sorted by
    timestamp. Malformed lines are counted and skipped; a leading header
    line (non-numeric timestamp) is skipped silently. More than 50%
    malformed lines raises DataFormatError with a sample offender.
    """
    close = False
    if isinstance(source, (str, Path)):
        try:
            handle = open(source, "r", encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read trajectories: {exc}") from exc
        close = True
    else:
        handle = source

    summary = ParseSummary()
    groups: dict[str, list[tuple[float, float, float]]] = {}
    drivers: dict[str, str] = {}
    try:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if lineno == 1 and len(parts) == 5 and not _is_int(parts[2]):
                continue  # header
            summary.data_lines += 1
            if len(parts) != 5:
                _skip(summary, line)
                continue
            driver, order = parts[0].strip(), parts[1].strip()
            try:
                ts = int(parts[2])
                lon = float(parts[3])
                lat = float(parts[4])
            except ValueError:
                _skip(summary, line)
                continue
            if not order or abs(lon) > 180.0 or abs(lat) > 90.0:
                _skip(summary, line)
                continue
            groups.setdefault(order, []).append((float(ts), lon, lat))
            drivers.setdefault(order, driver)
    except UnicodeDecodeError as exc:
        raise InputError(f"cannot decode trajectories: {exc}") from exc
    finally:
        if close:
            handle.close()

    if summary.data_lines and summary.skipped * 2 > summary.data_lines:
        raise DataFormatError(
            f"{summary.skipped} of {summary.data_lines} lines malformed",
            sample=summary.sample_bad_line,
        )

    records: list[TrajectoryRecord] = []
    t_min = np.inf
    t_max = -np.inf
    for order in sorted(groups):
        pts = sorted(groups[order])
        deduped = [pts[0]]
        for p in pts[1:]:
            if p[0] == deduped[-1][0]:
                summary.duplicate_timestamps += 1
            else:
                deduped.append(p)
        arr = np.array(deduped, dtype=float)
        records.append(TrajectoryRecord(vehicle_id=drivers[order], trip_id=order, points=arr))
        t_min = min(t_min, arr[0, 0])
        t_max = max(t_max, arr[-1, 0])

    time_range = (float(t_min), float(t_max)) if records else None
    return TrajectoryStore(records=records, time_range=time_range, summary=summary)


def _skip(summary: ParseSummary, line: str) -> None:
    summary.skipped += 1
    if summary.sample_bad_line is None:
        summary.sample_bad_line = line


def _is_int(text: str) -> bool:
    try:
        int(text)
        return True
    except ValueError:
        return False


def _grid_path(points: np.ndarray, grid: GridSpec) -> list[tuple[tuple[int, int] | None, float, float]]:
    """Visits of (cell-or-None, enter_t, exit_t); None marks out-of-box stretches.

    Consecutive visits always have distinct cells; crossing instants are
    linear interpolations between the straddling fixes, and a segment that
    spans several cells is cut at every grid line it crosses.
    """
    lon_min, lat_min, lon_max, lat_max = grid.bbox
    du_ = grid.cell_width
    dv_ = grid.cell_height
    cols, rows = grid.cols, grid.rows

    def cell_at(u: float, v: float) -> tuple[int, int] | None:
        if u < 0.0 or u > cols or v < 0.0 or v > rows:
            return None
        return (min(int(v), rows - 1), min(int(u), cols - 1))

    visits: list[tuple[tuple[int, int] | None, float, float]] = []

    def push(cell, t_in: float, t_out: float) -> None:
        if visits and visits[-1][0] == cell:
            visits[-1] = (cell, visits[-1][1], t_out)
        else:
            visits.append((cell, t_in, t_out))

    ts = points[:, 0]
    us = (points[:, 1] - lon_min) / du_
    vs = (points[:, 2] - lat_min) / dv_

    push(cell_at(us[0], vs[0]), ts[0], ts[0])
    for i in range(len(ts) - 1):
        u0, v0, t0 = us[i], vs[i], ts[i]
        u1, v1, t1 = us[i + 1], vs[i + 1], ts[i + 1]
        cuts = [0.0, 1.0]
        if u1 != u0:
            lo, hi = sorted((u0, u1))
            for k in range(max(0, int(np.ceil(lo))), min(cols, int(np.floor(hi))) + 1):
                s = (k - u0) / (u1 - u0)
                if 0.0 < s < 1.0:
                    cuts.append(s)
        if v1 != v0:
            lo, hi = sorted((v0, v1))
            for k in range(max(0, int(np.ceil(lo))), min(rows, int(np.floor(hi))) + 1):
                s = (k - v0) / (v1 - v0)
                if 0.0 < s < 1.0:
                    cuts.append(s)
        cuts.sort()
        merged = [cuts[0]]
        for s in cuts[1:]:
            if s - merged[-1] > _CORNER_EPS:
                merged.append(s)
            else:
                merged[-1] = s  # corner pass collapses to one crossing
        for a, b in zip(merged[:-1], merged[1:]):
            mid = 0.5 * (a + b)
            cell = cell_at(u0 + mid * (u1 - u0), v0 + mid * (v1 - v0))
            push(cell, t0 + a * (t1 - t0), t0 + b * (t1 - t0))
    return visits


def cell_sequence(record: TrajectoryRecord, grid: GridSpec) -> list[CellVisit]:
    """In-box cell visits of one trip, in time order."""
    return [
        CellVisit(cell, enter_t, exit_t)
        for cell, enter_t, exit_t in _grid_path(record.points, grid)
        if cell is not None
    ]


def build_flow_tensor(
    store: TrajectoryStore,
    grid: GridSpec,
    interval_seconds: int = DEFAULT_INTERVAL_SECONDS,
    t0: int | None = None,
    n_intervals: int | None = None,
) -> FlowTensor:
    """Count every cell crossing into the in/out-flow tensor.

    A crossing between two in-box cells increments both sides; crossings of
    the box border increment only the in-box side. Crossings outside
    [t0, t0 + n_intervals * interval) are dropped and counted.
    """
    if interval_seconds <= 0:
        raise ConfigError("interval_seconds must be positive")
    if t0 is None:
        if store.time_range is None:
            raise ConfigError("cannot infer t0 from an empty store; pass t0 explicitly")
        t0 = int(np.floor(store.time_range[0] / interval_seconds)) * interval_seconds
    if n_intervals is None:
        if store.time_range is None:
            raise ConfigError("cannot infer n_intervals from an empty store")
        n_intervals = max(1, int(np.floor((store.time_range[1] - t0) / interval_seconds)) + 1)
    if n_intervals < 1:
        raise ConfigError("n_intervals must be >= 1")

    inflow = np.zeros((n_intervals, grid.rows, grid.cols), dtype=np.uint32)
    outflow = np.zeros_like(inflow)
    summary = RasterSummary()

    for record in store.records:
        visits = _grid_path(record.points, grid)
        if all(cell is None for cell, _, _ in visits):
            summary.records_without_cells += 1
            continue
        # consecutive visits are contiguous in time: exit of one is entry of the next
        for (cell_a, _, _), (cell_b, enter_b, _) in zip(visits[:-1], visits[1:]):
            _apply_crossing(
                inflow, outflow, summary, cell_a, cell_b, enter_b,
                t0, interval_seconds, n_intervals,
            )
    return FlowTensor(grid, interval_seconds, int(t0), inflow, outflow, summary)


def _apply_crossing(inflow, outflow, summary, cell_a, cell_b, t, t0, interval_seconds, n_intervals):
    i = int(np.floor((t - t0) / interval_seconds))
    if not (0 <= i < n_intervals):
        summary.dropped_out_of_time += 1
        return
    if cell_a is not None and cell_b is not None:
        outflow[i, cell_a[0], cell_a[1]] += 1
        inflow[i, cell_b[0], cell_b[1]] += 1
        summary.transitions += 1
    elif cell_a is None and cell_b is not None:
        inflow[i, cell_b[0], cell_b[1]] += 1
        summary.box_entries += 1
    elif cell_a is not None and cell_b is None:
        outflow[i, cell_a[0], cell_a[1]] += 1
        summary.box_exits += 1


def rasterize_window(
    records: list[TrajectoryRecord],
    grid: GridSpec,
    interval_seconds: int,
    t0: int,
    first_interval: int,
    n_intervals: int,
) -> tuple[np.ndarray, np.ndarray]:
    """In/out counts (float64) for a window of intervals, from the given records only.

    Used by the attribution engine to re-rasterize prediction inputs per
    coalition; counting rules match build_flow_tensor exactly.
    """
    window_t0 = t0 + first_interval * interval_seconds
    sub = TrajectoryStore(records=records, time_range=(0.0, 0.0))
    tensor = build_flow_tensor(sub, grid, interval_seconds, t0=window_t0, n_intervals=n_intervals)
    return tensor.inflow.astype(float), tensor.outflow.astype(float)
