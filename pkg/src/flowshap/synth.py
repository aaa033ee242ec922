"""Synthetic scenario generator: background random-walk traffic plus planted
congestion events with recorded ground truth.

Background vehicles random-walk between adjacent cell centers. Each planted
event spawns trips that converge on a chosen cell from a few cells away and
loop in and out of it inside the event interval, so the cell's in-flow gets
a known boost from known trip ids; the sidecar manifest records both for
attribution acceptance checks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .partition import GridSpec

DEFAULT_BBOX = (116.20, 39.90, 116.50, 40.13)
DEFAULT_T0 = 1_700_000_400  # divisible by the 600 s interval
TRAJECTORIES_FILE = "trajectories.csv"
INTERSECTIONS_FILE = "intersections.csv"
MANIFEST_FILE = "manifest.json"

# fraction of the cell size a fix may deviate from the cell center; keeps
# every fix well clear of cell borders so crossing counts stay exact
_JITTER = 0.3
_EVENT_JITTER = 0.1


@dataclass
class SynthParams:
    vehicles: int = 40
    hours: float = 3.0
    events: int = 0
    seed: int = 0
    grid: GridSpec = field(default_factory=lambda: GridSpec(DEFAULT_BBOX))
    interval_seconds: int = 600
    t0: int = DEFAULT_T0
    intersections: int = 120
    event_trips: int = 8

    def __post_init__(self):
        if self.vehicles < 0 or self.hours < 0 or self.events < 0:
            raise ConfigError("vehicles, hours and events must be >= 0")
        if self.event_trips < 1:
            raise ConfigError("event_trips must be >= 1")


@dataclass
class SynthScenario:
    params: SynthParams
    rows: list[tuple[str, str, int, float, float]]  # driver, order, ts, lon, lat
    intersections: list[tuple[str, float, float]]
    manifest: dict

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / TRAJECTORIES_FILE, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for driver, order, ts, lon, lat in self.rows:
                writer.writerow([driver, order, ts, f"{lon:.6f}", f"{lat:.6f}"])
        with open(out / INTERSECTIONS_FILE, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for node, lon, lat in self.intersections:
                writer.writerow([node, f"{lon:.6f}", f"{lat:.6f}"])
        (out / MANIFEST_FILE).write_text(
            json.dumps(self.manifest, indent=1), encoding="utf-8"
        )


def generate(params: SynthParams) -> SynthScenario:
    """Deterministic scenario for the given parameters."""
    rng = np.random.default_rng(params.seed)
    grid = params.grid
    n_intervals = max(1, int(params.hours * 3600) // params.interval_seconds)
    trip_counter = 0
    rows: list[tuple[str, str, int, float, float]] = []

    def fix(cell: tuple[int, int], jitter: float) -> tuple[float, float]:
        lon, lat = grid.cell_center(cell[0], cell[1])
        lon += float(rng.uniform(-jitter, jitter)) * grid.cell_width
        lat += float(rng.uniform(-jitter, jitter)) * grid.cell_height
        return lon, lat

    def next_trip_id() -> str:
        nonlocal trip_counter
        trip_id = f"t{trip_counter:06d}"
        trip_counter += 1
        return trip_id

    total_seconds = max(1, int(params.hours * 3600))
    for v in range(params.vehicles):
        driver = f"d{v:04d}"
        for _ in range(int(rng.integers(1, 4))):
            trip_id = next_trip_id()
            steps = int(rng.integers(8, 20))
            duration_cap = steps * 180
            start = params.t0 + int(rng.integers(0, max(1, total_seconds - duration_cap)))
            cell = (int(rng.integers(0, grid.rows)), int(rng.integers(0, grid.cols)))
            t = start
            for s in range(steps):
                lon, lat = fix(cell, _JITTER)
                rows.append((driver, trip_id, t, lon, lat))
                t += int(rng.integers(60, 180))
                cell = _step(cell, grid, rng)

    events = []
    if params.events:
        if n_intervals < 15:
            raise ConfigError(
                "planting events needs at least 2.5 hours of scenario time "
                f"(got {n_intervals} intervals, need 15)"
            )
        used = set()
        for e in range(params.events):
            for _ in range(50):
                row = grid.rows // 2 + int(rng.integers(-2, 3))
                col = grid.cols // 2 + int(rng.integers(-2, 3))
                interval = int(rng.integers(6, n_intervals - 8))
                if (row, col, interval) not in used:
                    break
            used.add((row, col, interval))
            trip_ids = [
                _plant_contributing_trip(rows, rng, grid, params, (row, col), interval,
                                         next_trip_id(), fix, i)
                for i in range(params.event_trips)
            ]
            events.append(
                {
                    "row": row,
                    "col": col,
                    "interval": interval,
                    "trip_ids": trip_ids,
                    "n_trips": params.event_trips,
                    "inflow_boost": 3 * params.event_trips,  # 1 entry + 2 loop re-entries each
                }
            )

    intersections = [
        (
            f"n{i:04d}",
            float(rng.uniform(grid.bbox[0], grid.bbox[2])),
            float(rng.uniform(grid.bbox[1], grid.bbox[3])),
        )
        for i in range(params.intersections)
    ]

    manifest = {
        "seed": params.seed,
        "vehicles": params.vehicles,
        "hours": params.hours,
        "interval_seconds": params.interval_seconds,
        "t0": params.t0,
        "n_intervals": n_intervals,
        "grid": {"bbox": list(grid.bbox), "rows": grid.rows, "cols": grid.cols},
        "events": events,
    }
    return SynthScenario(params=params, rows=rows, intersections=intersections,
                         manifest=manifest)


def _step(cell: tuple[int, int], grid: GridSpec, rng: np.random.Generator) -> tuple[int, int]:
    moves = [(0, 1), (0, -1), (1, 0), (-1, 0)]
    dr, dc = moves[int(rng.integers(0, 4))]
    return (
        min(grid.rows - 1, max(0, cell[0] + dr)),
        min(grid.cols - 1, max(0, cell[1] + dc)),
    )


def _plant_contributing_trip(rows, rng, grid, params, target, interval, trip_id, fix, index):
    """Append one trip that enters `target` during `interval` three times.

    The trip approaches along a straight rank/file from 3-5 cells away,
    crosses into the target inside the interval, then loops out to an
    adjacent cell and back twice, all before the interval ends.
    """
    interval_start = params.t0 + interval * params.interval_seconds
    driver = f"e{index % 4:04d}"
    directions = [(0, 1), (0, -1), (1, 0), (-1, 0)]
    dr, dc = directions[int(rng.integers(0, 4))]
    distance = int(rng.integers(3, 6))

    # entry crossing lands near interval_start + 60 + 12*index
    tau_in = interval_start + 60 + 12 * index
    approach = [
        (target[0] + dr * d, target[1] + dc * d) for d in range(distance, 0, -1)
    ]
    approach = [
        (min(grid.rows - 1, max(0, r)), min(grid.cols - 1, max(0, c))) for r, c in approach
    ]
    points = []
    t = tau_in - 40 - 140 * (len(approach) - 1)
    for cell in approach:
        points.append((t, cell))  # last approach fix lands at tau_in - 40
        t += 140
    points.append((tau_in + 40, target))
    loop_cell = approach[-1]
    t = tau_in + 40
    for _ in range(2):
        t += 80
        points.append((t, loop_cell))
        t += 80
        points.append((t, target))

    prev_t = None
    for ts, cell in points:
        ts = int(ts)
        if prev_t is not None and ts <= prev_t:
            ts = prev_t + 1
        prev_t = ts
        lon, lat = fix(cell, _EVENT_JITTER)
        rows.append((driver, trip_id, ts, lon, lat))
    return trip_id
