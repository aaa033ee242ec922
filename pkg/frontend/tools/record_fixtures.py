"""Record API response fixtures for the frontend contract tests.

Builds a small deterministic scenario, serves it in-process, and dumps the
exact endpoint bodies under tests/fixtures/. Rerunning rewrites identical
bytes.
"""

import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from flowshap.config import load_config
from flowshap.partition import GridSpec
from flowshap.service import build_scenario, create_app
from flowshap.synth import SynthParams, generate

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main() -> None:
    tmp = Path(tempfile.mkdtemp())
    grid = GridSpec((116.20, 39.90, 116.50, 40.13), rows=10, cols=10)
    files = generate(SynthParams(vehicles=15, hours=3.0, events=1, seed=5,
                                 grid=grid, intersections=60))
    files.write(tmp)
    manifest = files.manifest
    config = load_config(None, env={}, overrides=dict(
        trajectories=str(tmp / "trajectories.csv"),
        intersections=str(tmp / "intersections.csv"),
        bbox=tuple(manifest["grid"]["bbox"]),
        grid_rows=10, grid_cols=10, k=5,
        t0=manifest["t0"], n_intervals=manifest["n_intervals"],
        predictor="ridge", ridge_lambda=0.5, seed=5,
    ))
    scenario = build_scenario(config)
    client = TestClient(create_app(scenario, slow_threshold_s=600.0))
    base = scenario.default_base
    event = manifest["events"][0]

    endpoints = {
        "meta.json": "/api/meta",
        "flows.json": f"/api/flows?t={base}",
        "trajectories.json": f"/api/trajectories?t={base}",
        "forecast.json": f"/api/forecast?base={base}",
        "clusters.json": "/api/clusters",
        "glyphs.json": f"/api/glyphs?base={base}",
        "attributions_cluster.json": f"/api/attributions/cluster/0?base={base}&h=2",
        "attributions_grid.json": (
            f"/api/attributions/grid/{event['row']}/{event['col']}"
            f"?base={event['interval']}&h=2"
        ),
    }
    OUT.mkdir(parents=True, exist_ok=True)
    for name, url in endpoints.items():
        res = client.get(url)
        assert res.status_code == 200, (url, res.status_code)
        (OUT / name).write_bytes(res.content)
        print(f"wrote {name} ({len(res.content)} bytes)")


if __name__ == "__main__":
    sys.exit(main())
