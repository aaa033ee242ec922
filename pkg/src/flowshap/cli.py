"""Pipeline driver.

Stages exchange files under --out with fixed names: trajectories.csv,
intersections.csv, manifest.json, scenario.cfg (gen-synth), tensor.bin +
ingest.json (ingest), partition.json (partition), model.json + model.bin
(train), attribution.json (explain), bench.json (bench).

Exit codes: 0 success, 2 usage or configuration error, 3 missing artifact,
4 data format error.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import click
import numpy as np

from .config import ServiceConfig, load_config
from .errors import (
    ConfigError,
    DataFormatError,
    FlowshapError,
    InputError,
    MissingArtifactError,
)
from .explain import game_from_table, shapley_exact, shapley_mc
from .partition import build_partition, parse_intersections
from .predict import train as train_predictor
from .service import (
    MODEL_META_FILE,
    MODEL_WEIGHTS_FILE,
    PARTITION_FILE,
    TENSOR_FILE,
    canonical_dumps,
    cluster_attribution_payload,
    grid_report_payload,
    load_scenario,
    predictor_spec,
)
from .synth import SynthParams, generate
from .trajdata import FlowTensor, build_flow_tensor, parse_trajectories

USAGE_EXIT = 2
MISSING_ARTIFACT_EXIT = 3
DATA_FORMAT_EXIT = 4


def _fail(exit_code: int, err: Exception) -> None:
    message = " ".join(str(err).split())
    click.echo(f"error kind={getattr(err, 'code', 'error')} exit={exit_code} message={message}",
               err=True)
    raise SystemExit(exit_code)


def _guard(fn):
    try:
        fn()
    except ConfigError as err:
        _fail(USAGE_EXIT, err)
    except MissingArtifactError as err:
        _fail(MISSING_ARTIFACT_EXIT, err)
    except (DataFormatError, InputError) as err:
        _fail(DATA_FORMAT_EXIT, err)
    except FlowshapError as err:
        _fail(1, err)


def _load_config(config_path, out, seed) -> ServiceConfig:
    overrides = {}
    if out is not None:
        overrides["artifacts"] = str(out)
    if seed is not None:
        overrides["seed"] = seed
    return load_config(config_path, overrides=overrides)


config_option = click.option("--config", "config_path", type=click.Path(), default=None,
                             help="Key-value config file (defaults apply without one).")
seed_option = click.option("--seed", type=int, default=None, help="Override the config seed.")
out_option = click.option("--out", type=click.Path(), default="out",
                          help="Artifact directory (fixed file names, see module help).")


@click.group()
def main():
    """Explainable traffic-flow pipeline: generate, ingest, partition, train,
    explain, serve, bench.

    \b
    Stages exchange fixed file names under --out:
      gen-synth  trajectories.csv intersections.csv manifest.json scenario.cfg
      ingest     tensor.bin ingest.json
      partition  partition.json
      train      model.json model.bin(ridge)
      explain    attribution.json
      bench      bench.json

    Exit codes: 0 ok, 2 usage/config, 3 missing artifact, 4 data format.
    """


@main.command("gen-synth")
@click.option("--vehicles", type=int, default=40, show_default=True)
@click.option("--hours", type=float, default=3.0, show_default=True)
@click.option("--congestion-events", "events", type=int, default=1, show_default=True)
@click.option("--event-trips", type=int, default=8, show_default=True)
@click.option("--intersections", type=int, default=120, show_default=True)
@config_option
@seed_option
@out_option
def gen_synth(vehicles, hours, events, event_trips, intersections, config_path, seed, out):
    """Write a synthetic scenario plus its ground-truth manifest and config."""

    def run():
        cfg = _load_config(config_path, out, seed)
        t0 = cfg.t0 if cfg.t0 is not None else SynthParams().t0
        params = SynthParams(
            vehicles=vehicles, hours=hours, events=events, seed=cfg.seed,
            grid=cfg.grid, interval_seconds=cfg.interval_seconds, t0=t0,
            intersections=intersections, event_trips=event_trips,
        )
        scenario = generate(params)
        out_dir = Path(out)
        scenario.write(out_dir)
        manifest = scenario.manifest
        lines = [
            "# generated scenario config",
            f"trajectories = {out_dir / 'trajectories.csv'}",
            f"intersections = {out_dir / 'intersections.csv'}",
            f"artifacts = {out_dir}",
            f"bbox = {','.join(str(v) for v in cfg.bbox)}",
            f"grid_rows = {cfg.grid_rows}",
            f"grid_cols = {cfg.grid_cols}",
            f"interval_seconds = {cfg.interval_seconds}",
            f"t0 = {manifest['t0']}",
            f"n_intervals = {manifest['n_intervals']}",
            f"k = {cfg.k}",
            f"predictor = {cfg.predictor}",
            f"seed = {cfg.seed}",
        ]
        (out_dir / "scenario.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
        click.echo(f"wrote scenario: {len(scenario.rows)} fixes, "
                   f"{len(manifest['events'])} planted event(s) -> {out_dir}")

    _guard(run)


@main.command()
@config_option
@seed_option
@out_option
def ingest(config_path, seed, out):
    """Parse trajectories and rasterize them into the flow tensor."""

    def run():
        cfg = _load_config(config_path, out, seed)
        store = parse_trajectories(cfg.trajectories)
        tensor = build_flow_tensor(store, cfg.grid, cfg.interval_seconds,
                                   t0=cfg.t0, n_intervals=cfg.n_intervals)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        tensor.save(out_dir / TENSOR_FILE)
        summary = {
            "records": len(store),
            "skipped_lines": store.summary.skipped,
            "duplicate_timestamps": store.summary.duplicate_timestamps,
            "transitions": tensor.summary.transitions,
            "box_entries": tensor.summary.box_entries,
            "box_exits": tensor.summary.box_exits,
            "dropped_out_of_time": tensor.summary.dropped_out_of_time,
            "n_intervals": tensor.n_intervals,
            "t0": tensor.t0,
        }
        (out_dir / "ingest.json").write_text(json.dumps(summary, indent=1), encoding="utf-8")
        click.echo(f"wrote {out_dir / TENSOR_FILE}: {tensor.n_intervals} intervals, "
                   f"{tensor.summary.transitions} transitions")

    _guard(run)


@main.command()
@config_option
@seed_option
@out_option
def partition(config_path, seed, out):
    """Cluster intersections and build the Voronoi regions and grid mapping."""

    def run():
        cfg = _load_config(config_path, out, seed)
        intersections = parse_intersections(cfg.intersections, cfg.grid.bbox)
        part = build_partition(intersections, cfg.grid, k=cfg.k, seed=cfg.seed,
                               max_iter=cfg.kmeans_max_iter)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        part.save(out_dir / PARTITION_FILE)
        click.echo(f"wrote {out_dir / PARTITION_FILE}: k={part.k}, "
                   f"inertia={part.inertia:.3f}")

    _guard(run)


@main.command()
@config_option
@seed_option
@out_option
def train(config_path, seed, out):
    """Train the configured predictor on the full tensor range."""

    def run():
        cfg = _load_config(config_path, out, seed)
        out_dir = Path(out)
        tensor_path = out_dir / TENSOR_FILE
        partition_path = out_dir / PARTITION_FILE
        if not tensor_path.exists():
            raise MissingArtifactError(f"missing {tensor_path}; run ingest first", stage="ingest")
        if not partition_path.exists():
            raise MissingArtifactError(f"missing {partition_path}; run partition first",
                                       stage="partition")
        from .partition import ClusterPartition

        tensor = FlowTensor.load(tensor_path, cfg.grid)
        part = ClusterPartition.load(partition_path)
        spec = predictor_spec(cfg)
        predictor = train_predictor(spec, tensor, range(tensor.n_intervals), part)
        meta = {
            "kind": spec.kind,
            "ridge_lambda": spec.ridge_lambda,
            "ha_period_intervals": spec.period_intervals,
            "train_intervals": tensor.n_intervals,
        }
        (out_dir / MODEL_META_FILE).write_text(json.dumps(meta, indent=1), encoding="utf-8")
        if spec.kind == "ridge":
            predictor.save(out_dir / MODEL_WEIGHTS_FILE)
        click.echo(f"trained {spec.kind} -> {out_dir / MODEL_META_FILE}")

    _guard(run)


@main.command()
@click.option("--cluster", type=int, default=None, help="Cluster id to attribute.")
@click.option("--cell", type=str, default=None, help="Grid cell as row,col.")
@click.option("--base", type=int, default=None, help="Base interval (default: scenario default).")
@click.option("--horizon", type=int, default=None, help="Horizon (default: interpreted horizon).")
@config_option
@seed_option
@out_option
def explain(cluster, cell, base, horizon, config_path, seed, out):
    """Batch attribution; output matches the service endpoint body byte for byte."""

    def run():
        if (cluster is None) == (cell is None):
            raise ConfigError("pass exactly one of --cluster or --cell")
        cfg = _load_config(config_path, out, seed)
        scenario = load_scenario(cfg)
        b = scenario.default_base if base is None else base
        h = cfg.interpreted_horizon if horizon is None else horizon
        if not scenario.valid_base(b):
            raise ConfigError(f"base {b} needs 4 predecessors inside the tensor")
        if not (1 <= h <= cfg.horizons):
            raise ConfigError(f"horizon {h} outside 1..{cfg.horizons}")
        if cluster is not None:
            if not (0 <= cluster < scenario.partition.k):
                raise ConfigError(f"cluster {cluster} outside 0..{scenario.partition.k - 1}")
            payload = cluster_attribution_payload(scenario, cluster, b, h)
        else:
            try:
                row, col = (int(v) for v in cell.split(","))
            except ValueError:
                raise ConfigError(f"--cell expects row,col, got {cell!r}")
            grid = scenario.tensor.grid
            if not (0 <= row < grid.rows and 0 <= col < grid.cols):
                raise ConfigError(f"cell ({row},{col}) outside the grid")
            payload = grid_report_payload(scenario, row, col, b, h)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        target = out_dir / "attribution.json"
        target.write_bytes(canonical_dumps(payload))
        click.echo(f"wrote {target}")

    _guard(run)


@main.command()
@click.option("--host", type=str, default=None)
@click.option("--port", type=int, default=None)
@config_option
@seed_option
@out_option
def serve(host, port, config_path, seed, out):
    """Build the scenario from the configured data and serve the HTTP API."""

    def run():
        import uvicorn

        from .service import create_app_from_config

        cfg = _load_config(config_path, out, seed)
        app = create_app_from_config(cfg)
        uvicorn.run(app, host=host or cfg.host, port=port or cfg.port, log_level="warning")

    _guard(run)


@main.command()
@click.option("--games", "n_games", type=int, default=5, show_default=True)
@click.option("--players", type=int, default=10, show_default=True)
@click.option("--permutations", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Also write bench.json here.")
def bench(n_games, players, permutations, seed, out):
    """Time exact enumeration vs permutation sampling on random games."""

    def run():
        if players < 1:
            raise ConfigError("players must be >= 1")
        if players > 20:
            raise ConfigError("exact mode is capped at 20 players")
        rng = np.random.default_rng(seed)
        tables = [rng.normal(size=1 << players) for _ in range(n_games)]

        exact_evals = 0
        t_start = time.perf_counter()
        for table in tables:
            game = game_from_table([f"p{i}" for i in range(players)], table)
            shapley_exact(game)
            exact_evals += game.eval_count
        exact_seconds = time.perf_counter() - t_start

        mc_evals = 0
        stderr_max = 0.0
        stderr_sum = 0.0
        t_start = time.perf_counter()
        for g, table in enumerate(tables):
            game = game_from_table([f"p{i}" for i in range(players)], table)
            atts = shapley_mc(game, permutations, seed=seed + g)
            mc_evals += game.eval_count
            stderr_max = max(stderr_max, max(a.stderr for a in atts))
            stderr_sum += sum(a.stderr for a in atts)
        mc_seconds = time.perf_counter() - t_start

        report = {
            "games": n_games,
            "players": players,
            "permutations": permutations,
            "exact": {
                "evaluations": exact_evals,
                "seconds": round(exact_seconds, 6),
                "evals_per_second": round(exact_evals / max(exact_seconds, 1e-9), 1),
            },
            "monte_carlo": {
                "evaluations": mc_evals,
                "seconds": round(mc_seconds, 6),
                "evals_per_second": round(mc_evals / max(mc_seconds, 1e-9), 1),
                "stderr_mean": stderr_sum / max(1, n_games * players),
                "stderr_max": stderr_max,
            },
        }
        text = json.dumps(report, indent=1)
        click.echo(text)
        if out is not None:
            out_dir = Path(out)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "bench.json").write_text(text, encoding="utf-8")

    _guard(run)


if __name__ == "__main__":
    main()
