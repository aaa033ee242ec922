"""HTTP/JSON API over a loaded scenario.

The scenario (store, tensor, partition, trained predictor, engine) is built
once, is immutable afterwards, and every response body is produced by a pure
payload builder serialized through one canonical JSON encoder. Bodies are
cached by (query key, config hash); repeated identical requests return the
cached bytes verbatim. Attribution queries that exceed the slow threshold
return 202 with a deterministic poll token instead of stalling the client.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import __version__ as version
from .config import ServiceConfig
from .errors import FlowshapError, MissingArtifactError
from .explain import ExplainEngine, HistoricalMeanMasker, ZeroMasker
from .partition import ClusterPartition, build_partition, parse_intersections
from .predict import (
    Forecast,
    PredictorSpec,
    RidgePredictor,
    TrainedPredictor,
    train,
)
from .trajdata import FlowTensor, TrajectoryStore, build_flow_tensor, parse_trajectories

TENSOR_FILE = "tensor.bin"
PARTITION_FILE = "partition.json"
MODEL_META_FILE = "model.json"
MODEL_WEIGHTS_FILE = "model.bin"


# --------------------------------------------------------------- scenario

@dataclass
class Scenario:
    config: ServiceConfig
    store: TrajectoryStore
    tensor: FlowTensor
    partition: ClusterPartition
    predictor: TrainedPredictor
    engine: ExplainEngine

    @property
    def default_base(self) -> int:
        last = self.tensor.n_intervals - 1
        return max(4, min(last, last - self.config.horizons))

    def bases(self) -> list[int]:
        return list(self.config.precompute_bases) or [self.default_base]

    def valid_base(self, base: int) -> bool:
        return 4 <= base < self.tensor.n_intervals


def predictor_spec(config: ServiceConfig) -> PredictorSpec:
    return PredictorSpec(
        kind=config.predictor,
        ridge_lambda=config.ridge_lambda,
        period_intervals=config.ha_period_intervals,
    )


def _assemble(config, store, tensor, partition, predictor) -> Scenario:
    train_range = range(tensor.n_intervals)
    if config.masker == "zero":
        masker = ZeroMasker(tensor)
    else:
        masker = HistoricalMeanMasker(tensor, train_range)
    engine = ExplainEngine(
        tensor=tensor,
        store=store,
        partition=partition,
        predictor=predictor,
        masker=masker,
        root_seed=config.seed,
        exact_threshold=config.exact_threshold,
        mc_permutations=config.mc_permutations,
        candidate_cap=config.candidate_cap,
        target=config.explain_target,
    )
    return Scenario(config, store, tensor, partition, predictor, engine)


def build_scenario(config: ServiceConfig) -> Scenario:
    """Full in-memory pipeline: parse, rasterize, partition, train."""
    grid = config.grid
    store = parse_trajectories(config.trajectories)
    tensor = build_flow_tensor(
        store, grid, config.interval_seconds, t0=config.t0, n_intervals=config.n_intervals
    )
    intersections = parse_intersections(config.intersections, grid.bbox)
    partition = build_partition(
        intersections, grid, k=config.k, seed=config.seed, max_iter=config.kmeans_max_iter
    )
    predictor = train(predictor_spec(config), tensor, range(tensor.n_intervals), partition)
    return _assemble(config, store, tensor, partition, predictor)


def load_scenario(config: ServiceConfig) -> Scenario:
    """Scenario from pipeline artifacts written by the ingest/partition/train stages."""
    art = Path(config.artifacts)
    for name, stage in ((TENSOR_FILE, "ingest"), (PARTITION_FILE, "partition"),
                        (MODEL_META_FILE, "train")):
        if not (art / name).exists():
            raise MissingArtifactError(
                f"missing artifact {art / name}; run the {stage} stage first", stage=stage
            )
    tensor = FlowTensor.load(art / TENSOR_FILE, config.grid)
    partition = ClusterPartition.load(art / PARTITION_FILE)
    meta = json.loads((art / MODEL_META_FILE).read_text(encoding="utf-8"))
    spec = PredictorSpec(
        kind=meta["kind"],
        ridge_lambda=meta.get("ridge_lambda", config.ridge_lambda),
        period_intervals=meta.get("ha_period_intervals", config.ha_period_intervals),
    )
    if spec.kind == "ridge":
        if not (art / MODEL_WEIGHTS_FILE).exists():
            raise MissingArtifactError(
                f"missing artifact {art / MODEL_WEIGHTS_FILE}; run the train stage first",
                stage="train",
            )
        predictor = RidgePredictor.load(art / MODEL_WEIGHTS_FILE, partition)
    else:
        predictor = train(spec, tensor, range(tensor.n_intervals), partition)
    store = parse_trajectories(config.trajectories)
    return _assemble(config, store, tensor, partition, predictor)


# --------------------------------------------------------------- payloads

def canonical_dumps(payload) -> bytes:
    return json.dumps(payload, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _matrix(a: np.ndarray) -> list[list[float]]:
    return [[float(x) for x in row] for row in a]


def meta_payload(s: Scenario) -> dict:
    t = s.tensor
    observed_max = int(max(t.inflow.max(initial=0), t.outflow.max(initial=0)))
    proj = s.partition.projection
    return {
        "bbox": list(t.grid.bbox),
        "rows": t.grid.rows,
        "cols": t.grid.cols,
        "k": s.partition.k,
        "interval_seconds": t.interval_seconds,
        "t0": t.t0,
        "n_intervals": t.n_intervals,
        "time_range": [t.t0, t.t0 + t.n_intervals * t.interval_seconds],
        "horizons": s.config.horizons,
        "interpreted_horizon": s.config.interpreted_horizon,
        "predictor": s.config.predictor,
        "seed": s.config.seed,
        "flow_max": observed_max,
        "default_base": s.default_base,
        "bases": s.bases(),
        "projection": {
            "lon_center": proj.lon_center,
            "lat_center": proj.lat_center,
            "meters_per_deg_lon": proj.meters_per_deg_lon,
            "meters_per_deg_lat": proj.meters_per_deg_lat,
        },
    }


def flows_payload(s: Scenario, t: int) -> dict:
    tensor = s.tensor
    return {
        "t": t,
        "start": tensor.interval_start(t),
        "end": tensor.interval_start(t + 1),
        "inflow": _matrix(tensor.inflow[t]),
        "outflow": _matrix(tensor.outflow[t]),
    }


def trajectories_payload(s: Scenario, t: int) -> dict:
    tensor = s.tensor
    start = tensor.interval_start(t)
    end = tensor.interval_start(t + 1)
    items = []
    for record in s.store.records:
        pts = record.points
        sel = (pts[:, 0] >= start) & (pts[:, 0] < end)
        if not sel.any():
            continue
        items.append(
            {
                "trip": record.trip_id,
                "vehicle": record.vehicle_id,
                "points": [[float(a), float(b), float(c)] for a, b, c in pts[sel]],
            }
        )
    items.sort(key=lambda item: item["trip"])
    return {"t": t, "start": start, "end": end, "trajectories": items}


def forecast_payload(s: Scenario, base: int) -> dict:
    forecast: Forecast = s.engine.forecast(base, s.config.horizons)
    return {
        "base": base,
        "horizons": s.config.horizons,
        "clamped": forecast.clamped,
        "frames": [
            {"h": h + 1, "inflow": _matrix(f.inflow), "outflow": _matrix(f.outflow)}
            for h, f in enumerate(forecast.frames)
        ],
    }


def clusters_payload(s: Scenario) -> dict:
    return s.partition.to_json_doc()


def _attribution_item(att) -> dict:
    return {
        "player": att.player,
        "phi": float(att.phi),
        "stderr": float(att.stderr),
        "method": att.method,
    }


def cluster_attribution_payload(s: Scenario, cluster: int, base: int, horizon: int) -> dict:
    atts, degenerate = s.engine.cluster_attributions(cluster, base, horizon)
    items = [_attribution_item(a) for a in atts]
    for item in items:
        item["player"] = int(item["player"])
    sectors = None
    if not degenerate:
        from .explain import sector_summary

        sectors = [
            {"dir": sec.direction, "pos": sec.positive, "neg": sec.negative}
            for sec in sector_summary(atts, s.partition, cluster)
        ]
    return {
        "cluster": cluster,
        "base": base,
        "horizon": horizon,
        "degenerate": degenerate,
        "attributions": items,
        "sectors": sectors,
    }


def grid_report_payload(s: Scenario, row: int, col: int, base: int, horizon: int) -> dict:
    report = s.engine.grid_report((row, col), base, horizon)
    return {
        "cell": [row, col],
        "base": base,
        "horizon": horizon,
        "n_candidates": report.n_candidates,
        "top": [_attribution_item(a) for a in report.top],
        "time_channels": [
            {"lookback": ch.lookback, "pos": ch.positive, "neg": ch.negative}
            for ch in report.time_channels
        ],
    }


def glyphs_payload(s: Scenario, base: int) -> dict:
    glyphs = s.engine.glyphs(base, s.config.horizons, s.config.interpreted_horizon)
    return {
        "base": base,
        "interpreted_horizon": s.config.interpreted_horizon,
        "glyphs": [
            {
                "cluster": g.cluster,
                "forecast_points": g.forecast_points,
                "highlighted": g.highlighted_horizon,
                "degenerate": g.degenerate,
                "sectors": [
                    {"dir": sec.direction, "pos": sec.positive, "neg": sec.negative}
                    for sec in g.sectors
                ],
            }
            for g in glyphs
        ],
    }


# ----------------------------------------------------------------- caching

@dataclass
class CacheEntry:
    key: str
    payload: bytes
    computed_at: float  # wall clock, never serialized into responses


class ResultCache:
    """Content-addressed body cache: single writer per key, many readers.

    Keys embed the config hash, so a config change invalidates by miss.
    """

    def __init__(self):
        self._entries: dict[str, CacheEntry] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def get(self, key: str) -> bytes | None:
        entry = self._entries.get(key)
        return entry.payload if entry else None

    def compute(self, key: str, fn) -> bytes:
        entry = self._entries.get(key)
        if entry is not None:
            return entry.payload
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            entry = self._entries.get(key)
            if entry is None:
                entry = CacheEntry(key=key, payload=fn(), computed_at=time.time())
                self._entries[key] = entry
        return entry.payload


class JobRegistry:
    """Deferred computations keyed by a deterministic token."""

    def __init__(self, max_workers: int = 2):
        self._executor = ThreadPoolExecutor(max_workers=max_workers)
        self._futures: dict[str, Future] = {}
        self._keys: dict[str, str] = {}
        self._guard = threading.Lock()

    @staticmethod
    def token_for(key: str) -> str:
        return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]

    def submit(self, key: str, fn) -> tuple[str, Future]:
        token = self.token_for(key)
        with self._guard:
            fut = self._futures.get(token)
            if fut is None:
                fut = self._executor.submit(fn)
                self._futures[token] = fut
                self._keys[token] = key
        return token, fut

    def lookup(self, token: str) -> tuple[Future | None, str | None]:
        with self._guard:
            return self._futures.get(token), self._keys.get(token)


# --------------------------------------------------------------------- app

def _error(status: int, code: str, message: str, detail=None, headers=None) -> Response:
    body = canonical_dumps({"code": code, "message": message, "detail": detail})
    return Response(content=body, status_code=status, media_type="application/json",
                    headers=headers or {})


def create_app(
    scenario: Scenario | None,
    slow_threshold_s: float = 2.0,
    config: ServiceConfig | None = None,
) -> FastAPI:
    """API over one immutable scenario.

    Pass scenario=None for a not-yet-initialized app (every /api route
    answers 503 with Retry-After); a scenario may be attached later via
    app.state.scenario, which create_app_from_config uses to initialize in
    the background while the server is already accepting requests.
    """
    app = FastAPI(title="flowshap", version=version, docs_url=None, redoc_url=None)
    effective_config = scenario.config if scenario else config
    cors_origin = effective_config.cors_origin if effective_config else "*"
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"] if cors_origin == "*" else [cors_origin],
        allow_methods=["GET"],
        allow_headers=["*"],
    )
    cache = ResultCache()
    jobs = JobRegistry()
    app.state.scenario = scenario
    app.state.cache = cache

    cfg_hash = effective_config.config_hash() if effective_config else ""

    def body_response(body: bytes) -> Response:
        return Response(content=body, media_type="application/json")

    def cached(key_parts, builder) -> bytes:
        key = cfg_hash + "|" + "|".join(str(p) for p in key_parts)
        return cache.compute(key, lambda: canonical_dumps(builder()))

    def deferred(key_parts, builder) -> Response:
        """Compute-now when fast, 202 with a poll token when slow."""
        key = cfg_hash + "|" + "|".join(str(p) for p in key_parts)
        body = cache.get(key)
        if body is not None:
            return body_response(body)
        token, fut = jobs.submit(key, lambda: cache.compute(key, lambda: canonical_dumps(builder())))
        try:
            return body_response(fut.result(timeout=slow_threshold_s))
        except FutureTimeout:
            return _error(
                202, "pending", "computation in progress",
                detail={"token": token, "poll": f"/api/jobs/{token}"},
            )

    @app.exception_handler(StarletteHTTPException)
    async def http_exception_handler(request: Request, exc: StarletteHTTPException):
        return _error(exc.status_code, "http-error", str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return _error(422, "invalid-parameter", "invalid query or path parameter",
                      detail=[str(e.get("loc")) for e in exc.errors()])

    @app.exception_handler(FlowshapError)
    async def package_error_handler(request: Request, exc: FlowshapError):
        return _error(500, exc.code, str(exc))

    def need_scenario() -> Scenario | Response:
        if app.state.scenario is None:
            return _error(503, "initializing", "scenario not loaded yet",
                          headers={"Retry-After": "1"})
        return app.state.scenario

    def check_interval(s: Scenario, t: int) -> Response | None:
        if not (0 <= t < s.tensor.n_intervals):
            return _error(404, "out-of-range",
                          f"interval {t} outside 0..{s.tensor.n_intervals - 1}")
        return None

    def check_base(s: Scenario, base: int) -> Response | None:
        if not s.valid_base(base):
            return _error(404, "out-of-range",
                          f"base {base} needs 4 predecessors and must be observed "
                          f"(4..{s.tensor.n_intervals - 1})")
        return None

    def check_horizon(s: Scenario, h: int) -> Response | None:
        if not (1 <= h <= s.config.horizons):
            return _error(422, "invalid-horizon", f"horizon {h} outside 1..{s.config.horizons}")
        return None

    @app.get("/api/meta")
    def meta():
        s = need_scenario()
        if isinstance(s, Response):
            return s
        return body_response(cached(["meta"], lambda: meta_payload(s)))

    @app.get("/api/flows")
    def flows(t: int):
        s = need_scenario()
        if isinstance(s, Response):
            return s
        return check_interval(s, t) or body_response(
            cached(["flows", t], lambda: flows_payload(s, t))
        )

    @app.get("/api/trajectories")
    def trajectories(t: int):
        s = need_scenario()
        if isinstance(s, Response):
            return s
        return check_interval(s, t) or body_response(
            cached(["trajectories", t], lambda: trajectories_payload(s, t))
        )

    @app.get("/api/forecast")
    def forecast(base: int | None = None):
        s = need_scenario()
        if isinstance(s, Response):
            return s
        base = s.default_base if base is None else base
        return check_base(s, base) or body_response(
            cached(["forecast", base], lambda: forecast_payload(s, base))
        )

    @app.get("/api/clusters")
    def clusters():
        s = need_scenario()
        if isinstance(s, Response):
            return s
        return body_response(cached(["clusters"], lambda: clusters_payload(s)))

    @app.get("/api/glyphs")
    def glyphs(base: int | None = None):
        s = need_scenario()
        if isinstance(s, Response):
            return s
        base = s.default_base if base is None else base
        return check_base(s, base) or deferred(
            ["glyphs", base], lambda: glyphs_payload(s, base)
        )

    @app.get("/api/attributions/cluster/{cluster}")
    def cluster_attributions(cluster: int, base: int | None = None, h: int | None = None):
        s = need_scenario()
        if isinstance(s, Response):
            return s
        base = s.default_base if base is None else base
        h = s.config.interpreted_horizon if h is None else h
        if not (0 <= cluster < s.partition.k):
            return _error(404, "unknown-cluster", f"cluster {cluster} outside 0..{s.partition.k - 1}")
        return (
            check_base(s, base)
            or check_horizon(s, h)
            or deferred(
                ["att-cluster", cluster, base, h],
                lambda: cluster_attribution_payload(s, cluster, base, h),
            )
        )

    @app.get("/api/attributions/grid/{row}/{col}")
    def grid_attributions(row: int, col: int, base: int | None = None, h: int | None = None):
        s = need_scenario()
        if isinstance(s, Response):
            return s
        base = s.default_base if base is None else base
        h = s.config.interpreted_horizon if h is None else h
        grid = s.tensor.grid
        if not (0 <= row < grid.rows and 0 <= col < grid.cols):
            return _error(404, "unknown-cell", f"cell ({row},{col}) outside the grid")
        return (
            check_base(s, base)
            or check_horizon(s, h)
            or deferred(
                ["att-grid", row, col, base, h],
                lambda: grid_report_payload(s, row, col, base, h),
            )
        )

    @app.get("/api/jobs/{token}")
    def job_status(token: str):
        s = need_scenario()
        if isinstance(s, Response):
            return s
        fut, key = jobs.lookup(token)
        if fut is None:
            return _error(404, "unknown-token", f"no job {token}")
        if not fut.done():
            return _error(202, "pending", "computation in progress",
                          detail={"token": token, "poll": f"/api/jobs/{token}"})
        return body_response(fut.result())

    if scenario is not None:
        _precompute(scenario, cache, cfg_hash)
    return app


def create_app_from_config(config: ServiceConfig, slow_threshold_s: float = 2.0) -> FastAPI:
    """App that initializes its scenario in the background.

    The server accepts requests immediately and answers 503 with Retry-After
    until the pipeline (parse, rasterize, partition, train, precompute) has
    finished; then the scenario is attached atomically.
    """
    app = create_app(None, slow_threshold_s=slow_threshold_s, config=config)

    def initialize() -> None:
        scenario = build_scenario(config)
        _precompute(scenario, app.state.cache, config.config_hash())
        app.state.scenario = scenario

    thread = threading.Thread(target=initialize, name="scenario-init", daemon=True)
    app.state.init_thread = thread
    thread.start()
    return app


def _precompute(scenario: Scenario, cache: ResultCache, cfg_hash: str) -> None:
    """Warm the cache: meta, clusters, and glyphs for the configured bases."""
    cache.compute(cfg_hash + "|meta", lambda: canonical_dumps(meta_payload(scenario)))
    cache.compute(cfg_hash + "|clusters", lambda: canonical_dumps(clusters_payload(scenario)))
    for base in scenario.bases():
        if scenario.valid_base(base):
            cache.compute(
                cfg_hash + f"|glyphs|{base}",
                lambda b=base: canonical_dumps(glyphs_payload(scenario, b)),
            )
