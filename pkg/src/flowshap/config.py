"""Key-value configuration with environment overrides.

Plain `key = value` lines, `#` comments. Every key has a default; environment
variables named FLOWSHAP_<KEY> (upper-cased) override file values. Validation
runs once at load time and reports every problem in a single error.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .partition import DEFAULT_COLS, DEFAULT_K, DEFAULT_ROWS, GridSpec
from .synth import DEFAULT_BBOX

ENV_PREFIX = "FLOWSHAP_"


@dataclass
class ServiceConfig:
    trajectories: str = "data/trajectories.csv"
    intersections: str = "data/intersections.csv"
    artifacts: str = "out"
    bbox: tuple[float, float, float, float] = DEFAULT_BBOX
    grid_rows: int = DEFAULT_ROWS
    grid_cols: int = DEFAULT_COLS
    interval_seconds: int = 600
    t0: int | None = None  # None: floor the first timestamp to the interval
    n_intervals: int | None = None  # None: cover the store's time range
    k: int = DEFAULT_K
    kmeans_max_iter: int = 100
    predictor: str = "persistence"
    ridge_lambda: float = 1.0
    ha_period_intervals: int = 1008
    horizons: int = 6
    interpreted_horizon: int = 2
    mc_permutations: int = 200
    exact_threshold: int = 12
    candidate_cap: int = 12
    explain_target: str = "inflow"
    masker: str = "historical_mean"
    seed: int = 0
    host: str = "127.0.0.1"
    port: int = 8000
    cors_origin: str = "*"
    precompute_bases: tuple[int, ...] = ()

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.bbox, self.grid_rows, self.grid_cols)

    def config_hash(self) -> str:
        import hashlib

        text = "|".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


_PARSERS = {
    "trajectories": str,
    "intersections": str,
    "artifacts": str,
    "bbox": lambda v: tuple(float(x) for x in v.split(",")),
    "grid_rows": int,
    "grid_cols": int,
    "interval_seconds": int,
    "t0": lambda v: None if v in ("", "auto") else int(v),
    "n_intervals": lambda v: None if v in ("", "auto") else int(v),
    "k": int,
    "kmeans_max_iter": int,
    "predictor": str,
    "ridge_lambda": float,
    "ha_period_intervals": int,
    "horizons": int,
    "interpreted_horizon": int,
    "mc_permutations": int,
    "exact_threshold": int,
    "candidate_cap": int,
    "explain_target": str,
    "masker": str,
    "seed": int,
    "host": str,
    "port": int,
    "cors_origin": str,
    "precompute_bases": lambda v: tuple(int(x) for x in v.split(",") if x.strip()),
}


def load_config(path=None, env=None, overrides: dict | None = None) -> ServiceConfig:
    """Build a validated config from file, environment, then explicit overrides."""
    env = os.environ if env is None else env
    problems: list[str] = []
    raw: dict[str, str] = {}

    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                problems.append(f"line {lineno}: expected key = value, got {line!r}")
                continue
            key, _, value = line.partition("=")
            key = key.strip().lower()
            value = value.split("#", 1)[0].strip()
            if key not in _PARSERS:
                problems.append(f"line {lineno}: unknown key {key!r}")
                continue
            raw[key] = value

    for key in _PARSERS:
        env_name = ENV_PREFIX + key.upper()
        if env_name in env:
            raw[key] = env[env_name]

    values: dict = {}
    for key, text_value in raw.items():
        try:
            values[key] = _PARSERS[key](text_value)
        except (ValueError, TypeError):
            problems.append(f"{key}: cannot parse {text_value!r}")

    if overrides:
        for key, value in overrides.items():
            if value is not None:
                values[key] = value

    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems), problems)
    config = ServiceConfig(**values)
    _validate(config)
    return config


def _validate(config: ServiceConfig) -> None:
    p: list[str] = []
    if len(config.bbox) != 4:
        p.append(f"bbox needs 4 numbers, got {len(config.bbox)}")
    else:
        if not (config.bbox[0] < config.bbox[2]):
            p.append("bbox lon_min must be < lon_max")
        if not (config.bbox[1] < config.bbox[3]):
            p.append("bbox lat_min must be < lat_max")
    if config.grid_rows < 1 or config.grid_cols < 1:
        p.append("grid_rows and grid_cols must be >= 1")
    if config.interval_seconds < 1:
        p.append("interval_seconds must be >= 1")
    if config.k < 1:
        p.append("k must be >= 1")
    if config.predictor not in ("persistence", "historical_average", "ridge"):
        p.append(f"unknown predictor {config.predictor!r}")
    if config.ridge_lambda < 0:
        p.append("ridge_lambda must be >= 0")
    if config.ha_period_intervals < 1:
        p.append("ha_period_intervals must be >= 1")
    if config.horizons < 1:
        p.append("horizons must be >= 1")
    if not (1 <= config.interpreted_horizon <= config.horizons):
        p.append(
            f"interpreted_horizon must be in 1..{config.horizons}, "
            f"got {config.interpreted_horizon}"
        )
    if config.mc_permutations < 1:
        p.append("mc_permutations must be >= 1")
    if config.exact_threshold < 1 or config.exact_threshold > 20:
        p.append("exact_threshold must be in 1..20")
    if config.candidate_cap < 1:
        p.append("candidate_cap must be >= 1")
    if config.explain_target not in ("inflow", "outflow"):
        p.append(f"explain_target must be inflow or outflow, got {config.explain_target!r}")
    if config.masker not in ("historical_mean", "zero"):
        p.append(f"masker must be historical_mean or zero, got {config.masker!r}")
    if not (0 < config.port < 65536):
        p.append(f"port must be in 1..65535, got {config.port}")
    if config.n_intervals is not None and config.n_intervals < 1:
        p.append("n_intervals must be >= 1")
    if p:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(p), p)
