"""Experiment configuration: flat JSON with strict key checking.

A config file is a single JSON object whose values are scalars or lists of
scalars. Unknown keys are rejected so typos fail loudly instead of being
ignored. The environment variable SPINBOND_SEED overrides the seed.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import ConfigError

SEED_ENV_VAR = "SPINBOND_SEED"

EXPERIMENTS = (
    "duality-check",
    "stationary-compare",
    "mu-dyn",
    "tv-decay",
    "mgf-check",
    "raw-simulate",
)

# Experiments whose target quantities only exist for an ergodic chain.
ERGODIC_EXPERIMENTS = ("stationary-compare", "mu-dyn", "tv-decay")

_COMMON_KEYS = {"experiment", "seed", "stream", "workers", "output_dir", "oracle"}
_GRAPH_KEYS = {"graph", "graph_file", "kernel_file"}
_PARAM_KEYS = {"p", "v"}

_ALLOWED_KEYS: dict[str, set[str]] = {
    "duality-check": _COMMON_KEYS
    | _GRAPH_KEYS
    | _PARAM_KEYS
    | {"k", "t", "tolerance", "mode", "forward_initial_file", "replicas", "sigmas"},
    "stationary-compare": _COMMON_KEYS
    | _GRAPH_KEYS
    | _PARAM_KEYS
    | {"max_revealed", "replicas", "mc_time", "tolerance", "sigmas"},
    "mu-dyn": _COMMON_KEYS
    | _GRAPH_KEYS
    | _PARAM_KEYS
    | {
        "sites",
        "signs",
        "revealed_positive",
        "revealed_negative",
        "replicas",
        "t_cap",
        "sigmas",
        "report_limit",
    },
    "tv-decay": _COMMON_KEYS
    | _GRAPH_KEYS
    | _PARAM_KEYS
    | {"t_max", "t_step", "threshold", "initial_file", "replicas", "sigmas"},
    "mgf-check": _COMMON_KEYS
    | _GRAPH_KEYS
    | _PARAM_KEYS
    | {"thetas", "times", "r0_values", "replicas", "sigmas", "check_domination", "t"},
    "raw-simulate": _COMMON_KEYS
    | _GRAPH_KEYS
    | _PARAM_KEYS
    | {
        "t_max",
        "checkpoint_times",
        "observables",
        "initial_file",
        "site_plus_prob",
        "edge_plus_prob",
        "replicas",
    },
}

_DEFAULTS: dict[str, dict] = {
    "duality-check": {
        "k": 1,
        "t": 1.0,
        "tolerance": 1e-8,
        "mode": "coalescing",
        "replicas": 20000,
        "sigmas": 3.0,
    },
    "stationary-compare": {
        "max_revealed": 2,
        "replicas": 0,
        "mc_time": 30.0,
        "tolerance": 1e-10,
        "sigmas": 3.0,
    },
    "mu-dyn": {
        "revealed_positive": [],
        "revealed_negative": [],
        "sigmas": 3.0,
        "report_limit": 100,
    },
    "tv-decay": {
        "t_max": 20.0,
        "t_step": 0.5,
        "threshold": 0.01,
        "replicas": 20000,
        "sigmas": 3.0,
    },
    "mgf-check": {
        "thetas": [-1.0, 0.5],
        "times": [1.0, 5.0],
        "r0_values": [0, 3],
        "replicas": 50000,
        "sigmas": 3.0,
        "check_domination": False,
        "t": 2.0,
    },
    "raw-simulate": {"replicas": 1, "site_plus_prob": 0.5, "edge_plus_prob": 0.5},
}

_REQUIRED: dict[str, set[str]] = {
    "duality-check": set(),
    "stationary-compare": set(),
    "mu-dyn": {"sites", "replicas"},
    "tv-decay": set(),
    "mgf-check": set(),
    "raw-simulate": {"t_max", "observables", "output_dir"},
}


def _require_int(cfg: dict, key: str, minimum: int | None = None) -> None:
    value = cfg[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"key {key!r} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"key {key!r} must be >= {minimum}, got {value}")


def _require_number(cfg: dict, key: str, minimum=None, maximum=None, strict_min=False) -> None:
    value = cfg[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"key {key!r} must be a number, got {value!r}")
    if minimum is not None:
        if strict_min and not value > minimum:
            raise ConfigError(f"key {key!r} must be > {minimum}, got {value}")
        if not strict_min and value < minimum:
            raise ConfigError(f"key {key!r} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"key {key!r} must be <= {maximum}, got {value}")
    cfg[key] = float(value)


def _require_number_list(cfg: dict, key: str, allow_empty=False) -> None:
    value = cfg[key]
    if not isinstance(value, list) or any(
        isinstance(x, bool) or not isinstance(x, (int, float)) for x in value
    ):
        raise ConfigError(f"key {key!r} must be a list of numbers, got {value!r}")
    if not value and not allow_empty:
        raise ConfigError(f"key {key!r} must not be empty")


def _require_int_list(cfg: dict, key: str, allow_empty=True) -> None:
    value = cfg[key]
    if not isinstance(value, list) or any(
        isinstance(x, bool) or not isinstance(x, int) for x in value
    ):
        raise ConfigError(f"key {key!r} must be a list of integers, got {value!r}")
    if not value and not allow_empty:
        raise ConfigError(f"key {key!r} must not be empty")


def _require_str(cfg: dict, key: str, choices=None) -> None:
    value = cfg[key]
    if not isinstance(value, str):
        raise ConfigError(f"key {key!r} must be a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(f"key {key!r} must be one of {sorted(choices)}, got {value!r}")


def load_config(path, env: dict | None = None) -> dict:
    """Read, validate, and default-fill an experiment config file."""
    env = os.environ if env is None else env
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"config must be flat, key {key!r} holds a nested object")
        if isinstance(value, list) and any(isinstance(x, (dict, list)) for x in value):
            raise ConfigError(f"config must be flat, key {key!r} holds nested containers")
    return validate_config(raw, env=env)


def validate_config(raw: dict, env: dict | None = None) -> dict:
    env = os.environ if env is None else env
    cfg = dict(raw)
    if "experiment" not in cfg:
        raise ConfigError("config is missing the 'experiment' key")
    _require_str(cfg, "experiment", choices=EXPERIMENTS)
    experiment = cfg["experiment"]

    allowed = _ALLOWED_KEYS[experiment]
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown keys for experiment {experiment!r}: {', '.join(unknown)}"
        )

    for key, value in _DEFAULTS[experiment].items():
        cfg.setdefault(key, list(value) if isinstance(value, list) else value)
    cfg.setdefault("p", 0.5)
    cfg.setdefault("v", 1.0)
    cfg.setdefault("seed", 0)
    cfg.setdefault("stream", 0)
    cfg.setdefault("workers", 1)
    cfg.setdefault("oracle", "auto")

    seed_override = env.get(SEED_ENV_VAR)
    if seed_override is not None:
        try:
            cfg["seed"] = int(seed_override)
        except ValueError:
            raise ConfigError(
                f"{SEED_ENV_VAR} must be an integer, got {seed_override!r}"
            ) from None

    missing = sorted(k for k in _REQUIRED[experiment] if k not in cfg)
    if missing:
        raise ConfigError(
            f"experiment {experiment!r} is missing required keys: {', '.join(missing)}"
        )

    _require_int(cfg, "seed", minimum=0)
    _require_int(cfg, "stream", minimum=0)
    _require_int(cfg, "workers", minimum=1)
    _require_str(cfg, "oracle", choices=("on", "off", "auto"))

    needs_graph = experiment != "mgf-check" or cfg["check_domination"]
    has_graph = ("graph" in cfg) + ("graph_file" in cfg)
    if needs_graph and has_graph != 1:
        raise ConfigError(
            f"experiment {experiment!r} needs exactly one of 'graph' or 'graph_file'"
        )
    if "graph" in cfg:
        _require_str(cfg, "graph")
    if "graph_file" in cfg:
        _require_str(cfg, "graph_file")
    if "kernel_file" in cfg:
        _require_str(cfg, "kernel_file")
    if "output_dir" in cfg:
        _require_str(cfg, "output_dir")

    _require_number(cfg, "p", minimum=0.0, maximum=1.0)
    _require_number(cfg, "v", minimum=0.0)
    if experiment in ERGODIC_EXPERIMENTS:
        if not 0.0 < cfg["p"] < 1.0:
            raise ConfigError(
                f"experiment {experiment!r} needs 0 < p < 1, got p={cfg['p']}"
            )
        if not cfg["v"] > 0.0:
            raise ConfigError(f"experiment {experiment!r} needs v > 0, got v={cfg['v']}")
    if experiment == "duality-check" and not 0.0 < cfg["p"] < 1.0:
        raise ConfigError(
            f"duality weights are undefined at p={cfg['p']}; need 0 < p < 1"
        )
    if experiment == "mgf-check" and not cfg["v"] > 0.0:
        raise ConfigError(f"mgf-check needs v > 0, got v={cfg['v']}")

    if experiment == "duality-check":
        _require_int(cfg, "k", minimum=1)
        _require_number(cfg, "t", minimum=0.0)
        _require_number(cfg, "tolerance", minimum=0.0, strict_min=True)
        _require_str(cfg, "mode", choices=("coalescing", "independent"))
        _require_int(cfg, "replicas", minimum=1)
        _require_number(cfg, "sigmas", minimum=0.0, strict_min=True)
        if "forward_initial_file" in cfg:
            _require_str(cfg, "forward_initial_file")
    elif experiment == "stationary-compare":
        _require_int(cfg, "max_revealed", minimum=0)
        _require_int(cfg, "replicas", minimum=0)
        if cfg["oracle"] == "off" and cfg["replicas"] < 1:
            raise ConfigError(
                "stationary-compare with oracle 'off' needs replicas >= 1"
            )
        _require_number(cfg, "mc_time", minimum=0.0, strict_min=True)
        _require_number(cfg, "tolerance", minimum=0.0, strict_min=True)
        _require_number(cfg, "sigmas", minimum=0.0, strict_min=True)
    elif experiment == "mu-dyn":
        _require_int_list(cfg, "sites", allow_empty=False)
        cfg.setdefault("signs", [1] * len(cfg["sites"]))
        _require_int_list(cfg, "signs", allow_empty=False)
        if len(cfg["sites"]) != len(cfg["signs"]):
            raise ConfigError(
                f"{len(cfg['sites'])} sites but {len(cfg['signs'])} signs"
            )
        if any(s != 1 for s in cfg["signs"]):
            raise ConfigError(
                "key 'signs' must be all +1: the dual coalescence estimator "
                "only covers all-plus site constraints"
            )
        _require_int_list(cfg, "revealed_positive")
        _require_int_list(cfg, "revealed_negative")
        _require_int(cfg, "replicas", minimum=1)
        _require_number(cfg, "sigmas", minimum=0.0, strict_min=True)
        _require_int(cfg, "report_limit", minimum=0)
        if "t_cap" in cfg:
            _require_number(cfg, "t_cap", minimum=0.0, strict_min=True)
    elif experiment == "tv-decay":
        _require_number(cfg, "t_max", minimum=0.0, strict_min=True)
        _require_number(cfg, "t_step", minimum=0.0, strict_min=True)
        _require_number(cfg, "threshold", minimum=0.0, strict_min=True)
        _require_int(cfg, "replicas", minimum=1)
        _require_number(cfg, "sigmas", minimum=0.0, strict_min=True)
        if "initial_file" in cfg:
            _require_str(cfg, "initial_file")
    elif experiment == "mgf-check":
        _require_number_list(cfg, "thetas")
        _require_number_list(cfg, "times")
        _require_int_list(cfg, "r0_values", allow_empty=False)
        if any(r < 0 for r in cfg["r0_values"]):
            raise ConfigError("r0_values must be >= 0")
        _require_int(cfg, "replicas", minimum=1)
        _require_number(cfg, "sigmas", minimum=0.0, strict_min=True)
        if not isinstance(cfg["check_domination"], bool):
            raise ConfigError("key 'check_domination' must be a boolean")
        _require_number(cfg, "t", minimum=0.0, strict_min=True)
        if cfg["check_domination"]:
            if not 0.0 < cfg["p"] < 1.0:
                raise ConfigError(
                    f"check_domination needs 0 < p < 1, got p={cfg['p']}"
                )
    elif experiment == "raw-simulate":
        _require_number(cfg, "t_max", minimum=0.0)
        if "checkpoint_times" not in cfg:
            cfg["checkpoint_times"] = [cfg["t_max"]]
        _require_number_list(cfg, "checkpoint_times")
        if any(t < 0 or t > cfg["t_max"] for t in cfg["checkpoint_times"]):
            raise ConfigError("checkpoint_times must lie in [0, t_max]")
        value = cfg["observables"]
        if not isinstance(value, list) or not value or any(
            not isinstance(x, str) for x in value
        ):
            raise ConfigError("key 'observables' must be a non-empty list of strings")
        _require_number(cfg, "site_plus_prob", minimum=0.0, maximum=1.0)
        _require_number(cfg, "edge_plus_prob", minimum=0.0, maximum=1.0)
        _require_int(cfg, "replicas", minimum=1)
        if "initial_file" in cfg:
            _require_str(cfg, "initial_file")

    return cfg


def parse_graph_spec(spec: str):
    """Builtin graph spec: ``kind:size`` or ``grid_torus:rows,cols``."""
    from .graphs import builtin_graph

    if ":" not in spec:
        raise ConfigError(
            f"graph spec {spec!r} must look like 'path:3' or 'grid_torus:2,2'"
        )
    kind, _, arg_text = spec.partition(":")
    try:
        sizes = tuple(int(part) for part in arg_text.split(","))
    except ValueError:
        raise ConfigError(f"graph spec {spec!r} has non-integer sizes") from None
    try:
        return builtin_graph(kind, *sizes)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad graph spec {spec!r}: {exc}") from exc
