"""Experiment configuration: flat ``section.key = value`` text or JSON.

Example::

    # weak-order sweep
    model.name = jump_ou
    model.gamma = 1.0
    seed = 20240101
    scale.epsilons = [0.125, 0.0625, 0.03125]
    scale.T = 1.0
    estimator.n0 = 100000
    run.experiments = weak-rate, strong-rate
    output.dir = results

Values are read as JSON when they parse as JSON, as a comma-separated list
when they contain a comma, and as bare strings otherwise.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

from ..errors import ConfigValidationError
from ..model import BENCHMARK_DEFAULTS
from ..weakerror import OBSERVABLES

EXPERIMENTS = ("check", "abar", "mixing", "weak-rate", "strong-rate", "expansion")
MODELS = ("jump_ou",)


@dataclass
class ExperimentConfig:
    model: str = "jump_ou"
    model_params: dict = field(default_factory=dict)
    seed: int = 0
    epsilons: tuple = tuple(2.0**-k for k in range(3, 9))
    T: float = 1.0
    dt_factor: float = 0.1  # dt = dt_factor * min(epsilons) unless dt is set
    dt: Optional[float] = None
    x0: float = 0.0
    y0: float = 0.5
    observable: str = "tanh"
    n0: int = 100000
    eps0: Optional[float] = None  # reference epsilon of the n rule; default max(epsilons)
    strong_n: Optional[int] = None  # default n0
    coupled: bool = True
    abar_x: tuple = (0.0, 1.0)
    abar_method: str = "time_average"
    abar_burn_in: Optional[float] = None
    abar_horizon: Optional[float] = None
    abar_n_paths: int = 10000
    abar_dt: float = 0.01
    mixing_x: float = 0.0
    mixing_y1: float = 2.0
    mixing_y2: float = -1.0
    mixing_horizon: float = 5.0
    mixing_n_paths: int = 1000
    expansion_epsilons: tuple = tuple(2.0**-k for k in range(3, 7))
    expansion_n: int = 100000
    expansion_S: Optional[float] = None
    expansion_n_u1: Optional[int] = None
    experiments: tuple = ("weak-rate", "strong-rate")
    out: str = "results"
    threads: Optional[int] = None

    def resolved_dt(self, epsilons=None) -> float:
        eps = self.epsilons if epsilons is None else epsilons
        return self.dt if self.dt is not None else self.dt_factor * min(eps)

    def resolved_eps0(self) -> float:
        return self.eps0 if self.eps0 is not None else max(self.epsilons)

    def resolved_params(self) -> dict:
        params = dict(BENCHMARK_DEFAULTS)
        params.update(self.model_params)
        return params

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODELS:
            raise ConfigValidationError("model.name", f"unknown model {self.model!r}; known: {list(MODELS)}")
        unknown = set(self.model_params) - set(BENCHMARK_DEFAULTS)
        if unknown:
            raise ConfigValidationError(f"model.{sorted(unknown)[0]}", "unknown model parameter")
        _check_eps("epsilons", self.epsilons)
        _check_eps("expansion.epsilons", self.expansion_epsilons)
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigValidationError("seed", "must be an integer in [0, 2^64)")
        for name, value in (("scale.T", self.T), ("scale.dt_factor", self.dt_factor),
                            ("ergodic.dt", self.abar_dt), ("mixing.horizon", self.mixing_horizon)):
            if not (_finite(value) and value > 0):
                raise ConfigValidationError(name, f"must be > 0, got {value!r}")
        if self.dt is not None and not (_finite(self.dt) and self.dt > 0):
            raise ConfigValidationError("scale.dt", f"must be > 0, got {self.dt!r}")
        if self.eps0 is not None and not (_finite(self.eps0) and self.eps0 > 0):
            raise ConfigValidationError("estimator.eps0", "must be > 0")
        for name, value in (("estimator.n0", self.n0), ("ergodic.n_paths", self.abar_n_paths),
                            ("mixing.n_paths", self.mixing_n_paths), ("expansion.n", self.expansion_n)):
            if not (isinstance(value, int) and value >= 2):
                raise ConfigValidationError(name, f"must be an integer >= 2, got {value!r}")
        if self.strong_n is not None and not (isinstance(self.strong_n, int) and self.strong_n >= 2):
            raise ConfigValidationError("estimator.strong_n", "must be an integer >= 2")
        if self.observable not in OBSERVABLES:
            raise ConfigValidationError("observable", f"unknown observable; known: {sorted(OBSERVABLES)}")
        if self.abar_method not in ("time_average", "ensemble"):
            raise ConfigValidationError("ergodic.method", "must be time_average or ensemble")
        if self.mixing_y1 == self.mixing_y2:
            raise ConfigValidationError("mixing.y1", "must differ from mixing.y2")
        bad = [e for e in self.experiments if e not in EXPERIMENTS]
        if bad or not self.experiments:
            raise ConfigValidationError("run.experiments", f"choose from {list(EXPERIMENTS)}")
        if self.threads is not None and not (isinstance(self.threads, int) and self.threads >= 1):
            raise ConfigValidationError("run.threads", "must be a positive integer")
        if not self.out:
            raise ConfigValidationError("output.dir", "must be set")
        return self

    def check_output_dir(self):
        try:
            os.makedirs(self.out, exist_ok=True)
        except OSError as exc:
            raise ConfigValidationError("output.dir", f"cannot create {self.out!r}: {exc}") from None
        if not os.access(self.out, os.W_OK):
            raise ConfigValidationError("output.dir", f"{self.out!r} is not writable")

    def echo(self) -> dict:
        """Every setting with defaults filled in, in config-key form."""
        out = {}
        for key, attr in KEYS.items():
            value = getattr(self, attr)
            out[key] = list(value) if isinstance(value, tuple) else value
        out["scale.dt"] = self.resolved_dt()
        out["estimator.eps0"] = self.resolved_eps0()
        out["estimator.strong_n"] = self.strong_n or self.n0
        for name, value in sorted(self.resolved_params().items()):
            out[f"model.{name}"] = value
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _finite(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_eps(name, eps):
    if not eps:
        raise ConfigValidationError(name, "must list at least one epsilon")
    if any(not (_finite(e) and 0 < e <= 1) for e in eps):
        raise ConfigValidationError(name, f"every epsilon must lie in (0, 1], got {list(eps)}")
    if len(set(eps)) != len(eps):
        raise ConfigValidationError(name, "epsilons must be distinct")


# config key -> attribute
KEYS = {
    "model.name": "model",
    "seed": "seed",
    "scale.epsilons": "epsilons",
    "scale.T": "T",
    "scale.dt_factor": "dt_factor",
    "scale.dt": "dt",
    "start.x": "x0",
    "start.y": "y0",
    "observable": "observable",
    "estimator.n0": "n0",
    "estimator.eps0": "eps0",
    "estimator.strong_n": "strong_n",
    "estimator.coupled": "coupled",
    "ergodic.x_points": "abar_x",
    "ergodic.method": "abar_method",
    "ergodic.burn_in": "abar_burn_in",
    "ergodic.horizon": "abar_horizon",
    "ergodic.n_paths": "abar_n_paths",
    "ergodic.dt": "abar_dt",
    "mixing.x": "mixing_x",
    "mixing.y1": "mixing_y1",
    "mixing.y2": "mixing_y2",
    "mixing.horizon": "mixing_horizon",
    "mixing.n_paths": "mixing_n_paths",
    "expansion.epsilons": "expansion_epsilons",
    "expansion.n": "expansion_n",
    "expansion.S": "expansion_S",
    "expansion.n_u1": "expansion_n_u1",
    "run.experiments": "experiments",
    "run.threads": "threads",
    "output.dir": "out",
}
TUPLE_FIELDS = {"epsilons", "abar_x", "expansion_epsilons", "experiments"}
INT_FIELDS = {"seed", "n0", "strong_n", "abar_n_paths", "mixing_n_paths", "expansion_n", "expansion_n_u1",
              "threads"}
FLOAT_FIELDS = {"T", "dt_factor", "dt", "x0", "y0", "eps0", "abar_burn_in", "abar_horizon", "abar_dt",
                "mixing_x", "mixing_y1", "mixing_y2", "mixing_horizon", "expansion_S"}


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except ValueError:
        pass
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    return text


def _coerce(key, attr, value):
    if value is None:
        return None
    try:
        if attr in TUPLE_FIELDS:
            items = value if isinstance(value, (list, tuple)) else [value]
            if attr == "experiments":
                return tuple(str(v) for v in items)
            return tuple(float(v) for v in items)
        if attr in INT_FIELDS:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        if attr in FLOAT_FIELDS:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if attr == "coupled":
            if isinstance(value, str):
                value = {"true": True, "false": False}.get(value.lower(), value)
            if not isinstance(value, bool):
                raise ValueError
            return value
        return str(value)
    except (TypeError, ValueError):
        raise ConfigValidationError(key, f"cannot interpret {value!r}") from None


def config_from_mapping(mapping: dict, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Build a config from flat dotted keys or nested JSON-style sections."""
    flat = {}

    def walk(prefix, obj):
        for k, v in obj.items():
            key = f"{prefix}.{k}" if prefix else str(k)
            if isinstance(v, dict) and key not in ("model.params",):
                walk(key, v)
            else:
                flat[key] = v

    walk("", mapping)
    changes, params = {}, {}
    for key, value in flat.items():
        if key == "model" and isinstance(value, str):
            key = "model.name"
        if key in KEYS:
            changes[KEYS[key]] = _coerce(key, KEYS[key], value)
        elif key.startswith("model."):
            name = key.split(".", 1)[1]
            if name == "params" and isinstance(value, dict):
                params.update(value)
            else:
                params[name] = value
        else:
            raise ConfigValidationError(key, "unknown config key")
    cfg = base or ExperimentConfig()
    if params:
        merged = dict(cfg.model_params)
        merged.update(params)
        changes["model_params"] = merged
    return dataclasses.replace(cfg, **changes)


def parse_config_text(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            return config_from_mapping(json.loads(stripped), base)
        except json.JSONDecodeError as exc:
            raise ConfigValidationError("<json>", str(exc)) from None
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigValidationError(f"line {lineno}", "expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        mapping[key] = parse_value(value)
    return config_from_mapping(mapping, base)


def load_config(path, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigValidationError("--config", str(exc)) from None
    return parse_config_text(text, base)
