"""Averaged drift, invariant-measure moments and mixing of the frozen fast process."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError
from .integrate import frozen_batch
from .model import CoefficientModel, check_dissipativity
from .randomness import RandomPlan, _mix64

log = logging.getLogger(__name__)

__all__ = [
    "AveragedDrift",
    "AbarEstimate",
    "MixingEstimate",
    "MomentEstimate",
    "estimate_abar",
    "estimate_mixing_rate",
    "estimate_invariant_moment",
    "default_windows",
]

DEFAULT_DT = 0.01
N_BATCHES = 32
# dedicated stream label for the drift used inside averaged simulations
ABAR_STREAM = 0xA8A7


def default_windows(model: CoefficientModel):
    """``(burn_in, horizon) = (10/beta, 100/beta)`` from the dissipativity probe."""
    beta = check_dissipativity(model).beta_hat
    if not beta > 0:
        raise InvalidInputError(f"dissipativity probe gave beta_hat={beta}; cannot pick default windows")
    return 10.0 / beta, 100.0 / beta


@dataclass(frozen=True)
class AbarEstimate:
    value: np.ndarray
    stderr: np.ndarray
    method: str
    n_paths: int
    burn_in: float
    horizon: float


def estimate_abar(model: CoefficientModel, x, method: str = "time_average", burn_in=None, horizon=None,
                  n_paths: int = 1000, plan: Optional[RandomPlan] = None, dt: float = DEFAULT_DT, y0=None,
                  threads=None) -> AbarEstimate:
    """Monte Carlo estimate of the averaged drift at ``x``.

    ``time_average`` averages ``a(x, Y_s)`` over ``[burn_in, horizon]`` along
    each frozen path; with one path the standard error comes from 32
    non-overlapping batch means, otherwise from the spread of the per-path
    averages.  ``ensemble`` averages ``a(x, Y_horizon)`` over the paths.
    """
    if burn_in is None or horizon is None:
        b_def, h_def = default_windows(model)
        burn_in = b_def if burn_in is None else burn_in
        horizon = h_def if horizon is None else horizon
    if not horizon > burn_in > 0:
        raise InvalidInputError(f"need horizon > burn_in > 0, got burn_in={burn_in}, horizon={horizon}")
    if n_paths < 1:
        raise InvalidInputError("n_paths must be >= 1")
    plan = plan or RandomPlan(0)
    y0 = np.zeros(model.dims.m) if y0 is None else y0
    x_arr = np.asarray(x, dtype=float).reshape(1, model.dims.n)

    if method == "time_average":
        bins = N_BATCHES if n_paths == 1 else 1
        res = frozen_batch(model, x_arr[0], y0, horizon, dt, plan, n_paths, window=(burn_in, horizon),
                           bins=bins, threads=threads)
        span = horizon - burn_in
        if n_paths == 1:
            batch = res.integral[0] / (span / bins)  # (bins, n)
            value = batch.mean(axis=0)
            stderr = batch.std(axis=0, ddof=1) / np.sqrt(bins)
        else:
            per_path = res.integral[:, 0, :] / span
            value = per_path.mean(axis=0)
            stderr = per_path.std(axis=0, ddof=1) / np.sqrt(n_paths)
    elif method == "ensemble":
        if n_paths < 2:
            raise InvalidInputError("ensemble method needs n_paths >= 2")
        res = frozen_batch(model, x_arr[0], y0, horizon, dt, plan, n_paths, threads=threads)
        vals = model.a(np.repeat(x_arr, n_paths, axis=0), res.Y_T)
        value = vals.mean(axis=0)
        stderr = vals.std(axis=0, ddof=1) / np.sqrt(n_paths)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    return AbarEstimate(value, stderr, method, n_paths, float(burn_in), float(horizon))


@dataclass(frozen=True)
class MixingEstimate:
    beta_hat_sq: float
    slope_stderr: float
    curve: np.ndarray  # (k, 2): t, mean squared distance
    distance_std: np.ndarray  # per record time, spread of the squared distance across paths


def estimate_mixing_rate(model: CoefficientModel, x, y1, y2, horizon: float = 10.0, n_paths: int = 1000,
                         plan: Optional[RandomPlan] = None, dt: float = DEFAULT_DT, n_points: int = 100,
                         fit_window=None, threads=None) -> MixingEstimate:
    """Decay exponent of ``E|Y_t(y1) - Y_t(y2)|^2`` under synchronous coupling.

    Both frozen paths read the same fast Brownian and jump substreams.  The
    exponent is the slope of a least-squares line through
    ``log E|Y_t(y1) - Y_t(y2)|^2`` against ``t`` on ``fit_window``
    (default: the whole horizon).
    """
    y1 = np.asarray(y1, dtype=float).reshape(model.dims.m)
    y2 = np.asarray(y2, dtype=float).reshape(model.dims.m)
    if np.array_equal(y1, y2):
        raise InvalidInputError("y1 and y2 must differ (squared distance would be identically zero)")
    plan = plan or RandomPlan(0)
    from .integrate import n_steps

    K = n_steps(horizon, dt)
    every = max(1, K // n_points)
    r1 = frozen_batch(model, x, y1, horizon, dt, plan, n_paths, record_every=every, threads=threads)
    r2 = frozen_batch(model, x, y2, horizon, dt, plan, n_paths, record_every=every, threads=threads)
    d2 = np.sum((r1.records - r2.records) ** 2, axis=2)  # (paths, records)
    t = np.concatenate([[0.0], r1.record_times])
    mean = np.concatenate([[float(np.sum((y1 - y2) ** 2))], d2.mean(axis=0)])
    spread = np.concatenate([[0.0], d2.std(axis=0)])
    lo, hi = fit_window if fit_window is not None else (0.0, horizon)
    sel = (t >= lo) & (t <= hi) & (mean > 0)
    if sel.sum() < 3:
        raise InvalidInputError("fewer than three positive curve points in the fit window")
    coef, cov = np.polyfit(t[sel], np.log(mean[sel]), 1, cov=True) if sel.sum() > 3 else (
        np.polyfit(t[sel], np.log(mean[sel]), 1), np.zeros((2, 2)))
    return MixingEstimate(float(coef[0]), float(np.sqrt(max(cov[0, 0], 0.0))), np.column_stack([t, mean]), spread)


@dataclass(frozen=True)
class MomentEstimate:
    second_moment: float
    stderr: float
    n_paths: int
    horizon: float


def estimate_invariant_moment(model: CoefficientModel, x, horizon: float = 20.0, n_paths: int = 10000,
                              plan: Optional[RandomPlan] = None, dt: float = DEFAULT_DT, y0=None,
                              threads=None) -> MomentEstimate:
    """Stationary second moment ``int |y|^2 mu^x(dy)`` from ``|Y_horizon|^2`` over paths."""
    plan = plan or RandomPlan(0)
    beta = check_dissipativity(model).beta_hat
    if beta > 0 and horizon * beta < 10:
        log.warning("horizon %.3g is short against the mixing time 1/beta = %.3g", horizon, 1 / beta)
    y0 = np.zeros(model.dims.m) if y0 is None else y0
    res = frozen_batch(model, x, y0, horizon, dt, plan, n_paths, threads=threads)
    sq = np.sum(res.Y_T**2, axis=1)
    stderr = float(sq.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else float("nan")
    return MomentEstimate(float(sq.mean()), stderr, n_paths, float(horizon))


# --- averaged drift ----------------------------------------------------------

def _fd_jacobian(fn, x, h):
    n = x.shape[1]
    cols = []
    for i in range(n):
        hi = h[:, i] if np.ndim(h) == 2 else h
        e = np.zeros_like(x)
        e[:, i] = hi
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * np.reshape(hi, (-1, 1)) if np.ndim(hi) else (2.0 * hi)))
    return np.stack(cols, axis=-1)


@dataclass
class AveragedDrift:
    """The averaged drift, either in closed form or estimated on demand.

    Estimated values are memoised per quantisation cell of side ``quantum``;
    every cell is estimated at its centre with the same dedicated random
    stream, so the estimated drift is a deterministic, smooth-in-``x``
    function of the run configuration.
    """

    model: CoefficientModel
    source: str
    fn: Optional[Callable] = None
    jac: Optional[Callable] = None
    burn_in: Optional[float] = None
    horizon: Optional[float] = None
    n_paths: int = 0
    dt: float = DEFAULT_DT
    quantum: float = 1e-3
    method: str = "time_average"
    plan: Optional[RandomPlan] = None
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def analytic(cls, model: CoefficientModel) -> "AveragedDrift":
        if model.abar_analytic is None:
            raise InvalidInputError(f"model {model.name!r} has no closed-form averaged drift")
        return cls(model, "analytic", model.abar_analytic, model.abar_dx)

    @classmethod
    def from_callable(cls, fn, model: CoefficientModel, jac=None) -> "AveragedDrift":
        return cls(model, "callable", fn, jac)

    @classmethod
    def estimated(cls, model: CoefficientModel, seed: int = 0, burn_in=None, horizon=None, n_paths: int = 64,
                  dt: float = DEFAULT_DT, quantum: float = 1e-3, method: str = "time_average") -> "AveragedDrift":
        if burn_in is None or horizon is None:
            b_def, h_def = default_windows(model)
            burn_in = b_def if burn_in is None else burn_in
            horizon = h_def if horizon is None else horizon
        if not quantum > 0:
            raise InvalidInputError("quantum must be > 0")
        return cls(model, "estimated", burn_in=burn_in, horizon=horizon, n_paths=n_paths, dt=dt,
                   quantum=quantum, method=method, plan=RandomPlan(seed, _mix64(ABAR_STREAM)))

    @classmethod
    def default(cls, model: CoefficientModel, **kw) -> "AveragedDrift":
        """Analytic when the model has a closed form, estimated otherwise."""
        if model.abar_analytic is not None:
            return cls.analytic(model)
        return cls.estimated(model, **kw)

    def compiled_for(self, model: CoefficientModel) -> bool:
        return self.source == "analytic" and model.kernel is not None and self.model.kernel == model.kernel

    def cell(self, x) -> tuple:
        return tuple(int(v) for v in np.round(np.asarray(x, dtype=float).reshape(-1) / self.quantum))

    def lookup(self, x) -> AbarEstimate:
        """Cached estimate for the cell containing ``x`` (estimated source only)."""
        key = self.cell(x)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        centre = np.asarray(key, dtype=float) * self.quantum
        est = estimate_abar(self.model, centre, self.method, self.burn_in, self.horizon, self.n_paths,
                            self.plan, self.dt, threads=1)
        with self._lock:
            return self._cache.setdefault(key, est)

    def value(self, x):
        """Batch evaluation ``(N, n) -> (N, n)``."""
        x = np.asarray(x, dtype=float).reshape(-1, self.model.dims.n)
        if self.source != "estimated":
            return np.asarray(self.fn(x), dtype=float).reshape(x.shape)
        return np.stack([self.lookup(row).value for row in x]) if len(x) else np.empty_like(x)

    def stderr(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.model.dims.n)
        if self.source != "estimated":
            return np.zeros_like(x)
        return np.stack([self.lookup(row).stderr for row in x])

    def jacobian(self, x):
        """Batch Jacobian ``(N, n) -> (N, n, n)``; central differences when no closed form."""
        x = np.asarray(x, dtype=float).reshape(-1, self.model.dims.n)
        if self.jac is not None:
            return np.asarray(self.jac(x), dtype=float).reshape(len(x), x.shape[1], x.shape[1])
        if self.source == "estimated":
            h = self.quantum * max(1, round(1e-2 / self.quantum))
            return _fd_jacobian(self.value, x, h)
        h = 1e-5 * np.maximum(1.0, np.abs(x))
        return _fd_jacobian(self.value, x, h)

    def __call__(self, x):
        """Single-point convenience: ``x`` of shape ``(n,)`` -> ``(n,)``."""
        return self.value(np.asarray(x, dtype=float).reshape(1, -1))[0]
