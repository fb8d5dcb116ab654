"""Monte Carlo weak and strong errors of the averaging approximation and rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, InvalidInputError
from .integrate import ScaleParams, as_drift, averaged_batch, coupled_batch
from .model import CoefficientModel
from .randomness import RandomPlan

__all__ = [
    "Observable",
    "MCEstimate",
    "RateFit",
    "OBSERVABLES",
    "make_observable",
    "mc_estimate",
    "n_rule",
    "estimate_u_eps",
    "estimate_u_bar",
    "weak_error",
    "strong_error",
    "coupled_errors",
    "fit_rate",
]

# stream offset for the independent averaged sample in uncoupled estimates
UNCOUPLED_STREAM = 1


@dataclass(frozen=True)
class Observable:
    """Test function ``phi`` on the slow state, batch form ``(N, n) -> (N,)``."""

    name: str
    phi: Callable
    dphi: Optional[Callable] = None  # (N, n) -> (N, n) gradient, if known
    smoothness: str = "C3b"

    def __call__(self, x):
        return np.asarray(self.phi(np.atleast_2d(np.asarray(x, dtype=float))), dtype=float)

    def gradient(self, x, step: float = 1e-5):
        """Analytic gradient when available, else scale-aware central differences."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dphi is not None:
            return np.asarray(self.dphi(x), dtype=float).reshape(x.shape)
        out = np.empty_like(x)
        for i in range(x.shape[1]):
            h = step * np.maximum(1.0, np.abs(x[:, i]))
            e = np.zeros_like(x)
            e[:, i] = h
            out[:, i] = (self.phi(x + e) - self.phi(x - e)) / (2.0 * h)
        return out


def _tanh_sum(x):
    return np.tanh(x).sum(axis=1)


def _tanh_sum_grad(x):
    return 1.0 / np.cosh(x) ** 2


OBSERVABLES = {
    "tanh": Observable("tanh", _tanh_sum, _tanh_sum_grad),
    "identity": Observable("identity", lambda x: x.sum(axis=1), lambda x: np.ones_like(x), "C-inf (unbounded)"),
    "one": Observable("one", lambda x: np.ones(len(x)), lambda x: np.zeros_like(x), "constant"),
}


def make_observable(name_or_obs) -> Observable:
    if isinstance(name_or_obs, Observable):
        return name_or_obs
    try:
        return OBSERVABLES[name_or_obs]
    except KeyError:
        raise InvalidInputError(f"unknown observable {name_or_obs!r}; known: {sorted(OBSERVABLES)}") from None


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int

    def interval(self, k: float = 3.0):
        return self.mean - k * self.stderr, self.mean + k * self.stderr


def mc_estimate(values) -> MCEstimate:
    """Mean and standard error of a sample; the sum is ordered so thread count never matters."""
    v = np.asarray(values, dtype=float).reshape(-1)
    n = v.size
    if n < 2:
        raise InvalidInputError("need at least two samples")
    mean = math.fsum(v) / n
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return MCEstimate(mean, math.sqrt(var / n), n)


def n_rule(epsilon: float, n0: int, eps0: float) -> int:
    """Sample count ``n0 * max(1, eps0/epsilon)``, rounded to the nearest integer."""
    if not (epsilon > 0 and eps0 > 0 and n0 >= 2):
        raise InvalidInputError("n_rule needs epsilon, eps0 > 0 and n0 >= 2")
    return int(round(n0 * max(1.0, eps0 / epsilon)))


def _check_n(n):
    if n < 2:
        raise InvalidInputError(f"n must be >= 2, got {n}")


def estimate_u_eps(model: CoefficientModel, scale: ScaleParams, x, y, obs, n: int, plan: RandomPlan,
                   threads=None) -> MCEstimate:
    """``E phi(X^eps_T(x, y))`` by forward simulation."""
    _check_n(n)
    obs = make_observable(obs)
    res = coupled_batch(model, scale, x, y, plan, n, threads=threads)
    return mc_estimate(obs(res.X_T))


def estimate_u_bar(abar, model: CoefficientModel, x, obs, T: float, dt: float, n: int, plan: RandomPlan,
                   threads=None) -> MCEstimate:
    """``E phi(Xbar_T(x))`` with the averaged integrator."""
    _check_n(n)
    obs = make_observable(obs)
    xb, _ = averaged_batch(abar, model, x, T, dt, plan, n, threads=threads)
    return mc_estimate(obs(xb))


def coupled_errors(model, abar, scale: ScaleParams, x, y, obs, n: int, plan: RandomPlan, threads=None):
    """Weak and strong errors from one set of synchronously coupled samples.

    Returns ``(weak, strong)``; ``strong`` is ``E|X^eps_T - Xbar_T|``.
    """
    _check_n(n)
    obs = make_observable(obs)
    res = coupled_batch(model, scale, x, y, plan, n, abar=as_drift(abar, model), threads=threads)
    weak = mc_estimate(obs(res.X_T) - obs(res.Xbar_T))
    strong = mc_estimate(np.linalg.norm(res.X_T - res.Xbar_T, axis=1))
    return weak, strong


def weak_error(model, abar, scale: ScaleParams, x, y, obs, n: int, plan: RandomPlan, coupled: bool = True,
               threads=None) -> MCEstimate:
    """``E phi(X^eps_T) - E phi(Xbar_T)``.

    Coupled: mean of per-sample differences on shared slow noise.
    Uncoupled: the averaged sample is drawn from an independent stream and
    the standard errors of the two means are combined.
    """
    if coupled:
        return coupled_errors(model, abar, scale, x, y, obs, n, plan, threads)[0]
    u_eps = estimate_u_eps(model, scale, x, y, obs, n, plan, threads)
    other = plan.child(plan.stream_id + UNCOUPLED_STREAM)
    u_bar = estimate_u_bar(abar, model, x, obs, scale.T, scale.dt, n, other, threads)
    return MCEstimate(u_eps.mean - u_bar.mean, math.hypot(u_eps.stderr, u_bar.stderr), n)


def strong_error(model, abar, scale: ScaleParams, x, y, n: int, plan: RandomPlan, threads=None) -> MCEstimate:
    """``E|X^eps_T - Xbar_T|`` under synchronous coupling of the slow noise."""
    return coupled_errors(model, abar, scale, x, y, "one", n, plan, threads)[1]


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    slope_ci: tuple
    points: tuple  # (epsilon, error, stderr) actually used
    excluded: tuple = field(default=())  # (epsilon, error, stderr) dropped as statistically zero


def fit_rate(points, level: float = 0.95) -> RateFit:
    """Weighted least squares of ``log|error|`` on ``log epsilon``.

    Points with ``|error| <= 2 stderr`` are dropped.  In log space a point's
    standard error is ``stderr/|error|``, so the weights are
    ``(error/stderr)^2``; points with zero stderr get unit weight when every
    point has zero stderr.  The confidence interval uses Student t on
    ``k - 2`` degrees of freedom with the residual-scaled covariance.
    """
    pts = [(float(e), float(err), float(se)) for e, err, se in points]
    eps = [p[0] for p in pts]
    if any(not e > 0 for e in eps) or len(set(eps)) != len(eps):
        raise InvalidInputError("epsilons must be positive and distinct")
    used = [p for p in pts if abs(p[1]) > 2.0 * p[2] and p[1] != 0.0]
    excluded = tuple(p for p in pts if p not in used)
    if len(used) < 3:
        raise InsufficientDataError(f"{len(used)} usable points (need 3)", excluded)
    e = np.array([p[0] for p in used])
    err = np.abs([p[1] for p in used])
    se = np.array([p[2] for p in used])
    lx, ly = np.log(e), np.log(err)
    if np.all(se > 0):
        w = (err / se) ** 2
    else:
        w = np.ones_like(e)
    A = np.column_stack([lx, np.ones_like(lx)])
    WA = A * w[:, None]
    normal = A.T @ WA
    coef = np.linalg.solve(normal, WA.T @ ly)
    resid = ly - A @ coef
    dof = len(e) - 2
    ybar = np.sum(w * ly) / np.sum(w)
    ss_tot = float(np.sum(w * (ly - ybar) ** 2))
    ss_res = float(np.sum(w * resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    cov = np.linalg.inv(normal) * (ss_res / dof if dof > 0 else 0.0)
    half = float(stats.t.ppf(0.5 + level / 2, dof) * math.sqrt(max(cov[0, 0], 0.0))) if dof > 0 else math.inf
    slope = float(coef[0])
    return RateFit(slope, float(coef[1]), r2, (slope - half, slope + half), tuple(used), excluded)
