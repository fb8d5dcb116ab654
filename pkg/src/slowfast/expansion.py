"""First-order expansion ``u^eps = ubar + eps*u1 + r^eps`` estimated by simulation.

``ubar(t, x) = E phi(Xbar_t(x))`` plays the role of the leading term.  The
correction is ``u1(t, x, y) = int_0^inf E rho(t, x, Y^x_s(y)) ds`` with
``rho(t, x, y) = (a(x, y) - abar(x), D_x ubar(t, x))``, and the remainder is
whatever is left over.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass

import numpy as np

from .ergodic import AveragedDrift, default_windows
from .errors import InvalidInputError
from .integrate import ScaleParams, as_drift, averaged_batch, coupled_batch, frozen_batch
from .model import CoefficientModel, check_dissipativity, lipschitz_probe
from .randomness import RandomPlan
from .weakerror import MCEstimate, make_observable, mc_estimate

log = logging.getLogger(__name__)

__all__ = [
    "ExpansionReport",
    "U1Estimate",
    "estimate_Dx_ubar",
    "fd_Dx_ubar",
    "gradient_ubar",
    "estimate_rho",
    "rho_centering",
    "estimate_u1",
    "residual_check",
    "residual_spread",
]

FD_DELTA = 1e-3
DX_QUANTUM = 1e-3


def _direction(k, n):
    k = np.asarray(k, dtype=float).reshape(-1)
    if k.size != n:
        raise InvalidInputError(f"direction must have {n} components")
    if not np.any(k):
        raise InvalidInputError("direction must be nonzero")
    return k


def estimate_Dx_ubar(abar, model: CoefficientModel, obs, T: float, x, direction, n: int, dt: float,
                     plan: RandomPlan, threads=None) -> MCEstimate:
    """``D_x ubar(T, x) . k = E[phi'(Xbar_T) . eta_T]`` with the first-variation process."""
    k = _direction(direction, model.dims.n)
    obs = make_observable(obs)
    xb, eta = averaged_batch(abar, model, x, T, dt, plan, n, direction=k, threads=threads)
    return mc_estimate(np.sum(obs.gradient(xb) * eta, axis=1))


def fd_Dx_ubar(abar, model: CoefficientModel, obs, T: float, x, direction, n: int, dt: float,
               plan: RandomPlan, delta: float = FD_DELTA, threads=None) -> MCEstimate:
    """Central difference of ``ubar`` along ``k`` with common random numbers."""
    k = _direction(direction, model.dims.n)
    obs = make_observable(obs)
    x = np.asarray(x, dtype=float).reshape(-1)
    hi, _ = averaged_batch(abar, model, x + delta * k, T, dt, plan, n, threads=threads)
    lo, _ = averaged_batch(abar, model, x - delta * k, T, dt, plan, n, threads=threads)
    return mc_estimate((obs(hi) - obs(lo)) / (2.0 * delta))


_dx_lock = threading.Lock()


def gradient_ubar(abar, model: CoefficientModel, obs, T: float, x, n: int, dt: float, plan: RandomPlan,
                  threads=None):
    """``D_x ubar(T, x)`` as ``(value, stderr)`` arrays, one direction per coordinate.

    Cached on the drift object per ``(T, quantised x)`` and estimator settings.
    """
    obs = make_observable(obs)
    drift = as_drift(abar, model)
    x = np.asarray(x, dtype=float).reshape(-1)
    key = (id(model), obs.name, float(T), tuple(np.round(x / DX_QUANTUM).astype(int)),
           int(n), float(dt), plan)
    with _dx_lock:
        cache = drift.__dict__.setdefault("_dx_cache", {})
        hit = cache.get(key) if model is drift.model else None
    if hit is not None:
        return hit
    nd = model.dims.n
    vals, errs = np.empty(nd), np.empty(nd)
    for i in range(nd):
        est = estimate_Dx_ubar(drift, model, obs, T, x, np.eye(nd)[i], n, dt, plan, threads)
        vals[i], errs[i] = est.mean, est.stderr
    with _dx_lock:
        return cache.setdefault(key, (vals, errs)) if model is drift.model else (vals, errs)


def _centred_drift(model, drift, x, y):
    """``a(x, y) - abar(x)`` and the standard error of ``abar(x)``."""
    xa = np.asarray(x, dtype=float).reshape(1, -1)
    ya = np.asarray(y, dtype=float).reshape(1, -1)
    return (model.a(xa, ya) - drift.value(xa))[0], drift.stderr(xa)[0]


def estimate_rho(model: CoefficientModel, abar, obs, t: float, x, y, n: int, plan: RandomPlan,
                 dt: float = 0.01, threads=None) -> MCEstimate:
    """``rho(t, x, y) = (a(x, y) - abar(x), D_x ubar(t, x))``.

    The standard error propagates those of ``D_x ubar`` and of an estimated
    ``abar``.
    """
    drift = as_drift(abar, model)
    D, D_se = gradient_ubar(drift, model, obs, t, x, n, dt, plan, threads)
    c, c_se = _centred_drift(model, drift, x, y)
    value = float(np.dot(c, D))
    stderr = math.sqrt(float(np.sum((c * D_se) ** 2 + (c_se * D) ** 2)))
    return MCEstimate(value, stderr, n)


def rho_centering(model: CoefficientModel, abar, obs, t: float, x, n: int, plan: RandomPlan,
                  horizon=None, dt: float = 0.01, y0=None, threads=None) -> MCEstimate:
    """Average of ``rho(t, x, Y)`` over ``Y`` drawn (approximately) from the invariant measure.

    The frozen process is run to ``horizon`` (default ``10/beta``) from
    ``y0``; the result should vanish up to statistical error.
    """
    drift = as_drift(abar, model)
    if horizon is None:
        horizon = default_windows(model)[0]
    y0 = np.zeros(model.dims.m) if y0 is None else y0
    D, D_se = gradient_ubar(drift, model, obs, t, x, n, dt, plan, threads)
    res = frozen_batch(model, x, y0, horizon, dt, plan.child(plan.stream_id + 1), n, threads=threads)
    xa = np.repeat(np.asarray(x, dtype=float).reshape(1, -1), n, axis=0)
    centred = model.a(xa, res.Y_T) - drift.value(xa[:1])
    est = mc_estimate(centred @ D)
    # D is shared by all samples; its error scales the mean
    extra = float(np.sum((centred.mean(axis=0) * D_se) ** 2))
    return MCEstimate(est.mean, math.sqrt(est.stderr**2 + extra), n)


@dataclass(frozen=True)
class U1Estimate:
    mean: float
    stderr: float
    n: int
    S: float
    tail_bound: float
    warnings: tuple = ()

    @property
    def estimate(self) -> MCEstimate:
        return MCEstimate(self.mean, self.stderr, self.n)


def estimate_u1(model: CoefficientModel, abar, obs, t: float, x, y, S=None, n: int = 10000, dt: float = 0.01,
                plan: RandomPlan | None = None, n_dx=None, threads=None) -> U1Estimate:
    """Correction ``u1(t, x, y) = int_0^S E rho(t, x, Y^x_s(y)) ds`` plus a tail bound.

    One frozen path per sample carries the whole ``s`` profile; the
    integral of ``a(x, Y_s)`` is a left-point sum on the path's jump-adapted
    grid, which keeps the discrete mean balance exact.  The neglected tail ``int_S^inf`` is bounded
    by ``L_a (2/beta) exp(-beta S/2) sqrt(E|y - Z|^2) |D_x ubar|`` with
    ``Z`` stationary and ``L_a`` the Lipschitz probe of ``a``.
    """
    plan = plan or RandomPlan(0)
    drift = as_drift(abar, model)
    beta = check_dissipativity(model).beta_hat
    if not beta > 0:
        raise InvalidInputError(f"dissipativity probe gave beta_hat={beta}; u1 needs beta > 0")
    if S is None:
        S = 10.0 / beta
    warnings = []
    if S < 10.0 / beta:
        warnings.append(f"S={S:.6g} is below 10/beta={10.0 / beta:.6g}")
    D, D_se = gradient_ubar(drift, model, obs, t, x, n_dx or n, dt, plan, threads)
    x_arr = np.asarray(x, dtype=float).reshape(1, -1)
    res = frozen_batch(model, x_arr[0], y, S, dt, plan.child(plan.stream_id + 1), n, window=(0.0, S),
                       threads=threads)
    abar_x = drift.value(x_arr)[0]
    J = res.integral[:, 0, :] - abar_x * S  # int_0^S (a - abar) ds per path
    J_mean = np.array([math.fsum(col) / n for col in J.T])
    J_se = J.std(axis=0, ddof=1) / math.sqrt(n)
    value = float(np.dot(J_mean, D))
    stderr = math.sqrt(float(np.sum((D * J_se) ** 2 + (J_mean * D_se) ** 2)))
    if drift.source == "estimated":
        stderr = math.hypot(stderr, float(np.linalg.norm(drift.stderr(x_arr)[0] * D)) * S)

    y_arr = np.asarray(y, dtype=float).reshape(-1)
    dist2 = float(np.mean(np.sum((res.Y_T - y_arr) ** 2, axis=1)))
    L_a = lipschitz_probe(model)["a"]
    tail = L_a * (2.0 / beta) * math.exp(-beta * S / 2.0) * math.sqrt(dist2) * float(np.linalg.norm(D))
    if tail > stderr:
        warnings.append(f"tail bound {tail:.3g} exceeds stderr {stderr:.3g}; increase S")
    for w in warnings:
        log.warning(w)
    return U1Estimate(value, stderr, n, float(S), tail, tuple(warnings))


@dataclass(frozen=True)
class ExpansionReport:
    epsilon: float
    u_eps: MCEstimate
    u_bar: MCEstimate
    difference: MCEstimate  # coupled estimate of u_eps - u_bar
    u1_hat: MCEstimate
    r_eps: float
    r_stderr: float
    S: float
    tail_bound: float

    @property
    def ratio(self) -> float:
        return abs(self.r_eps) / self.epsilon


def residual_check(model: CoefficientModel, abar, obs, x, y, epsilons, n: int, plan: RandomPlan,
                   T: float = 1.0, dt=None, S=None, n_u1=None, u1: U1Estimate | None = None,
                   threads=None) -> list:
    """Per-epsilon reports of ``r^eps = u^eps - ubar - eps*u1``.

    ``u^eps`` and ``ubar`` come from the same synchronously coupled samples,
    so their difference is estimated with the small coupled variance;
    ``dt`` defaults to ``0.1 * min(epsilons)`` for every epsilon.
    """
    eps = sorted({float(e) for e in epsilons}, reverse=True)
    if len(eps) < 2 or len(eps) != len(list(epsilons)):
        raise InvalidInputError("residual_check needs at least two distinct epsilons")
    obs = make_observable(obs)
    drift = as_drift(abar, model)
    dt = 0.1 * min(eps) if dt is None else dt
    if u1 is None:
        u1 = estimate_u1(model, drift, obs, T, x, y, S, n_u1 or n, plan=plan, threads=threads)
    u1_est = u1.estimate
    reports = []
    for e in eps:
        res = coupled_batch(model, ScaleParams(e, T, dt), x, y, plan, n, abar=drift, threads=threads)
        pe, pb = obs(res.X_T), obs(res.Xbar_T)
        u_eps, u_bar, diff = mc_estimate(pe), mc_estimate(pb), mc_estimate(pe - pb)
        r = u_eps.mean - u_bar.mean - e * u1_est.mean
        r_se = math.hypot(diff.stderr, e * u1_est.stderr)
        reports.append(ExpansionReport(e, u_eps, u_bar, diff, u1_est, r, r_se, u1.S, u1.tail_bound))
    return reports


def residual_spread(reports, k: float = 3.0) -> float:
    """Smallest consistent value of ``max |r|/eps`` over ``min |r|/eps``.

    Each ratio is shrunk or inflated by ``k`` standard errors (and the tail
    bound of ``u1``) in the direction that favours boundedness; a result of
    ``inf`` means some ratio is statistically indistinguishable from zero.
    """
    hi = max((abs(r.r_eps) - k * r.r_stderr - r.epsilon * r.tail_bound) / r.epsilon for r in reports)
    lo = min((abs(r.r_eps) + k * r.r_stderr + r.epsilon * r.tail_bound) / r.epsilon for r in reports)
    if lo <= 0:
        return math.inf
    return max(hi, 0.0) / lo
