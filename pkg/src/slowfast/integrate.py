"""Jump-adapted Euler-Maruyama integration of the slow/fast system.

Scheme, per uniform step ``[t_k, t_{k+1}]``:

* the slow grid is the uniform grid plus the slow-jump times; on each slow
  sub-interval ``[s, s']`` the slow state moves by
  ``a(X_s, Y_s) (s'-s) + b(X_s) dB``, then jumps by ``c(X_{s'-})`` if
  ``s'`` is a slow-jump time;
* inside a slow sub-interval the fast state is refined at its own jump
  times, moving by ``f/eps dt + g/sqrt(eps) dW`` and jumping by
  ``h(X, Y_-)``, with ``X`` held at its left node value.

The averaged equation and the first variation use the slow grid only and the
same ``B``/``P`` substreams, so a shared plan couples them to the slow
component of the coupled system sample by sample.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _engine, backend
from .errors import BlowUpError, InvalidInputError
from .model import CoefficientModel
from .randomness import MAX_REFINE, RandomPlan

__all__ = [
    "ScaleParams",
    "TimeGrid",
    "PathRecord",
    "CoupledResult",
    "AveragedResult",
    "FrozenPath",
    "build_time_grid",
    "n_steps",
    "simulate_coupled",
    "simulate_frozen",
    "simulate_averaged",
    "simulate_first_variation",
    "coupled_batch",
    "averaged_batch",
    "frozen_batch",
    "as_drift",
    "write_path_csv",
]


@dataclass(frozen=True)
class ScaleParams:
    """Timescale ratio ``epsilon``, horizon ``T`` and base step ``dt``.

    ``dt`` must resolve the fast relaxation: ``dt <= dt_fast_factor * epsilon``.
    ``refine = r > 0`` draws the step increments as the ``r``-fold dyadic
    refinement of a path on step ``dt * 2**r``, so runs at ``dt`` and
    ``dt / 2`` with ``refine`` and ``refine + 1`` share their Brownian paths.
    """

    epsilon: float
    T: float
    dt: float
    dt_fast_factor: float = 0.1
    refine: int = 0

    def __post_init__(self):
        eps, T, dt = float(self.epsilon), float(self.T), float(self.dt)
        if not (0 < eps <= 1):
            raise InvalidInputError(f"epsilon must lie in (0, 1], got {eps}")
        if not (np.isfinite(T) and T > 0):
            raise InvalidInputError(f"T must be > 0, got {T}")
        if not (dt > 0 and dt <= eps * self.dt_fast_factor * (1 + 1e-12)):
            raise InvalidInputError(
                f"dt={dt} must satisfy 0 < dt <= {self.dt_fast_factor} * epsilon = {eps * self.dt_fast_factor}"
            )
        check_refine(self.refine, T, dt)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "dt", dt)


def check_refine(refine, T, dt):
    if isinstance(refine, bool) or not isinstance(refine, (int, np.integer)) or not 0 <= refine <= MAX_REFINE:
        raise InvalidInputError(f"refine must be an integer in [0, {MAX_REFINE}], got {refine!r}")
    if refine > 0 and abs(T / dt - round(T / dt)) > 1e-9 * max(1.0, T / dt):
        raise InvalidInputError("refine > 0 needs T to be a whole number of steps dt")


def n_steps(T: float, dt: float) -> int:
    """Number of uniform steps; the last one is shortened to land on ``T``."""
    if dt <= 0 or T <= 0:
        raise InvalidInputError("T and dt must be > 0")
    r = T / dt
    k = round(r)
    if abs(r - k) <= 1e-9 * max(1.0, r):
        return max(int(k), 1)
    return int(math.ceil(r))


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray
    jumps: dict  # role -> bool array over nodes

    def __len__(self):
        return len(self.nodes)


def build_time_grid(T: float, dt: float, schedules: Optional[dict] = None) -> TimeGrid:
    """Union of the uniform grid of step ``dt`` on ``[0, T]`` with all jump times."""
    K = n_steps(T, dt)
    uniform = np.append(np.arange(K) * dt, T)
    schedules = schedules or {}
    parts = [uniform] + [np.asarray(s.times, dtype=float) for s in schedules.values()]
    nodes = np.unique(np.concatenate(parts))
    jumps = {role: np.isin(nodes, np.asarray(s.times, dtype=float)) for role, s in schedules.items()}
    return TimeGrid(nodes, jumps)


@dataclass
class PathRecord:
    """Node-by-node trace; ``flags`` marks the jump process firing at each node."""

    t: list = field(default_factory=list)
    X: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def as_arrays(self):
        return np.asarray(self.t), np.asarray(self.X), np.asarray(self.Y)


@dataclass
class CoupledResult:
    X_T: np.ndarray
    Y_T: np.ndarray
    X_path: Optional[PathRecord] = None
    Xbar_T: Optional[np.ndarray] = None
    state: Optional[_engine.EngineState] = None


@dataclass
class AveragedResult:
    Xbar_T: np.ndarray
    path: Optional[PathRecord] = None
    eta_T: Optional[np.ndarray] = None


@dataclass
class FrozenPath:
    t: np.ndarray
    Y: np.ndarray

    def at(self, times):
        """State at the given times (right-continuous: post-jump value at a jump node)."""
        idx = np.searchsorted(self.t, np.asarray(times, dtype=float), side="right") - 1
        return self.Y[np.clip(idx, 0, len(self.t) - 1)]


def as_drift(abar, model: CoefficientModel):
    """Accept an ``AveragedDrift`` or a plain batch callable ``(N, n) -> (N, n)``."""
    from .ergodic import AveragedDrift

    if isinstance(abar, AveragedDrift):
        return abar
    if callable(abar):
        return AveragedDrift.from_callable(abar, model)
    raise InvalidInputError("abar must be an AveragedDrift or a callable")


def _vec(v, dim, what):
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.size == 1 and dim > 1:
        arr = np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise InvalidInputError(f"{what} must have {dim} components, got {arr.size}")
    return arr


def _compiled_ok(model, drift=None):
    if backend.core() is None or model.kernel is None or model.kernel[0] != "jump_ou":
        return False
    return drift is None or drift.compiled_for(model)


def _chunks(n, size):
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def _run_chunks(jobs, threads):
    threads = threads or backend.default_threads()
    if threads <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: job(), jobs))


def _key64(plan, role):
    k0, k1 = plan.key(role)
    return k0 | (k1 << 32)


def _raise_if_failed(status):
    sample, t = status
    if sample >= 0:
        raise BlowUpError(float(t), int(sample))


@dataclass
class CoupledBatch:
    X_T: np.ndarray
    Y_T: np.ndarray
    Xbar_T: Optional[np.ndarray]


def coupled_batch(model, scale: ScaleParams, x0, y0, plan: RandomPlan, n: int, start: int = 0,
                  abar=None, threads=None, chunk: int = 16384) -> CoupledBatch:
    """Terminal states of ``n`` coupled samples ``start .. start+n-1``.

    With ``abar`` given, also integrates the averaged path on the same slow
    noise (synchronous coupling).
    """
    dims = model.dims
    x0, y0 = _vec(x0, dims.n, "x0"), _vec(y0, dims.m, "y0")
    drift = as_drift(abar, model) if abar is not None else None
    K = n_steps(scale.T, scale.dt)
    inv_eps = 1.0 / scale.epsilon
    inv_sqrt_eps = 1.0 / math.sqrt(scale.epsilon)
    rate_n = model.lambda2 / scale.epsilon
    X = np.empty((n, dims.n))
    Y = np.empty((n, dims.m))
    Xb = np.empty((n, dims.n)) if drift is not None else None

    if _compiled_ok(model, drift):
        core = backend.core()
        _, gamma, sigma, kappa, sigma_b, c0, bounded = model.kernel
        lam_kappa = model.lambda2 * kappa
        keys = [_key64(plan, r) for r in "BWPN"]
        xs, ys, xbs = X[:, 0], Y[:, 0], np.empty(n)

        def job(lo, hi):
            return lambda: core.coupled(
                gamma, sigma, kappa, sigma_b, c0, bounded, model.lambda1, rate_n, lam_kappa,
                float(x0[0]), float(y0[0]), inv_eps, inv_sqrt_eps, scale.T, scale.dt, K,
                *keys, start + lo, xs[lo:hi], ys[lo:hi], xbs[lo:hi], drift is not None, scale.refine)

        for status in _run_chunks([job(lo, hi) for lo, hi in _chunks(n, chunk)], threads):
            _raise_if_failed(status)
        X[:, 0], Y[:, 0] = xs, ys
        if Xb is not None:
            Xb[:, 0] = xbs
        return CoupledBatch(X, Y, Xb)

    def pyjob(lo, hi):
        def run():
            samples = np.arange(start + lo, start + hi, dtype=np.uint64)
            m = hi - lo
            state = _engine.EngineState(
                0, np.tile(x0, (m, 1)), np.tile(y0, (m, 1)),
                np.tile(x0, (m, 1)) if drift is not None else None)
            _engine.coupled(model, state, K, scale.T, scale.dt, inv_eps, inv_sqrt_eps, rate_n, plan,
                            samples, abar=drift, refine=scale.refine)
            X[lo:hi], Y[lo:hi] = state.X, state.Y
            if Xb is not None:
                Xb[lo:hi] = state.Xb
        return run

    _run_chunks([pyjob(lo, hi) for lo, hi in _chunks(n, min(chunk, 4096))], threads)
    return CoupledBatch(X, Y, Xb)


def averaged_batch(abar, model, x0, T, dt, plan: RandomPlan, n: int, start: int = 0,
                   direction=None, threads=None, chunk: int = 16384, refine: int = 0):
    """Averaged terminal states (and first variations along ``direction``)."""
    check_refine(refine, T, dt)
    dims = model.dims
    x0 = _vec(x0, dims.n, "x0")
    drift = as_drift(abar, model)
    K = n_steps(T, dt)
    eta0 = None if direction is None else _vec(direction, dims.n, "direction")
    if eta0 is not None and not np.any(eta0):
        raise InvalidInputError("direction must be nonzero")
    Xb = np.empty((n, dims.n))
    eta = np.empty((n, dims.n)) if eta0 is not None else None

    if _compiled_ok(model, drift):
        core = backend.core()
        _, gamma, sigma, kappa, sigma_b, c0, bounded = model.kernel
        lam_kappa = model.lambda2 * kappa
        kb, kp = _key64(plan, "B"), _key64(plan, "P")
        xbs, etas = np.empty(n), np.empty(n)
        e0 = 0.0 if eta0 is None else float(eta0[0])

        def job(lo, hi):
            return lambda: core.averaged(gamma, sigma_b, c0, model.lambda1, lam_kappa, float(x0[0]), e0,
                                         T, dt, K, kb, kp, start + lo, xbs[lo:hi], etas[lo:hi],
                                         eta0 is not None, refine)

        for status in _run_chunks([job(lo, hi) for lo, hi in _chunks(n, chunk)], threads):
            _raise_if_failed(status)
        Xb[:, 0] = xbs
        if eta is not None:
            eta[:, 0] = etas
        return Xb, eta

    def pyjob(lo, hi):
        def run():
            samples = np.arange(start + lo, start + hi, dtype=np.uint64)
            m = hi - lo
            state = _engine.EngineState(0, None, Xb=np.tile(x0, (m, 1)),
                                        eta=None if eta0 is None else np.tile(eta0, (m, 1)))
            _engine.averaged(model, drift, state, K, T, dt, plan, samples, refine=refine)
            Xb[lo:hi] = state.Xb
            if eta is not None:
                eta[lo:hi] = state.eta
        return run

    _run_chunks([pyjob(lo, hi) for lo, hi in _chunks(n, min(chunk, 4096))], threads)
    return Xb, eta


@dataclass
class FrozenBatch:
    Y_T: np.ndarray
    integral: np.ndarray
    records: np.ndarray
    record_times: np.ndarray


def frozen_batch(model, x, y0, horizon, dt, plan: RandomPlan, n: int, start: int = 0,
                 window=None, record_every: int = 0, bins: int = 1, threads=None,
                 chunk: int = 16384, refine: int = 0) -> FrozenBatch:
    """Frozen fast paths at slow state ``x`` with intensity ``lambda2``.

    ``window=(t_lo, t_hi)`` selects the span (snapped to uniform nodes) over
    which the left-point integral of ``a(x, Y)`` is accumulated; the span is
    cut into ``bins`` equal groups of steps and ``integral`` has shape
    ``(n, bins, dim_x)``.
    """
    if not (horizon > 0 and dt > 0):
        raise InvalidInputError("horizon and dt must be > 0")
    check_refine(refine, horizon, dt)
    dims = model.dims
    x = _vec(x, dims.n, "x")
    y0 = _vec(y0, dims.m, "y0")
    K = n_steps(horizon, dt)
    k_lo, k_hi = 0, 0
    if window is not None:
        k_lo = int(round(window[0] / dt))
        k_hi = min(K, int(round(window[1] / dt)))
        if k_hi - k_lo < bins:
            raise InvalidInputError("integration window shorter than the number of bins")
    n_rec = K // record_every if record_every > 0 else 0
    rec_times = np.array([min((r + 1) * record_every * dt, horizon) for r in range(n_rec)])
    Y = np.empty((n, dims.m))
    integral = np.empty((n, bins, dims.n))
    records = np.empty((n, n_rec, dims.m))

    if _compiled_ok(model):
        core = backend.core()
        _, gamma, sigma, kappa, sigma_b, c0, bounded = model.kernel
        kw, kn = _key64(plan, "W"), _key64(plan, "N")
        ys, ints = np.empty(n), np.zeros((n, bins))
        recs = np.empty((n, n_rec))

        def job(lo, hi):
            return lambda: core.frozen(gamma, sigma, kappa, bounded, float(x[0]), float(y0[0]), horizon, dt,
                                       K, kw, kn, model.lambda2, start + lo, k_lo, k_hi, record_every,
                                       ys[lo:hi], ints[lo:hi], recs[lo:hi], refine)

        for status in _run_chunks([job(lo, hi) for lo, hi in _chunks(n, chunk)], threads):
            _raise_if_failed(status)
        Y[:, 0], integral[:, :, 0], records[:, :, 0] = ys, ints, recs
        return FrozenBatch(Y, integral, records, rec_times)

    def pyjob(lo, hi):
        def run():
            samples = np.arange(start + lo, start + hi, dtype=np.uint64)
            yt, acc, rec = _engine.frozen(model, x, np.tile(y0, (hi - lo, 1)), K, horizon, dt, plan,
                                          samples, model.lambda2, k_lo, k_hi, record_every, bins=bins,
                                          refine=refine)
            Y[lo:hi], integral[lo:hi], records[lo:hi] = yt, acc, rec
        return run

    _run_chunks([pyjob(lo, hi) for lo, hi in _chunks(n, min(chunk, 4096))], threads)
    return FrozenBatch(Y, integral, records, rec_times)


# --- single-path operations --------------------------------------------------

def simulate_coupled(model: CoefficientModel, scale: ScaleParams, x0, y0, plan: RandomPlan,
                     sample: int = 0, record_path: bool = False, resume=None, until=None,
                     abar=None) -> CoupledResult:
    """One path of the coupled system up to ``scale.T`` (or ``until``).

    ``resume`` continues from the ``state`` of an earlier call on the same
    plan; the uniform-step and jump counters pick up where they stopped, so
    splitting ``[0, T]`` into two calls reproduces a single call exactly.
    """
    dims = model.dims
    K_total = n_steps(scale.T, scale.dt)
    K = K_total if until is None else n_steps(until, scale.dt)
    T_end = scale.T if until is None else until
    drift = as_drift(abar, model) if abar is not None else None
    samples = np.array([sample], dtype=np.uint64)
    if resume is None:
        x0, y0 = _vec(x0, dims.n, "x0"), _vec(y0, dims.m, "y0")
        state = _engine.EngineState(0, x0[None, :].copy(), y0[None, :].copy(),
                                    x0[None, :].copy() if drift is not None else None)
    else:
        state = resume
    rec = None
    path = None
    if record_path:
        path = PathRecord()
        if state.k == 0:
            path.t.append(0.0)
            path.X.append(state.X[0].copy())
            path.Y.append(state.Y[0].copy())
            path.flags.append("")

        def rec(t, X, Y, Xb, flag):
            path.t.append(t)
            path.X.append(X.copy())
            path.Y.append(Y.copy())
            path.flags.append(flag)

    inv_eps = 1.0 / scale.epsilon
    inv_sqrt_eps = 1.0 / math.sqrt(scale.epsilon)
    _engine.coupled(model, state, K, T_end if K < K_total else scale.T, scale.dt, inv_eps, inv_sqrt_eps,
                    model.lambda2 / scale.epsilon, plan, samples, abar=drift, recorder=rec,
                    refine=scale.refine)
    return CoupledResult(state.X[0].copy(), state.Y[0].copy(), path,
                         None if drift is None else state.Xb[0].copy(), state)


def simulate_averaged(abar, model: CoefficientModel, x0, T, dt, plan: RandomPlan, sample: int = 0,
                      record_path: bool = False, refine: int = 0) -> AveragedResult:
    """One path of the averaged equation driven by the plan's slow substreams."""
    check_refine(refine, T, dt)
    drift = as_drift(abar, model)
    x0 = _vec(x0, model.dims.n, "x0")
    state = _engine.EngineState(0, None, Xb=x0[None, :].copy())
    path = None
    rec = None
    if record_path:
        path = PathRecord(t=[0.0], X=[x0.copy()], Y=[], flags=[""])

        def rec(t, Xb, eta, flag):
            path.t.append(t)
            path.X.append(Xb.copy())
            path.flags.append(flag)

    _engine.averaged(model, drift, state, n_steps(T, dt), T, dt, plan, np.array([sample], dtype=np.uint64),
                     recorder=rec, refine=refine)
    return AveragedResult(state.Xb[0].copy(), path)


def simulate_first_variation(abar, model: CoefficientModel, x0, direction, T, dt, plan: RandomPlan,
                             sample: int = 0, refine: int = 0) -> AveragedResult:
    """Averaged path jointly with its first variation ``eta`` started at ``direction``."""
    check_refine(refine, T, dt)
    drift = as_drift(abar, model)
    x0 = _vec(x0, model.dims.n, "x0")
    k = _vec(direction, model.dims.n, "direction")
    if not np.any(k):
        raise InvalidInputError("direction must be nonzero")
    state = _engine.EngineState(0, None, Xb=x0[None, :].copy(), eta=k[None, :].copy())
    _engine.averaged(model, drift, state, n_steps(T, dt), T, dt, plan, np.array([sample], dtype=np.uint64),
                     refine=refine)
    return AveragedResult(state.Xb[0].copy(), None, state.eta[0].copy())


def simulate_frozen(model: CoefficientModel, x, y0, horizon, dt, plan: RandomPlan, sample: int = 0,
                    times=None, refine: int = 0):
    """One frozen fast path on its jump-adapted grid (intensity ``lambda2``).

    Returns a ``FrozenPath``; with ``times`` given, the states at those times.
    """
    if not (horizon > 0 and dt > 0):
        raise InvalidInputError("horizon and dt must be > 0")
    check_refine(refine, horizon, dt)
    x = _vec(x, model.dims.n, "x")
    y0 = _vec(y0, model.dims.m, "y0")
    ts, ys = [0.0], [y0.copy()]

    def rec(t, Y, flag):
        ts.append(t)
        ys.append(Y.copy())

    _engine.frozen(model, x, y0[None, :].copy(), n_steps(horizon, dt), horizon, dt, plan,
                   np.array([sample], dtype=np.uint64), model.lambda2, recorder=rec, refine=refine)
    path = FrozenPath(np.asarray(ts), np.asarray(ys))
    return path if times is None else path.at(times)


def write_path_csv(path: PathRecord, fh):
    """CSV dump: ``t, X[0..n), Y[0..m), jump_P, jump_N``."""
    import csv

    t, X, Y = path.as_arrays()
    n = X.shape[1] if X.ndim == 2 else 0
    m = Y.shape[1] if Y.ndim == 2 and len(Y) else 0
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t"] + [f"X{i}" for i in range(n)] + [f"Y{j}" for j in range(m)] + ["jump_P", "jump_N"])
    for i in range(len(t)):
        row = [repr(float(t[i]))] + [repr(float(v)) for v in X[i]]
        if m:
            row += [repr(float(v)) for v in Y[i]]
        row += [int(path.flags[i] == "P"), int(path.flags[i] == "N")]
        w.writerow(row)
