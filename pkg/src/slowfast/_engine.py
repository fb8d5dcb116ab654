"""Vectorised NumPy integrators (pure-Python backend).

All samples of a batch advance through the same uniform steps; inside a step
each sample is split at its own jump times with masked sub-iterations.  The
slow variable lives on the grid ``uniform U {slow jumps}``; the fast variable
is refined further at its own jump times while the slow state is held at its
left node value.  The averaged path and its first variation use the slow grid
only, so with a shared plan they read the same Brownian draws as the slow
component of the coupled system.

Brownian increments are drawn once per uniform step (``step_increments``)
and cut at jump times by Brownian-bridge splits (``bridge_split``), so the
path does not depend on how a step is subdivided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError
from .randomness import bridge_split, exponentials, step_increments

BLOWUP = 1e12


def step_end(k, K, dt, T):
    return T if k == K - 1 else (k + 1) * dt


def step_length(k, t1, dt, refine):
    # the refined lattice has nominal steps; an unrefined run uses the actual one
    return t1 - k * dt if refine == 0 else dt


class Bridge:
    """Remaining Brownian increment of the current step, per sample."""

    def __init__(self, key, samples, dim, refine):
        self.key = key
        self.samples = samples
        self.dim = dim
        self.refine = refine
        n = len(samples)
        self.R = np.zeros((n, dim))
        self.u = np.zeros(n)
        self.j = np.zeros(n, dtype=np.uint64)
        self.k = 0
        self.t1 = 0.0

    def start(self, k, ts, t1, h):
        self.k, self.t1 = k, t1
        self.R = step_increments(self.key, k, self.refine, h, self.samples, self.dim)
        self.u[:] = ts
        self.j[:] = 0

    def take(self, idx, s):
        """Increment over ``[u, s]`` for rows ``idx``; ``s >= t1`` takes the remainder."""
        inc, rem = bridge_split(self.key, self.k, self.refine, self.j[idx], self.u[idx], self.t1, self.R[idx],
                                s, self.samples[idx], self.dim)
        cut = s < self.t1
        self.j[idx[cut]] += np.uint64(1)
        self.R[idx] = rem
        self.u[idx] = s
        return inc


def _matvec(mat, vec):
    # (N, p, q) @ (N, q) -> (N, p)
    return np.einsum("npq,nq->np", mat, vec)


class JumpClock:
    """Next arrival time and arrival counter of a Poisson process per sample."""

    def __init__(self, key, rate, samples, t=None, index=None):
        self.key = key
        self.rate = float(rate)
        self.samples = samples
        n = len(samples)
        if t is not None:
            self.t = np.array(t, dtype=float)
            self.index = np.array(index, dtype=np.uint64)
        elif self.rate > 0:
            self.t = exponentials(key, 0, samples) / self.rate
            self.index = np.ones(n, dtype=np.uint64)
        else:
            self.t = np.full(n, np.inf)
            self.index = np.zeros(n, dtype=np.uint64)

    def advance(self, idx):
        self.t[idx] = self.t[idx] + exponentials(self.key, self.index[idx], self.samples[idx]) / self.rate
        self.index[idx] += np.uint64(1)

    def snapshot(self):
        return self.t.copy(), self.index.copy()


def _check(arrays, t, samples):
    for arr in arrays:
        if arr is None:
            continue
        flat = arr.reshape(len(arr), -1)
        badrow = ~np.all(np.isfinite(flat) & (np.abs(flat) <= BLOWUP), axis=1)
        if badrow.any():
            i = int(np.flatnonzero(badrow)[0])
            raise BlowUpError(float(t), int(samples[i]))


@dataclass
class EngineState:
    """Resumable integrator state for a batch of samples."""

    k: int
    X: np.ndarray
    Y: np.ndarray | None = None
    Xb: np.ndarray | None = None
    eta: np.ndarray | None = None
    clock_p: tuple | None = None
    clock_n: tuple | None = None


def fast_substeps(model, X, Y, act, ts_act, s_next, clock_n, bw, inv_eps, inv_sqrt_eps, on_jump=None,
                  a_left=None, corr=None):
    """Advance ``Y[act]`` from ``ts_act`` to ``s_next`` splitting at fast jumps.

    ``X`` is read at its current (left node) value.  Modifies ``Y``, the
    fast bridge ``bw`` and ``clock_n`` in place.  With ``a_left`` (indexed
    like ``X``) and ``corr`` given, every substep after a fast jump adds
    ``(a(X, Y_j) - a_left) * tau_j`` to ``corr``, so the slow drift is a
    left-point sum over the fast grid rather than over the slow grid.
    """
    u = ts_act.copy()
    end = s_next
    sub = act
    while sub.size:
        tn = clock_n.t[sub]
        jump = tn <= end
        f_next = np.where(jump, tn, end)
        tau = f_next - u
        Xs, Ys = X[sub], Y[sub]
        if corr is not None and sub is not act:
            corr[sub] = corr[sub] + (model.a(Xs, Ys) - a_left[sub]) * tau[:, None]
        dw = bw.take(sub, f_next)
        Y[sub] = Ys + (inv_eps * model.f(Xs, Ys)) * tau[:, None] + inv_sqrt_eps * _matvec(model.g(Xs, Ys), dw)
        if not jump.any():
            break
        jsub = sub[jump]
        Y[jsub] = Y[jsub] + model.h(X[jsub], Y[jsub])
        clock_n.advance(jsub)
        if on_jump is not None:
            on_jump(f_next[jump], jsub)
        u = f_next[jump]
        end = end[jump]
        sub = jsub


def coupled(model, state: EngineState, K, T, dt, inv_eps, inv_sqrt_eps, rate_n, plan, samples,
            abar=None, recorder=None, refine=0):
    """Coupled slow/fast system, optionally with the synchronously coupled averaged path."""
    n_s = len(samples)
    X, Y, Xb = state.X, state.Y, state.Xb
    bb = Bridge(plan.key("B"), samples, model.dims.d1, refine)
    bw = Bridge(plan.key("W"), samples, model.dims.d2, refine)
    clock_p = JumpClock(plan.key("P"), model.lambda1, samples, *(state.clock_p or (None, None)))
    clock_n = JumpClock(plan.key("N"), rate_n, samples, *(state.clock_n or (None, None)))
    want_bar = abar is not None
    a_full = np.zeros_like(X)
    corr = np.zeros_like(X)
    on_jump = None
    if recorder is not None:
        def on_jump(times, idx):
            for t in times:
                recorder(float(t), X[0], Y[0], Xb[0] if want_bar else None, "N")

    for k in range(state.k, K):
        t1 = step_end(k, K, dt, T)
        h = step_length(k, t1, dt, refine)
        ts = np.full(n_s, k * dt)
        bb.start(k, ts, t1, h)
        bw.start(k, ts, t1, h)
        act = np.arange(n_s)
        while act.size:
            tp = clock_p.t[act]
            jump = tp <= t1
            s_next = np.where(jump, tp, t1)
            Xa, Ya = X[act], Y[act]
            a_left = model.a(Xa, Ya)
            a_full[act] = a_left
            corr[act] = 0.0
            fast_substeps(model, X, Y, act, ts[act], s_next, clock_n, bw, inv_eps, inv_sqrt_eps, on_jump,
                          a_full, corr)
            tau = s_next - ts[act]
            db = bb.take(act, s_next)
            xn = Xa + a_left * tau[:, None] + corr[act] + _matvec(model.b(Xa), db)
            if want_bar:
                Xba = Xb[act]
                Xb[act] = Xba + abar.value(Xba) * tau[:, None] + _matvec(model.b(Xba), db)
            X[act] = xn
            if not jump.any():
                break
            jp = act[jump]
            X[jp] = X[jp] + model.c(X[jp])
            if want_bar:
                Xb[jp] = Xb[jp] + model.c(Xb[jp])
            clock_p.advance(jp)
            if recorder is not None:
                for t in s_next[jump]:
                    recorder(float(t), X[0], Y[0], Xb[0] if want_bar else None, "P")
            ts[jp] = s_next[jump]
            act = jp
        _check((X, Y, Xb), t1, samples)
        if recorder is not None:
            recorder(float(t1), X[0], Y[0], Xb[0] if want_bar else None, "")
    state.k = K
    state.clock_p = clock_p.snapshot()
    state.clock_n = clock_n.snapshot()
    return state


def _fd_jacobian(fn, x, step=1e-5):
    """Central-difference Jacobian of a batch map ``(N, n) -> (N, p)``; shape ``(N, p, n)``."""
    n = x.shape[1]
    h = step * np.maximum(1.0, np.abs(x))
    cols = []
    for i in range(n):
        e = np.zeros_like(x)
        e[:, i] = h[:, i]
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * h[:, i : i + 1]))
    return np.stack(cols, axis=-1)


def b_derivative(model, x):
    """``D_x b`` with shape ``(N, n, d1, n)``."""
    if model.b_dx is not None:
        return model.b_dx(x)
    N, n, d1 = x.shape[0], model.dims.n, model.dims.d1
    jac = _fd_jacobian(lambda z: model.b(z).reshape(len(z), n * d1), x)
    return jac.reshape(N, n, d1, n)


def c_derivative(model, x):
    if model.c_dx is not None:
        return model.c_dx(x)
    return _fd_jacobian(model.c, x)


def averaged(model, abar, state: EngineState, K, T, dt, plan, samples, recorder=None, refine=0):
    """Averaged equation on the slow grid, with the first variation if ``state.eta`` is set."""
    n_s = len(samples)
    Xb, eta = state.Xb, state.eta
    want_eta = eta is not None
    bb = Bridge(plan.key("B"), samples, model.dims.d1, refine)
    clock_p = JumpClock(plan.key("P"), model.lambda1, samples, *(state.clock_p or (None, None)))
    for k in range(state.k, K):
        t1 = step_end(k, K, dt, T)
        ts = np.full(n_s, k * dt)
        bb.start(k, ts, t1, step_length(k, t1, dt, refine))
        act = np.arange(n_s)
        while act.size:
            tp = clock_p.t[act]
            jump = tp <= t1
            s_next = np.where(jump, tp, t1)
            tau = s_next - ts[act]
            db = bb.take(act, s_next)
            Xba = Xb[act]
            if want_eta:
                ea = eta[act]
                bdx = b_derivative(model, Xba)  # (N, n, d1, n)
                noise = np.einsum("nijl,nl,nj->ni", bdx, ea, db)
                eta[act] = ea + _matvec(abar.jacobian(Xba), ea) * tau[:, None] + noise
            Xb[act] = Xba + abar.value(Xba) * tau[:, None] + _matvec(model.b(Xba), db)
            if not jump.any():
                break
            jp = act[jump]
            left = Xb[jp]
            if want_eta:
                eta[jp] = eta[jp] + _matvec(c_derivative(model, left), eta[jp])
            Xb[jp] = left + model.c(left)
            clock_p.advance(jp)
            if recorder is not None:
                for t in s_next[jump]:
                    recorder(float(t), Xb[0], eta[0] if want_eta else None, "P")
            ts[jp] = s_next[jump]
            act = jp
        _check((Xb, eta), t1, samples)
        if recorder is not None:
            recorder(float(t1), Xb[0], eta[0] if want_eta else None, "")
    state.k = K
    state.clock_p = clock_p.snapshot()
    return state


def frozen(model, x, Y, K, T, dt, plan, samples, rate_n, k_lo=0, k_hi=0, record_every=0,
           recorder=None, bins=1, refine=0):
    """Frozen fast process at slow state ``x`` (broadcast to the batch).

    Returns ``(Y, integral, records)``: terminal state, left-point integral of
    ``a(x, Y)`` over steps ``k_lo <= k < k_hi`` split into ``bins`` equal
    groups of steps (shape ``(N, bins, n)``) and states after every
    ``record_every``-th step.
    """
    n_s = len(samples)
    n, m = model.dims.n, model.dims.m
    X = np.broadcast_to(np.asarray(x, dtype=float).reshape(1, n), (n_s, n))
    bw = Bridge(plan.key("W"), samples, model.dims.d2, refine)
    clock_n = JumpClock(plan.key("N"), rate_n, samples)
    acc = np.zeros((n_s, bins, n))
    n_rec = (K // record_every) if record_every > 0 else 0
    records = np.empty((n_s, n_rec, m))
    r = 0
    for k in range(K):
        t1 = step_end(k, K, dt, T)
        inside = k_lo <= k < k_hi
        b = (k - k_lo) * bins // (k_hi - k_lo) if inside else 0
        u = np.full(n_s, k * dt)
        bw.start(k, u, t1, step_length(k, t1, dt, refine))
        end = np.full(n_s, t1)
        sub = np.arange(n_s)
        while sub.size:
            tn = clock_n.t[sub]
            jump = tn <= end
            f_next = np.where(jump, tn, end)
            tau = f_next - u
            Xs, Ys = X[sub], Y[sub]
            dw = bw.take(sub, f_next)
            if inside:
                acc[sub, b] += model.a(Xs, Ys) * tau[:, None]
            Y[sub] = Ys + (1.0 * model.f(Xs, Ys)) * tau[:, None] + 1.0 * _matvec(model.g(Xs, Ys), dw)
            if not jump.any():
                break
            jsub = sub[jump]
            Y[jsub] = Y[jsub] + model.h(X[jsub], Y[jsub])
            clock_n.advance(jsub)
            if recorder is not None:
                for t in f_next[jump]:
                    recorder(float(t), Y[0], "N")
            u = f_next[jump]
            end = end[jump]
            sub = jsub
        _check((Y,), t1, samples)
        if record_every > 0 and (k + 1) % record_every == 0:
            records[:, r, :] = Y
            r += 1
        if recorder is not None:
            recorder(float(t1), Y[0], "")
    return Y, acc, records
