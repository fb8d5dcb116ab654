"""Counter-based random numbers for reproducible, addressable noise.

Every draw is a pure function of ``(seed, stream_id, role, counter)``: the
generator is Philox4x32-10, keyed per role, with a 128-bit counter holding the
draw index in the low half and the sample index in the high half.  Sample
``i`` of a batch is therefore reproducible without generating samples
``0..i-1``, and two simulations that read the same role of the same plan see
identical noise (synchronous coupling).

Counter layout (c0, c1, c2, c3):

* Brownian normals: ``(step, (tag << 8) | pair, sample_lo, sample_hi)``,
  one Philox call yields two normals (Box-Muller cos/sin branches).  Tag
  ``0`` is the whole-step draw, tag ``l`` in ``1..30`` the bridge midpoint of
  refinement level ``l`` and tag ``((j + 1) << 8) | refine`` the ``j``-th
  bridge split of a step at a jump time.
* Jump interarrivals: ``(jump_index, 0, sample_lo, sample_hi)``.

The compiled core in ``slowfast._core`` implements the same addressing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "ROLES",
    "RandomPlan",
    "JumpSchedule",
    "philox4x32",
    "uniform_pairs",
    "standard_normals",
    "exponentials",
    "sample_jump_times",
    "sample_jump_times_batch",
    "brownian_increments",
    "step_increments",
    "bridge_split",
]

ROLES = ("B", "W", "P", "N")
_DEFAULT_SUBSTREAMS = MappingProxyType({"B": 0, "W": 1, "P": 2, "N": 3})

_M64 = (1 << 64) - 1
_M32 = np.uint64(0xFFFFFFFF)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = 0x9E3779B9
_PHILOX_W1 = 0xBB67AE85
_TWO_PI = 6.283185307179586
_INV_2_53 = 1.0 / 9007199254740992.0



def libm(fn, x):
    """Apply a scalar ``math`` function elementwise.

    NumPy's SIMD ``log`` and ``tanh`` differ from the C library in the last
    bit for a fraction of inputs; routing through ``math`` keeps the Python
    backend bit-identical to the compiled one.
    """
    x = np.asarray(x, dtype=float)
    return np.fromiter(map(fn, x.ravel().tolist()), dtype=float, count=x.size).reshape(x.shape)


def libm_log(x):
    return libm(math.log, x)


def _mix64(z: int) -> int:
    """SplitMix64 finaliser on a Python int."""
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def derive_key(seed: int, stream_id: int, label: int) -> tuple[int, int]:
    z = _mix64(_mix64(_mix64(seed & _M64) ^ (stream_id & _M64)) ^ (label & _M64))
    return z & 0xFFFFFFFF, z >> 32


@dataclass(frozen=True)
class RandomPlan:
    """Seed, stream label and role-to-substream map.

    Two plans with equal ``(seed, stream_id, substream_ids)`` reproduce
    bit-identical draws.  Simulations that should be synchronously coupled
    are handed the same plan; they then read the same substreams.
    """

    seed: int
    stream_id: int = 0
    substream_ids: MappingProxyType = field(default=_DEFAULT_SUBSTREAMS)

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _M64:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= int(self.stream_id) <= _M64:
            raise InvalidInputError(f"stream_id must be a 64-bit unsigned integer, got {self.stream_id}")
        ids = dict(self.substream_ids)
        missing = set(ROLES) - set(ids)
        if missing:
            raise InvalidInputError(f"substream_ids missing roles {sorted(missing)}")
        if len(set(ids[r] for r in ROLES)) != len(ROLES):
            raise InvalidInputError("substream_ids must be distinct across roles")
        object.__setattr__(self, "substream_ids", MappingProxyType(ids))

    def key(self, role: str) -> tuple[int, int]:
        try:
            label = self.substream_ids[role]
        except KeyError:
            raise InvalidInputError(f"unknown role {role!r}; expected one of {ROLES}") from None
        return derive_key(int(self.seed), int(self.stream_id), int(label))

    def child(self, stream_id: int) -> "RandomPlan":
        """Same seed and substream map on another stream label."""
        return RandomPlan(self.seed, stream_id, self.substream_ids)

    def __hash__(self):
        return hash((self.seed, self.stream_id, tuple(sorted(self.substream_ids.items()))))


@dataclass(frozen=True)
class JumpSchedule:
    rate: float
    horizon: float
    times: np.ndarray

    def __len__(self):
        return len(self.times)


def philox4x32(c0, c1, c2, c3, key):
    """Vectorised Philox4x32-10 block function.

    Counter words are arrays (or scalars) of values below 2**32; ``key`` is a
    pair of 32-bit ints.  Returns four ``uint64`` arrays holding 32-bit words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _M32 for c in (c0, c1, c2, c3))
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(10):
        if r:
            k0 = (k0 + _PHILOX_W0) & 0xFFFFFFFF
            k1 = (k1 + _PHILOX_W1) & 0xFFFFFFFF
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ np.uint64(k0),
            p1 & _M32,
            (p0 >> np.uint64(32)) ^ c3 ^ np.uint64(k1),
            p0 & _M32,
        )
    return c0, c1, c2, c3


def _split_sample(samples):
    s = np.asarray(samples, dtype=np.uint64)
    return s & _M32, s >> np.uint64(32)


def uniform_pairs(key, c0, c1, samples):
    """Two uniforms in [0, 1) with 53-bit resolution per counter."""
    s_lo, s_hi = _split_sample(samples)
    x0, x1, x2, x3 = philox4x32(c0, c1, s_lo, s_hi, key)
    u1 = (((x0 >> np.uint64(5)) << np.uint64(26)) | (x1 >> np.uint64(6))).astype(np.float64) * _INV_2_53
    u2 = (((x2 >> np.uint64(5)) << np.uint64(26)) | (x3 >> np.uint64(6))).astype(np.float64) * _INV_2_53
    return u1, u2


def standard_normals(key, step, substep, samples, dim: int):
    """Normals for Brownian increment ``(step, substep)`` of each sample.

    Returns an array of shape ``(len(samples), dim)``.  ``step``, ``substep``
    broadcast against ``samples``.
    """
    samples = np.atleast_1d(np.asarray(samples, dtype=np.uint64))
    step = np.broadcast_to(np.asarray(step, dtype=np.uint64), samples.shape)
    substep = np.broadcast_to(np.asarray(substep, dtype=np.uint64), samples.shape)
    out = np.empty((samples.shape[0], dim))
    for p in range((dim + 1) // 2):
        u1, u2 = uniform_pairs(key, step, (substep << np.uint64(8)) | np.uint64(p), samples)
        radius = np.sqrt(-2.0 * libm_log(1.0 - u1))
        angle = _TWO_PI * u2
        out[:, 2 * p] = radius * np.cos(angle)
        if 2 * p + 1 < dim:
            out[:, 2 * p + 1] = radius * np.sin(angle)
    return out


MAX_REFINE = 30


def step_increments(key, k: int, refine: int, h: float, samples, dim: int):
    """Brownian increment over uniform step ``k`` of a dyadically refined lattice.

    With ``refine = 0`` the increment is ``sqrt(h) Z`` with ``Z`` read at
    counter ``(k, 0)``.  With ``refine = r > 0`` the step is one of the
    ``2**r`` equal pieces of base step ``k >> r`` (length ``h * 2**r``);
    the base increment is halved ``r`` times by Brownian-bridge midpoints,
    level ``l`` reading counter ``(parent index, l)``.  A run at ``dt/2``
    with ``refine + 1`` therefore sees the same Brownian path as a run at
    ``dt`` with ``refine``.
    """
    samples = np.atleast_1d(np.asarray(samples, dtype=np.uint64))
    if refine == 0:
        return math.sqrt(h) * standard_normals(key, k, 0, samples, dim)
    if not 0 < refine <= MAX_REFINE:
        raise InvalidInputError(f"refine must lie in [0, {MAX_REFINE}]")
    P = math.sqrt(h * float(1 << refine)) * standard_normals(key, k >> refine, 0, samples, dim)
    for level in range(1, refine + 1):
        hp = h * float(1 << (refine - level + 1))
        idx = k >> (refine - level)
        left = 0.5 * P + (0.5 * math.sqrt(hp)) * standard_normals(key, idx >> 1, level, samples, dim)
        P = left if idx % 2 == 0 else P - left
    return P


def split_tag(j, refine: int):
    """Counter tag of the ``j``-th bridge split inside a step (distinct from step tags)."""
    return ((np.asarray(j, dtype=np.uint64) + np.uint64(1)) << np.uint64(8)) | np.uint64(refine)


def bridge_split(key, k: int, refine: int, j, u, t_end, R, s, samples, dim: int):
    """Cut the remaining increment ``R`` over ``[u, t_end]`` at time ``s``.

    Returns ``(increment over [u, s], remaining over [s, t_end])``, sampled
    from the Brownian bridge.  Rows with ``s >= t_end`` take all of ``R``.
    """
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    final = s >= t_end
    inc = R.copy()
    rem = np.zeros_like(R)
    cut = ~final
    if cut.any():
        L = t_end - u[cut]
        a = s[cut] - u[cut]
        z = standard_normals(key, k, split_tag(np.asarray(j)[cut], refine), np.asarray(samples)[cut], dim)
        inc[cut] = (a / L)[:, None] * R[cut] + np.sqrt(a * (t_end - s[cut]) / L)[:, None] * z
        rem[cut] = R[cut] - inc[cut]
    return inc, rem


def exponentials(key, jump_index, samples):
    """Unit-mean exponentials for interarrival ``jump_index`` of each sample."""
    jump_index, samples = np.broadcast_arrays(np.asarray(jump_index, dtype=np.uint64),
                                              np.atleast_1d(np.asarray(samples, dtype=np.uint64)))
    u1, _ = uniform_pairs(key, jump_index, np.uint64(0), samples)
    return -libm_log(1.0 - u1)


def _check_rate(rate, horizon):
    if not np.isfinite(rate) or rate < 0:
        raise InvalidInputError(f"jump rate must be finite and >= 0, got {rate}")
    if not np.isfinite(horizon) or horizon <= 0:
        raise InvalidInputError(f"horizon must be finite and > 0, got {horizon}")


def sample_jump_times_batch(rate, horizon, plan: RandomPlan, role: str, samples):
    """Jump times of a rate-``rate`` Poisson process for several samples.

    Returns a list of sorted arrays, one per sample.  Arrival ``j`` of sample
    ``i`` is ``sum_{l<=j} E_l / rate`` accumulated left to right, the same
    recursion the integrators use.
    """
    _check_rate(rate, horizon)
    samples = np.atleast_1d(np.asarray(samples, dtype=np.uint64))
    if rate == 0.0:
        return [np.empty(0) for _ in samples]
    key = plan.key(role)
    out = [None] * len(samples)
    pending = np.arange(len(samples))
    t = np.zeros(len(samples))
    collected = [[] for _ in samples]
    j = 0
    chunk = max(8, int(rate * horizon * 1.5) + 8)
    while pending.size:
        idx = np.arange(j, j + chunk, dtype=np.uint64)
        e = exponentials(key, idx[None, :], samples[pending][:, None]) / rate
        e = e.reshape(pending.size, chunk)
        arrivals = np.empty_like(e)
        acc = t[pending].copy()
        for col in range(chunk):
            acc = acc + e[:, col]
            arrivals[:, col] = acc
        t[pending] = acc
        still = []
        for row, s in enumerate(pending):
            a = arrivals[row]
            inside = a[a <= horizon]
            collected[s].append(inside)
            if inside.size == chunk:
                still.append(s)
        pending = np.asarray(still, dtype=np.int64)
        j += chunk
    for s in range(len(samples)):
        out[s] = np.concatenate(collected[s]) if collected[s] else np.empty(0)
    return out


def sample_jump_times(rate, horizon, plan: RandomPlan, role: str, sample: int = 0) -> JumpSchedule:
    """Poisson jump times on ``(0, horizon]`` by exponential interarrivals."""
    times = sample_jump_times_batch(rate, horizon, plan, role, [sample])[0]
    return JumpSchedule(float(rate), float(horizon), times)


def brownian_increments(grid, dim: int, plan: RandomPlan, role: str, sample: int = 0):
    """Increments ``sqrt(h_k) Z_k`` for consecutive step lengths ``h_k``.

    Increment ``k`` reads counter ``(k, 0)``; shape ``(len(grid), dim)``.
    """
    h = np.asarray(grid, dtype=np.float64).reshape(-1)
    if h.size and (not np.all(np.isfinite(h)) or np.any(h <= 0)):
        raise InvalidInputError("step lengths must be finite and > 0")
    if h.size == 0:
        return np.empty((0, dim))
    key = plan.key(role)
    z = standard_normals(key, np.arange(h.size, dtype=np.uint64), 0, np.full(h.size, sample), dim)
    return np.sqrt(h)[:, None] * z
