"""Coefficient models for the slow/fast jump-diffusion and assumption probes.

Coefficient functions are batch-first: ``x`` has shape ``(N, n)``, ``y`` has
shape ``(N, m)`` and every function returns an array with a leading ``N``
axis (``a``: ``(N, n)``, ``b``: ``(N, n, d1)``, ``c``: ``(N, n)``,
``f``: ``(N, m)``, ``g``: ``(N, m, d2)``, ``h``: ``(N, m)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.stats import qmc

from .errors import InvalidInputError, InvalidModelError
from .randomness import libm

__all__ = [
    "Dims",
    "CoefficientModel",
    "AssumptionReport",
    "Probe",
    "default_probe",
    "make_jump_ou_benchmark",
    "make_model",
    "check_dissipativity",
    "check_nondegeneracy",
    "check_assumptions",
    "lipschitz_probe",
    "BENCHMARK_DEFAULTS",
]


class Dims(NamedTuple):
    n: int
    m: int
    d1: int
    d2: int


@dataclass(frozen=True)
class CoefficientModel:
    """The sextuple ``(a, b, c, f, g, h)`` with jump intensities.

    ``lambda1`` is the intensity of the slow Poisson process; ``lambda2`` the
    intensity of the frozen fast Poisson process (the coupled system uses
    ``lambda2 / epsilon``).  ``kernel`` optionally names a built-in family the
    compiled core can integrate without calling back into Python.
    """

    dims: Dims
    a: Callable
    b: Callable
    c: Callable
    f: Callable
    g: Callable
    h: Callable
    lambda1: float = 0.0
    lambda2: float = 0.0
    abar_analytic: Optional[Callable] = None
    abar_dx: Optional[Callable] = None
    b_dx: Optional[Callable] = None
    c_dx: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    kernel: Optional[tuple] = None

    def __post_init__(self):
        dims = Dims(*(int(v) for v in self.dims))
        if min(dims) < 1:
            raise InvalidModelError(f"dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)
        for lam in ("lambda1", "lambda2"):
            v = float(getattr(self, lam))
            if not np.isfinite(v) or v < 0:
                raise InvalidModelError(f"{lam} must be finite and >= 0, got {v}")
            object.__setattr__(self, lam, v)

    def __hash__(self):
        return id(self)

    def as_batch_x(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x.reshape(-1, self.dims.n)

    def as_batch_y(self, y):
        y = np.asarray(y, dtype=np.float64)
        return y.reshape(-1, self.dims.m)


@dataclass
class AssumptionReport:
    alpha_hat: Optional[float] = None
    beta_hat: Optional[float] = None
    lipschitz_probe: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class Probe:
    x_points: np.ndarray
    y_points: np.ndarray
    y_pairs: np.ndarray  # shape (P, 2, m)


def _sobol(dim, count, lo, hi, seed):
    pts = qmc.Sobol(d=dim, scramble=True, seed=seed).random(count)
    return lo + (hi - lo) * pts


def default_probe(dims: Dims, count: int = 64, box: float = 3.0, seed: int = 0) -> Probe:
    """Scrambled Sobol probe: ``count`` x points, y points and y pairs in ``[-box, box]``."""
    x = _sobol(dims.n, count, -box, box, seed)
    y = _sobol(dims.m, count, -box, box, seed + 1)
    pairs = _sobol(2 * dims.m, count, -box, box, seed + 2).reshape(count, 2, dims.m)
    return Probe(x, y, pairs)


def _as_probe(model, probe):
    if probe is None:
        return default_probe(model.dims)
    if isinstance(probe, Probe):
        return probe
    x = np.asarray(probe.get("x_points"), dtype=float).reshape(-1, model.dims.n)
    y = probe.get("y_points")
    y = np.empty((0, model.dims.m)) if y is None else np.asarray(y, dtype=float).reshape(-1, model.dims.m)
    pairs = probe.get("y_pairs")
    pairs = (
        np.empty((0, 2, model.dims.m))
        if pairs is None
        else np.asarray(pairs, dtype=float).reshape(-1, 2, model.dims.m)
    )
    return Probe(x, y, pairs)


def check_dissipativity(model: CoefficientModel, probe=None) -> AssumptionReport:
    """Sampled check of the fast-process dissipativity inequality.

    For every x in ``probe.x_points`` and every pair ``(y1, y2)`` evaluates

        LHS = <y1 - y2, f1 - f2 + lam2 (h1 - h2)> + |g1 - g2|_F^2 + lam2 |h1 - h2|^2

    and reports ``beta_hat = min(-LHS / |y1 - y2|^2)``.  Pairs with
    ``LHS >= 0`` are listed as violations.
    """
    probe = _as_probe(model, probe)
    xs, pairs = probe.x_points, probe.y_pairs
    if len(xs) == 0 or len(pairs) == 0:
        raise InvalidInputError("dissipativity probe needs at least one x point and one y pair")
    y1, y2 = pairs[:, 0, :], pairs[:, 1, :]
    dist2 = np.sum((y1 - y2) ** 2, axis=1)
    if np.any(dist2 == 0):
        raise InvalidInputError("y_pairs must contain distinct pairs only")
    P = len(pairs)
    X = np.repeat(xs, P, axis=0)
    Y1, Y2 = np.tile(y1, (len(xs), 1)), np.tile(y2, (len(xs), 1))
    D2 = np.tile(dist2, len(xs))
    lam = model.lambda2
    dh = model.h(X, Y1) - model.h(X, Y2)
    df = model.f(X, Y1) - model.f(X, Y2)
    dg = model.g(X, Y1) - model.g(X, Y2)
    lhs = (
        np.sum((Y1 - Y2) * (df + lam * dh), axis=1)
        + np.sum(dg.reshape(len(X), -1) ** 2, axis=1)
        + lam * np.sum(dh**2, axis=1)
    )
    ratio = -lhs / D2
    report = AssumptionReport(beta_hat=float(np.min(ratio)))
    for i in np.flatnonzero(lhs >= 0):
        report.violations.append(("A3", (X[i].tolist(), Y1[i].tolist(), Y2[i].tolist()), float(lhs[i])))
    report.lipschitz_probe = lipschitz_probe(model, probe)
    return report


def check_nondegeneracy(model: CoefficientModel, probe=None) -> AssumptionReport:
    """Uniform ellipticity of ``g g^T``: ``alpha_hat`` is the smallest eigenvalue over probes."""
    probe = _as_probe(model, probe)
    xs, ys = probe.x_points, probe.y_points
    if len(xs) == 0 or len(ys) == 0:
        raise InvalidInputError("nondegeneracy probe needs x points and y points")
    X = np.repeat(xs, len(ys), axis=0)
    Y = np.tile(ys, (len(xs), 1))
    g = model.g(X, Y).reshape(len(X), model.dims.m, model.dims.d2)
    eig = np.linalg.eigvalsh(g @ np.swapaxes(g, 1, 2))[:, 0]
    report = AssumptionReport(alpha_hat=max(float(np.min(eig)), 0.0))
    worst = int(np.argmin(eig))
    if report.alpha_hat <= 0.0:
        report.violations.append(("A2", (X[worst].tolist(), Y[worst].tolist()), float(eig[worst])))
    report.lipschitz_probe = lipschitz_probe(model, probe)
    return report


def check_assumptions(model: CoefficientModel, probe=None) -> AssumptionReport:
    probe = _as_probe(model, probe)
    dis = check_dissipativity(model, probe)
    nd = check_nondegeneracy(model, probe)
    return AssumptionReport(
        alpha_hat=nd.alpha_hat,
        beta_hat=dis.beta_hat,
        lipschitz_probe=dis.lipschitz_probe,
        violations=nd.violations + dis.violations,
    )


def lipschitz_probe(model: CoefficientModel, probe=None, step: float = 1e-4) -> dict:
    """Largest local Lipschitz constant of each coefficient over the probe points.

    At every point the Jacobian with respect to all arguments jointly
    (x for ``b, c``; (x, y) for ``a, f, g, h``) is formed by central
    differences and its spectral norm taken.
    """
    probe = _as_probe(model, probe)
    xs = probe.x_points
    ys = probe.y_points if len(probe.y_points) else probe.y_pairs[:, 0, :]
    X = np.repeat(xs, len(ys), axis=0)
    Y = np.tile(ys, (len(xs), 1))
    out = {}

    def slope(fn, args, nargs):
        cols = []
        for k, arg in enumerate(args):
            for i in range(arg.shape[1]):
                e = np.zeros_like(arg)
                e[:, i] = step
                plus = list(args)
                minus = list(args)
                plus[k] = arg + e
                minus[k] = arg - e
                cols.append((fn(*plus[:nargs]) - fn(*minus[:nargs])).reshape(len(arg), -1) / (2 * step))
        jac = np.stack(cols, axis=2)  # (N, outputs, arguments)
        return float(np.max(np.linalg.norm(jac, ord=2, axis=(1, 2))))

    for name in ("a", "f", "g", "h"):
        out[name] = slope(getattr(model, name), [X, Y], 2)
    for name in ("b", "c"):
        out[name] = slope(getattr(model, name), [xs], 1)
    return out


# --- the jump Ornstein-Uhlenbeck benchmark ---------------------------------

BENCHMARK_DEFAULTS = dict(
    gamma=1.0,
    sigma=0.5,
    kappa=0.2,
    lambda2=1.0,
    sigma_b=0.3,
    c0=0.1,
    lambda1=1.0,
    bounded_read=False,
)


def make_jump_ou_benchmark(params=None, **overrides) -> CoefficientModel:
    """One-dimensional slow/fast model with a jump-OU fast process.

    The fast process relaxes towards ``cos x`` with unit rate, Gaussian noise
    ``sigma`` and constant jumps ``kappa`` at rate ``lambda2``; its
    stationary mean is ``cos x + lambda2 * kappa``.  The slow drift reads the
    fast state linearly (``sin x + gamma * y``, closed-form averaged drift) or
    through ``tanh`` (``bounded_read=True``, bounded drift, no closed form).
    """
    p = dict(BENCHMARK_DEFAULTS)
    p.update(params or {})
    p.update(overrides)
    unknown = set(p) - set(BENCHMARK_DEFAULTS)
    if unknown:
        raise InvalidModelError(f"unknown benchmark parameters {sorted(unknown)}")
    gamma, sigma, kappa = float(p["gamma"]), float(p["sigma"]), float(p["kappa"])
    lam1, lam2 = float(p["lambda1"]), float(p["lambda2"])
    sigma_b, c0 = float(p["sigma_b"]), float(p["c0"])
    bounded = bool(p["bounded_read"])
    if not sigma > 0:
        raise InvalidModelError(f"sigma must be > 0, got {sigma}")
    if lam1 < 0 or lam2 < 0:
        raise InvalidModelError("jump intensities must be >= 0")
    p.update(gamma=gamma, sigma=sigma, kappa=kappa, lambda1=lam1, lambda2=lam2,
             sigma_b=sigma_b, c0=c0, bounded_read=bounded)

    def ones(x, *tail):
        return np.ones((x.shape[0],) + tail)

    if bounded:
        def a(x, y):
            return np.sin(x) + gamma * libm(math.tanh, y)
        abar = abar_dx = None
    else:
        def a(x, y):
            return np.sin(x) + gamma * y

        def abar(x):
            return np.sin(x) + gamma * (np.cos(x) + lam2 * kappa)

        def abar_dx(x):
            return (np.cos(x) - gamma * np.sin(x))[:, :, None]

    def f(x, y):
        return -(y - np.cos(x))

    return CoefficientModel(
        dims=Dims(1, 1, 1, 1),
        a=a,
        b=lambda x: sigma_b * ones(x, 1, 1),
        c=lambda x: c0 * ones(x, 1),
        f=f,
        g=lambda x, y: sigma * ones(x, 1, 1),
        h=lambda x, y: kappa * ones(x, 1),
        lambda1=lam1,
        lambda2=lam2,
        abar_analytic=abar,
        abar_dx=abar_dx,
        b_dx=lambda x: np.zeros((x.shape[0], 1, 1, 1)),
        c_dx=lambda x: np.zeros((x.shape[0], 1, 1)),
        name="jump_ou",
        params=p,
        kernel=("jump_ou", gamma, sigma, kappa, sigma_b, c0, bounded),
    )


_MODEL_FACTORIES = {"jump_ou": make_jump_ou_benchmark}


def make_model(name: str, params=None) -> CoefficientModel:
    """Build a named model from a parameter table (used by the config layer)."""
    try:
        factory = _MODEL_FACTORIES[name]
    except KeyError:
        raise InvalidModelError(f"unknown model {name!r}; known: {sorted(_MODEL_FACTORIES)}") from None
    return factory(params or {})
