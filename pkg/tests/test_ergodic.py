import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from conftest import scalar_model
from slowfast.errors import InvalidInputError
from slowfast.ergodic import (
    AveragedDrift,
    default_windows,
    estimate_abar,
    estimate_invariant_moment,
    estimate_mixing_rate,
)
from slowfast.model import default_probe, lipschitz_probe, make_jump_ou_benchmark
from slowfast.randomness import RandomPlan


def jump_ou_second_moment(x, sigma, kappa, lambda2):
    # stationary moments of dY = -(Y - cos x) dt + sigma dW + kappa dN:
    # mean m = cos x + lambda2 kappa, variance (sigma^2 + lambda2 kappa^2) / 2
    m = math.cos(x) + lambda2 * kappa
    return m * m + (sigma**2 + lambda2 * kappa**2) / 2


def test_default_windows(bench):
    assert default_windows(bench) == pytest.approx((10.0, 100.0), rel=1e-12)


def test_abar_time_average_at_zero(bench):
    est = estimate_abar(bench, 0.0, burn_in=10.0, horizon=60.0, n_paths=400, plan=RandomPlan(1))
    assert abs(est.value[0] - 1.2) <= 3 * est.stderr[0]
    assert est.stderr[0] < 0.01


def test_abar_single_path_uses_batch_means(bench):
    est = estimate_abar(bench, 0.5, burn_in=10.0, horizon=1000.0, n_paths=1, plan=RandomPlan(2))
    oracle = math.sin(0.5) + math.cos(0.5) + 0.2
    assert est.stderr[0] > 0
    assert abs(est.value[0] - oracle) <= 4 * est.stderr[0]


def test_abar_gamma_zero_is_exact():
    m = make_jump_ou_benchmark(gamma=0.0)
    for x in (-1.0, 0.3, 2.0):
        est = estimate_abar(m, x, burn_in=1.0, horizon=5.0, n_paths=20, plan=RandomPlan(0))
        assert est.value[0] == pytest.approx(math.sin(x), abs=1e-12)
        assert est.stderr[0] <= 1e-12


def test_time_and_ensemble_averages_agree(bench):
    ta = estimate_abar(bench, 1.0, "time_average", 10.0, 40.0, 300, RandomPlan(3))
    en = estimate_abar(bench, 1.0, "ensemble", 10.0, 40.0, 20_000, RandomPlan(4))
    assert abs(ta.value[0] - en.value[0]) <= 3 * math.hypot(ta.stderr[0], en.stderr[0])


@pytest.mark.parametrize("burn_in, horizon", [(10.0, 10.0), (10.0, 5.0), (0.0, 5.0)])
def test_abar_window_validation(bench, burn_in, horizon):
    with pytest.raises(InvalidInputError):
        estimate_abar(bench, 0.0, burn_in=burn_in, horizon=horizon, n_paths=2)


def test_abar_other_errors(bench):
    with pytest.raises(InvalidInputError):
        estimate_abar(bench, 0.0, method="median", burn_in=1.0, horizon=2.0)
    with pytest.raises(InvalidInputError):
        estimate_abar(bench, 0.0, burn_in=1.0, horizon=2.0, n_paths=0)
    with pytest.raises(InvalidInputError):
        estimate_abar(bench, 0.0, "ensemble", 1.0, 2.0, n_paths=1)


def test_initial_condition_is_forgotten(bench):
    # common random numbers: the frozen paths from y0 and y0 + d differ by d (1 - dt)^k,
    # so the time averages differ by at most gamma |d| e^{-burn_in}
    near = estimate_abar(bench, 0.0, burn_in=10.0, horizon=30.0, n_paths=50, plan=RandomPlan(6), y0=[0.0])
    far = estimate_abar(bench, 0.0, burn_in=10.0, horizon=30.0, n_paths=50, plan=RandomPlan(6), y0=[8.0])
    assert abs(far.value[0] - near.value[0]) <= 8.0 * math.exp(-10.0)
    assert far.value[0] != near.value[0]


# --- mixing -------------------------------------------------------------------

def test_mixing_rate_of_benchmark(bench):
    est = estimate_mixing_rate(bench, 0.0, [2.0], [-1.0], horizon=10.0, n_paths=200, plan=RandomPlan(7))
    # synchronous coupling: the difference obeys d' = -d, so the squared distance decays at rate 2
    assert abs(est.beta_hat_sq + 2.0) <= 0.05
    assert est.beta_hat_sq <= -1.0
    t, mean = est.curve[:, 0], est.curve[:, 1]
    assert np.all(np.diff(mean) < 0)
    # paths differ only through where fast jumps split a step, an O(dt^2) effect
    assert np.all(est.distance_std <= 1e-3 * mean)
    # Euler contracts the difference by (1 - dt) per step
    np.testing.assert_allclose(mean, 9.0 * 0.99 ** (2 * np.round(t / 0.01)), rtol=1e-3)


def test_mixing_requires_distinct_starts(bench):
    with pytest.raises(InvalidInputError):
        estimate_mixing_rate(bench, 0.0, [1.0], [1.0], n_paths=4)


def test_mixing_rate_scales_with_contraction():
    m = scalar_model(f=lambda x, y: -3.0 * y, g=0.5)
    est = estimate_mixing_rate(m, 0.0, [1.0], [0.0], horizon=3.0, n_paths=10, plan=RandomPlan(0), dt=0.001)
    assert est.beta_hat_sq == pytest.approx(-6.0, abs=0.05)


# --- invariant moments ----------------------------------------------------------

def test_invariant_second_moment(bench):
    est = estimate_invariant_moment(bench, 0.0, horizon=20.0, n_paths=20_000, plan=RandomPlan(8))
    oracle = jump_ou_second_moment(0.0, 0.5, 0.2, 1.0)
    assert oracle == pytest.approx(1.585)
    assert abs(est.second_moment - oracle) <= 3 * est.stderr + 0.01  # O(dt) Euler bias


def test_moment_without_noise_is_square_of_fixed_point():
    xi = 1.7
    m = scalar_model(f=lambda x, y: -(y - xi))
    est = estimate_invariant_moment(m, 0.0, horizon=40.0, n_paths=4, plan=RandomPlan(0))
    assert est.second_moment == pytest.approx(xi * xi, rel=1e-12)
    assert est.stderr == pytest.approx(0.0, abs=1e-12)


def test_benchmark_moment_is_affinely_bounded(bench):
    ests = {x: estimate_invariant_moment(bench, x, horizon=15.0, n_paths=4000, plan=RandomPlan(10))
            for x in (0.0, 1.0, 2.0, 4.0)}
    for x, est in ests.items():
        oracle = jump_ou_second_moment(x, 0.5, 0.2, 1.0)
        assert abs(est.second_moment - oracle) <= 3 * est.stderr + 0.01
    C = max(e.second_moment / (1 + x * x) for x, e in ests.items())
    assert C <= 2.0
    assert all(e.second_moment <= C * (1 + x * x) for x, e in ests.items())


def test_moment_grows_like_one_plus_x_squared():
    # fast process centred at x: stationary second moment is x^2 + sigma^2 / 2
    m = scalar_model(f=lambda x, y: -(y - x), g=1.0)
    plan = RandomPlan(9)
    for x in (0.0, 1.0, 3.0, 10.0):
        est = estimate_invariant_moment(m, x, horizon=10.0, n_paths=1500, plan=plan, y0=[x])
        assert abs(est.second_moment - (x * x + 0.5)) <= 4 * est.stderr + 0.01 * (1 + x * x)
        assert est.second_moment <= 1.1 * (1 + x * x)


# --- averaged drift object ---------------------------------------------------------

def test_analytic_requires_closed_form():
    m = make_jump_ou_benchmark(bounded_read=True)
    with pytest.raises(InvalidInputError):
        AveragedDrift.analytic(m)
    assert AveragedDrift.default(m).source == "estimated"
    assert AveragedDrift.default(make_jump_ou_benchmark()).source == "analytic"


def test_analytic_jacobian(abar):
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(abar.jacobian(x)[:, 0, 0], np.cos(x[:, 0]) - np.sin(x[:, 0]), atol=1e-12)
    fd = AveragedDrift.from_callable(abar.fn, abar.model)
    np.testing.assert_allclose(fd.jacobian(x), abar.jacobian(x), atol=1e-8)


def test_estimated_cache_is_coherent(bench):
    est = AveragedDrift.estimated(bench, seed=3, burn_in=2.0, horizon=8.0, n_paths=8)
    v1 = est.value([[0.5], [0.5004], [0.5]])
    assert v1[0, 0] == v1[1, 0] == v1[2, 0]  # same cell, same estimate
    assert len(est._cache) == 1
    again = AveragedDrift.estimated(bench, seed=3, burn_in=2.0, horizon=8.0, n_paths=8)
    with ThreadPoolExecutor(4) as pool:
        vals = list(pool.map(lambda x: again(np.array([x]))[0], [0.5, 0.7, 0.5, 0.7]))
    assert vals[0] == vals[2] == v1[0, 0]
    assert vals[1] == vals[3] != vals[0]
    assert est.stderr([[0.5]])[0, 0] > 0


def test_estimated_drift_is_lipschitz(bench):
    est = AveragedDrift.estimated(bench, seed=0, n_paths=16)
    xs = np.arange(-2.0, 2.0001, 0.25)[:, None]
    vals = est.value(xs)[:, 0]
    se = est.stderr(xs)[:, 0]
    probe = lipschitz_probe(bench, default_probe(bench.dims))["a"]
    slopes = np.abs(np.diff(vals)) / 0.25
    allowance = 3 * np.hypot(se[1:], se[:-1]) / 0.25
    assert np.all(slopes <= probe + allowance)
    # and it tracks the closed form
    assert np.all(np.abs(vals - bench.abar_analytic(xs)[:, 0]) <= 4 * se + 0.005)
