import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from slowfast.errors import InvalidInputError
from slowfast.randomness import (
    ROLES,
    RandomPlan,
    bridge_split,
    brownian_increments,
    exponentials,
    philox4x32,
    sample_jump_times,
    sample_jump_times_batch,
    standard_normals,
    step_increments,
)

seeds = st.integers(min_value=0, max_value=2**64 - 1)


# Known-answer vectors published with the Random123 reference implementation.
@pytest.mark.parametrize(
    "counter, key, expected",
    [
        ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
        ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
        (
            (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
            (0xA4093822, 0x299F31D0),
            (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
        ),
    ],
)
def test_philox_known_answers(counter, key, expected):
    out = philox4x32(*counter, key)
    assert tuple(int(v) for v in out) == expected


@given(seed=seeds, stream=st.integers(0, 2**32), role=st.sampled_from(ROLES))
def test_same_plan_same_draws(seed, stream, role):
    a = RandomPlan(seed, stream)
    b = RandomPlan(seed, stream)
    samples = np.arange(5, dtype=np.uint64)
    za = standard_normals(a.key(role), 3, 0, samples, 2)
    zb = standard_normals(b.key(role), 3, 0, samples, 2)
    assert za.tobytes() == zb.tobytes()
    ta = sample_jump_times(2.0, 5.0, a, role, sample=7).times
    tb = sample_jump_times(2.0, 5.0, b, role, sample=7).times
    assert ta.tobytes() == tb.tobytes()


def test_samples_are_addressable():
    # sample i alone equals row i of a batch
    plan = RandomPlan(1)
    batch = standard_normals(plan.key("B"), 4, 0, np.arange(100, dtype=np.uint64), 3)
    single = standard_normals(plan.key("B"), 4, 0, [57], 3)
    assert np.array_equal(batch[57], single[0])


def test_roles_and_streams_have_distinct_keys():
    keys = {RandomPlan(9, s).key(r) for s in range(4) for r in ROLES}
    assert len(keys) == 16


def test_plan_validation():
    with pytest.raises(InvalidInputError):
        RandomPlan(-1)
    with pytest.raises(InvalidInputError):
        RandomPlan(1, substream_ids={"B": 0, "W": 0, "P": 2, "N": 3})
    with pytest.raises(InvalidInputError):
        RandomPlan(1).key("Q")


def test_substream_independence_smoke():
    plan = RandomPlan(424242)
    samples = np.arange(10_000, dtype=np.uint64)
    draws = [standard_normals(plan.key(r), 0, 0, samples, 1)[:, 0] for r in ROLES]
    draws.append(standard_normals(plan.child(1).key("B"), 0, 0, samples, 1)[:, 0])
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert abs(np.corrcoef(draws[i], draws[j])[0, 1]) < 0.02


def test_normals_are_standard():
    z = standard_normals(RandomPlan(3).key("W"), 0, 0, np.arange(200_000, dtype=np.uint64), 2)
    assert stats.kstest(z[:, 0], "norm").pvalue > 1e-3
    assert stats.kstest(z[:, 1], "norm").pvalue > 1e-3


def test_zero_rate_gives_empty_schedule():
    sched = sample_jump_times(0.0, 10.0, RandomPlan(0), "P")
    assert len(sched) == 0


@pytest.mark.parametrize("rate, horizon", [(-1.0, 1.0), (1.0, 0.0), (1.0, -2.0), (math.inf, 1.0)])
def test_bad_schedule_arguments(rate, horizon):
    with pytest.raises(InvalidInputError):
        sample_jump_times(rate, horizon, RandomPlan(0), "P")


@given(seed=seeds, rate=st.floats(0.1, 50.0), horizon=st.floats(0.01, 20.0), sample=st.integers(0, 10**6))
def test_schedule_sorted_inside_horizon(seed, rate, horizon, sample):
    t = sample_jump_times(rate, horizon, RandomPlan(seed), "N", sample).times
    assert np.all(np.diff(t) > 0)
    assert np.all((t > 0) & (t <= horizon))


def test_poisson_mean_count():
    # rate 2 on [0, 10] over 1e5 independent draws: mean count 20.0 +- 0.05
    times = sample_jump_times_batch(2.0, 10.0, RandomPlan(77), "P", np.arange(100_000))
    counts = np.array([len(t) for t in times])
    assert abs(counts.mean() - 20.0) < 0.05
    # dispersion index of a Poisson count is 1
    assert abs(counts.var(ddof=1) / counts.mean() - 1.0) < 0.03


@pytest.mark.parametrize("rate", [0.5, 1.0, 10.0])
def test_interarrivals_are_exponential(rate):
    times = sample_jump_times_batch(rate, 40.0 / rate, RandomPlan(5), "N", np.arange(500))
    gaps = np.concatenate([np.diff(np.concatenate([[0.0], t])) for t in times])
    assert stats.kstest(gaps, "expon", args=(0, 1.0 / rate)).pvalue > 1e-3


def test_exponentials_mean_one():
    e = exponentials(RandomPlan(8).key("P"), 0, np.arange(100_000, dtype=np.uint64))
    assert abs(e.mean() - 1.0) < 4 * 1.0 / math.sqrt(e.size)


def test_brownian_empty_grid():
    assert brownian_increments([], 2, RandomPlan(0), "B").shape == (0, 2)


@pytest.mark.parametrize("grid", [[0.1, 0.0], [0.1, -0.2], [math.nan]])
def test_brownian_rejects_bad_steps(grid):
    with pytest.raises(InvalidInputError):
        brownian_increments(grid, 1, RandomPlan(0), "B")


def test_brownian_step_variance():
    inc = brownian_increments(np.full(1_000_000, 1e-3), 2, RandomPlan(11), "B")
    var = inc.var(axis=0, ddof=1)
    assert np.all(np.abs(var / 1e-3 - 1.0) < 0.01)


def test_brownian_marginal_across_seeds():
    grid = [0.1, 0.25, 0.15, 0.5]  # T = 1
    totals = np.array([brownian_increments(grid, 1, RandomPlan(s), "W").sum() for s in range(100_000)])
    assert abs(totals.var(ddof=1) - 1.0) < 0.02


def test_step_increment_variance_and_refinement_consistency():
    key = RandomPlan(2).key("B")
    samples = np.arange(50_000, dtype=np.uint64)
    h = 0.01
    for r in (0, 1, 3):
        inc = step_increments(key, 5, r, h, samples, 1)
        assert abs(inc.var() / h - 1.0) < 0.03
    # two refine=r+1 steps of h/2 add up to the refine=r step of h
    for r in (0, 2):
        coarse = step_increments(key, 6, r, h, samples, 1)
        fine = step_increments(key, 12, r + 1, h / 2, samples, 1) + step_increments(key, 13, r + 1, h / 2,
                                                                                      samples, 1)
        np.testing.assert_allclose(fine, coarse, rtol=0, atol=1e-15)


def test_refined_halves_are_independent():
    key = RandomPlan(4).key("W")
    samples = np.arange(50_000, dtype=np.uint64)
    left = step_increments(key, 10, 1, 0.5, samples, 1)[:, 0]
    right = step_increments(key, 11, 1, 0.5, samples, 1)[:, 0]
    assert abs(np.corrcoef(left, right)[0, 1]) < 0.02


def test_bridge_split_pieces():
    key = RandomPlan(6).key("B")
    n = 100_000
    samples = np.arange(n, dtype=np.uint64)
    whole = step_increments(key, 0, 0, 1.0, samples, 1)
    inc, rem = bridge_split(key, 0, 0, np.zeros(n, dtype=np.uint64), np.zeros(n), 1.0, whole,
                            np.full(n, 0.3), samples, 1)
    np.testing.assert_allclose(inc + rem, whole, atol=1e-14)
    # a Brownian bridge cut gives independent N(0, 0.3) and N(0, 0.7) pieces
    assert abs(inc.var() / 0.3 - 1) < 0.02
    assert abs(rem.var() / 0.7 - 1) < 0.02
    assert abs(np.corrcoef(inc[:, 0], rem[:, 0])[0, 1]) < 0.02
    # cutting at the end takes everything
    inc2, rem2 = bridge_split(key, 0, 0, np.zeros(n, dtype=np.uint64), np.zeros(n), 1.0, whole,
                              np.ones(n), samples, 1)
    assert np.array_equal(inc2, whole) and not rem2.any()
