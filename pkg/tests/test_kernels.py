"""The numba kernels and the numpy fallback must agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brwbarrier import kernels
from brwbarrier.laws import FiniteSupport, PoissonGaussian, pack_law
from brwbarrier.rng import RandomStream

finite_laws = st.lists(
    st.tuples(st.floats(0.05, 1.0), st.lists(st.floats(-2, 2), min_size=0, max_size=3)),
    min_size=1, max_size=4,
).map(lambda outs: FiniteSupport([(w / sum(x for x, _ in outs), d) for w, d in outs]))
pg_laws = st.builds(PoissonGaussian, st.floats(0.5, 2.5), st.floats(-1, 1), st.floats(0.1, 2.0))
laws = st.one_of(finite_laws, pg_laws)


def _run(law, a, lower_a, n, runs, cap, mode, seed, backend, keep=False):
    keys = RandomStream(seed).keys(runs)
    up = a * np.cbrt(np.arange(n + 1.0))
    lo = lower_a * np.cbrt(np.arange(n + 1.0)) if lower_a is not None else np.full(n + 1, -np.inf)
    lo[0] = -np.inf
    return kernels.evolve(np.zeros(runs), keys, np.arange(runs + 1), np.ones(runs), 0, n, up, lo,
                          pack_law(law), cap, mode, ck_gens=(2, n), keep_final=keep, backend=backend)


@settings(max_examples=150, deadline=None)
@given(laws, st.floats(-1, 6), st.one_of(st.none(), st.floats(-3, 0)), st.integers(1, 12),
       st.integers(1, 30), st.sampled_from([1, 3, 50]), st.sampled_from([0, 1, 2]),
       st.integers(0, 2 ** 32))
def test_evolve_backends_identical(law, a, lower_a, n, runs, cap, mode, seed):
    x = _run(law, a, lower_a, n, runs, cap, mode, seed, "numba", keep=True)
    y = _run(law, a, lower_a, n, runs, cap, mode, seed, "numpy", keep=True)
    for u, v in zip(x, y):
        assert np.array_equal(u, v)


@settings(max_examples=40, deadline=None)
@given(laws, st.floats(-1, 4), st.integers(1, 10), st.integers(0, 2 ** 32))
def test_survivors_respect_barrier(law, a, n, seed):
    up = a * np.cbrt(np.arange(n + 1.0))
    *_, pos, _, off = _run(law, a, None, n, 5, 200, kernels.CAP_SUBSAMPLE, seed, None, keep=True)
    assert np.all(pos <= up[n])


@settings(max_examples=40, deadline=None)
@given(laws, st.floats(-1, 3), st.floats(0.0, 3.0), st.integers(1, 10), st.integers(0, 2 ** 32))
def test_pathwise_monotone_in_barrier(law, a, da, n, seed):
    lo = _run(law, a, None, n, 20, 10 ** 4, kernels.CAP_ALIVE, seed, None)
    hi = _run(law, a + da, None, n, 20, 10 ** 4, kernels.CAP_ALIVE, seed, None)
    alive_lo, alive_hi = lo[0] < 0, hi[0] < 0
    assert np.all(~alive_lo | alive_hi)
    # without a cap, the higher barrier keeps a superset of individuals
    assert np.all(lo[4] <= hi[4])


@settings(max_examples=30, deadline=None)
@given(laws, st.floats(0, 3), st.floats(-2, 0), st.integers(1, 8), st.integers(0, 2 ** 32))
def test_second_barrier_only_removes(law, a, lower_a, n, seed):
    one = _run(law, a, None, n, 10, 10 ** 6, kernels.CAP_WEIGHT, seed, None)
    two = _run(law, a, lower_a, n, 10, 10 ** 6, kernels.CAP_WEIGHT, seed, None)
    assert np.all(two[4] <= one[4])


def test_weighted_cap_is_unbiased():
    law = PoissonGaussian(2.0, 0.0, 1.0)
    n, runs = 8, 4000
    free = _run(law, 1e9, None, n, runs, 10 ** 9, kernels.CAP_WEIGHT, 3, None)[4][:, 1]
    capped = _run(law, 1e9, None, n, runs, 20, kernels.CAP_WEIGHT, 3, None)[4][:, 1]
    se = np.hypot(free.std(), capped.std()) / np.sqrt(runs)
    assert abs(free.mean() - 2.0 ** n) < 4 * free.std() / np.sqrt(runs)
    assert abs(capped.mean() - free.mean()) < 4 * se


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["discrete", "gauss"]), st.floats(0.2, 3), st.integers(1, 40),
       st.integers(0, 2 ** 32), st.booleans())
def test_tube_walk_backends_identical(kind, width, j, seed, window):
    keys = RandomStream(seed).keys(500)
    if kind == "discrete":
        args = (kernels.STEP_DISCRETE, np.array([0.3, 0.6, 1.0]), np.array([-1.0, 0.0, 1.5]), 0.0, 0.0)
    else:
        args = (kernels.STEP_GAUSSIAN, np.ones(1), np.zeros(1), 0.1, 1.2)
    lo = np.full(j + 1, -width)
    up = np.full(j + 1, width)
    end = (-width / 2, width) if window else (-np.inf, np.inf)
    a = kernels.tube_walk(keys, *args, lo, up, *end, backend="numba")
    b = kernels.tube_walk(keys, *args, lo, up, *end, backend="numpy")
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_cap_alive_counts_alive_and_stops():
    law = PoissonGaussian(3.0, 0.0, 1.0)
    ext, capg, count, *_ = _run(law, 1e9, None, 30, 5, 100, kernels.CAP_ALIVE, 1, None)
    assert np.all(ext < 0) and np.all(capg > 0) and np.all(count > 100)


def test_subsample_flags_truncation():
    law = PoissonGaussian(3.0, 0.0, 1.0)
    ext, capg, count, *_ = _run(law, 1e9, None, 10, 5, 100, kernels.CAP_SUBSAMPLE, 1, None)
    assert np.all(capg > 0) and np.all(count <= 100)
