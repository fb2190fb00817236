import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from brwbarrier.errors import DomainError, UnsupportedLaw
from brwbarrier.laws import (FiniteSupport, PoissonGaussian, critical_gaussian, criticality_check,
                             enumerate_outcomes, laplace_profile, law_diagnostics, offspring_np,
                             pack_law, phi, psi, sample_offspring, sample_offspring_many)
from brwbarrier.rng import RandomStream

LOG2 = math.log(2)
ONE_CHILD = FiniteSupport([(1 / 3, [-LOG2]), (2 / 3, [LOG2])])
TWINS = FiniteSupport([(1.0, [LOG2, LOG2])])
CRIT_PG = PoissonGaussian(math.exp(0.5), 1.0, 1.0)


def test_probabilities_must_sum_to_one():
    with pytest.raises(DomainError):
        FiniteSupport([(0.5, [1.0]), (0.4, [])])


def test_negative_step_flag():
    assert ONE_CHILD.has_negative_steps
    assert not TWINS.has_negative_steps
    assert CRIT_PG.has_negative_steps


def test_diagnostics_flag_subcritical_population():
    d = law_diagnostics(FiniteSupport([(0.5, [0.1]), (0.5, [])]))
    assert d["subcritical_population"] and d["mean_children"] == 0.5
    assert not law_diagnostics(TWINS)["subcritical_population"]


def test_sample_single_outcome_law():
    s = RandomStream(0)
    for _ in range(5):
        assert sample_offspring(TWINS, s) == [LOG2, LOG2]


def test_sample_frequency_of_outcome():
    n = 10 ** 5
    parent, disp = sample_offspring_many(ONE_CHILD, RandomStream(1), n)
    freq = np.mean(disp < 0)
    assert abs(freq - 1 / 3) <= 3 * math.sqrt(2 / 9 / n)


def test_poisson_mean_children():
    n = 10 ** 5
    parent, _ = sample_offspring_many(CRIT_PG, RandomStream(2), n)
    counts = np.bincount(parent, minlength=n)
    m = math.exp(0.5)
    assert abs(counts.mean() - m) <= 3 * math.sqrt(m / n)


def test_gaussian_displacements_moments():
    _, disp = sample_offspring_many(PoissonGaussian(3.0, 1.5, 4.0), RandomStream(3), 50000)
    se = 2.0 / math.sqrt(disp.size)
    assert abs(disp.mean() - 1.5) < 4 * se
    assert abs(disp.var() - 4.0) < 0.1


def test_sampling_is_deterministic():
    a = sample_offspring_many(CRIT_PG, RandomStream(9), 100)
    b = sample_offspring_many(CRIT_PG, RandomStream(9), 100)
    assert np.array_equal(a[1], b[1])


def test_enumerate_outcomes():
    law = FiniteSupport([(0.5, [0.1]), (0.5, [])])
    out = enumerate_outcomes(law)
    assert out == [(0.5, [0.1]), (0.5, [])]
    assert math.fsum(p for p, _ in out) == 1.0
    with pytest.raises(UnsupportedLaw):
        enumerate_outcomes(CRIT_PG)


def test_phi_examples():
    assert phi(CRIT_PG, 1.0) == 1.0
    assert phi(ONE_CHILD, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert phi(TWINS, 0.0) == 2.0
    assert phi(CRIT_PG, 0.0) == pytest.approx(math.exp(0.5), rel=1e-15)


def test_phi_rejects_negative_t():
    with pytest.raises(DomainError):
        phi(ONE_CHILD, -0.1)


def test_criticality_examples():
    r = criticality_check(CRIT_PG)
    assert r.is_critical and r.sigma_sq == pytest.approx(1.0, abs=1e-15)
    assert not criticality_check(PoissonGaussian(2.0, 0.0, 1.0)).is_critical
    r = criticality_check(TWINS)
    assert abs(r.psi1) < 1e-15 and abs(r.dpsi1) == pytest.approx(LOG2) and not r.is_critical


def test_critical_gaussian_helper():
    for s2 in (0.25, 1.0, 3.0):
        r = criticality_check(critical_gaussian(s2))
        assert r.is_critical and r.sigma_sq == pytest.approx(s2, rel=1e-12)


def test_profile_fields():
    p = laplace_profile(FiniteSupport([(0.5, [-1.0]), (0.5, [-1.0, -1.0])]))
    assert p.x_min == -1.0 and p.mass_at_xmin == 1.5 and p.zeta == math.inf
    q = laplace_profile(CRIT_PG)
    assert q.x_min == -math.inf and q.zeta == math.inf


finite_laws = st.lists(
    st.tuples(st.floats(0.05, 1.0), st.lists(st.floats(-3, 3), min_size=0, max_size=4)),
    min_size=1, max_size=4,
).filter(lambda outs: any(d for _, d in outs)).map(
    lambda outs: FiniteSupport([(w / sum(x for x, _ in outs), d) for w, d in outs]))


@given(finite_laws, st.floats(0.05, 2.0))
def test_phi_derivative_matches_finite_difference(law, t):
    h = 1e-5
    fd = (phi(law, t + h) - phi(law, t - h)) / (2 * h)
    d1 = phi(law, t, 1)
    assert abs(fd - d1) <= 1e-6 * max(1.0, abs(d1)) + 1e-8


@given(finite_laws)
def test_psi_is_convex(law):
    ts = np.linspace(0.0, 3.0, 61)
    vals = np.array([psi(law, t) for t in ts])
    second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
    assert np.all(second > -1e-9)


@given(finite_laws, st.floats(0.0, 2.0))
def test_psi_derivatives_consistent_with_phi(law, t):
    f0, f1, f2 = (phi(law, t, k) for k in range(3))
    assert psi(law, t, 1) == pytest.approx(f1 / f0, rel=1e-9, abs=1e-12)
    assert psi(law, t, 2) == pytest.approx(f2 / f0 - (f1 / f0) ** 2, rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("t", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("law", [ONE_CHILD, CRIT_PG, FiniteSupport([(0.3, []), (0.7, [-0.5, 1.0])])],
                         ids=["one_child", "poisson", "mixed"])
def test_empirical_laplace_transform(law, t):
    n = 10 ** 6
    packed = pack_law(law)
    parent, disp, _ = offspring_np(packed, RandomStream(4).keys(n))
    per = np.bincount(parent, weights=np.exp(-t * disp), minlength=n)
    se = per.std() / math.sqrt(n)
    assert abs(per.mean() - phi(law, t)) <= 4 * se
