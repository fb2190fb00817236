import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from brwbarrier.errors import DomainError, SizeLimit, UnsupportedLaw
from brwbarrier.laws import FiniteSupport, PoissonGaussian, critical_gaussian
from brwbarrier.rng import RandomStream
from brwbarrier.tube import (PM_ONE, Constant, CubeRootOffset, DiscreteAtoms, Gaussian,
                             IndicatorBelowZeroAtN, IndicatorTubeConstant, One, TubeSpec,
                             lattice_band_spec, many_to_one_check, mogulskii_rate, parse_profile,
                             tilted_step, tube_decay_ratio, tube_log_probability_exact,
                             tube_probability_exact, tube_probability_mc)

LOG2 = math.log(2)
ONE_CHILD = FiniteSupport([(1 / 3, [-LOG2]), (2 / 3, [LOG2])])
TWINS = FiniteSupport([(1.0, [LOG2, LOG2])])
MIXED = FiniteSupport([(0.5, []), (0.5, [-math.log(1.5), LOG2])])
LAWS = [ONE_CHILD, TWINS, MIXED]
FUNCTIONALS = [One(), IndicatorBelowZeroAtN(), IndicatorTubeConstant(1.0)]


def test_tilted_step_examples():
    s = tilted_step(ONE_CHILD)
    assert [x for x, _ in s.atoms] == pytest.approx([-LOG2, LOG2])
    assert [p for _, p in s.atoms] == pytest.approx([2 / 3, 1 / 3], rel=1e-15)
    assert tilted_step(critical_gaussian(1.0)) == Gaussian(0.0, 1.0)
    t = tilted_step(TWINS)
    assert len(t.atoms) == 1 and t.atoms[0] == pytest.approx((LOG2, 1.0))


def test_tilted_step_of_critical_laws():
    law = FiniteSupport([(0.5, [-1.0, 0.0]), (0.5, [0.3])])
    with pytest.raises(DomainError):
        tilted_step(law)
    g = tilted_step(PoissonGaussian(math.exp(0.5 * 2.0), 2.0, 2.0))
    assert g.mean == pytest.approx(0.0) and g.variance == 2.0


def test_tilted_step_of_critical_finite_law_is_centred():
    # atoms at -c and c with intensities r and 1 + r; criticality forces
    # e^c = 1 + sqrt(2) and r = e^{-c} / 2, and the tilted step is +-c fair
    c = math.log(1 + math.sqrt(2))
    r = math.exp(-c) / 2
    law = FiniteSupport([(r, [-c, c, c]), (1 - r, [c])])
    s = tilted_step(law)
    assert s.mean == pytest.approx(0.0, abs=1e-12)
    assert s.variance == pytest.approx(c * c, rel=1e-12)
    assert [p for _, p in s.atoms] == pytest.approx([0.5, 0.5], rel=1e-12)


@pytest.mark.parametrize("law", LAWS, ids=["one_child", "twins", "mixed"])
@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("functional", FUNCTIONALS, ids=["one", "below0", "tube"])
def test_many_to_one_matrix(law, n, functional):
    assert many_to_one_check(law, n, functional).abs_diff <= 1e-12


def test_many_to_one_hand_values():
    r = many_to_one_check(ONE_CHILD, 1, One())
    assert r.lhs == pytest.approx(1.0) and r.rhs == pytest.approx(1.0)
    r = many_to_one_check(ONE_CHILD, 2, IndicatorBelowZeroAtN())
    assert r.lhs == pytest.approx(8 / 9, abs=1e-15) and r.rhs == pytest.approx(8 / 9, abs=1e-15)
    r = many_to_one_check(TWINS, 2, One())
    assert r.lhs == pytest.approx(1.0, abs=1e-15)


def test_many_to_one_errors():
    with pytest.raises(UnsupportedLaw):
        many_to_one_check(critical_gaussian(1.0), 2, One())
    with pytest.raises(SizeLimit):
        many_to_one_check(FiniteSupport([(0.5, [LOG2, LOG2]), (0.5, [LOG2, LOG2])]), 6, One())


def test_tube_spec_validation():
    with pytest.raises(DomainError):
        TubeSpec(4, Constant(0.5), Constant(1.0))
    with pytest.raises(DomainError):
        TubeSpec(4, Constant(1.0), Constant(1.0))
    TubeSpec(4, Constant(0.0), Constant(0.0), relaxed=True)
    with pytest.raises(DomainError):
        TubeSpec(0, Constant(-1.0), Constant(1.0))


def test_parse_profile():
    assert parse_profile("const:-1") == Constant(-1.0)
    assert parse_profile("cbrt:3:0.1") == CubeRootOffset(3.0, 0.1)
    for bad in ("const:", "cube:1", "cbrt:x"):
        with pytest.raises(DomainError):
            parse_profile(bad)


def _brute_band(j, lo, hi):
    hits = 0
    for steps in itertools.product((-1, 1), repeat=j):
        s = np.cumsum(steps)
        hits += bool(np.all((s >= lo) & (s <= hi)))
    return hits / 2 ** j


def test_exact_oracle_small_cases():
    assert tube_probability_exact(PM_ONE, 1, (-1, 1)) == 1.0
    assert tube_probability_exact(PM_ONE, 2, (-1, 1)) == 0.5
    for j in range(1, 13):
        assert tube_probability_exact(PM_ONE, j, (-2, 1)) == pytest.approx(_brute_band(j, -2, 1), rel=1e-13)


def test_exact_oracle_decay_ratio():
    assert tube_decay_ratio(PM_ONE, (-1, 1)) == pytest.approx(math.cos(math.pi / 4), rel=1e-12)
    d = tube_log_probability_exact(PM_ONE, 4001, (-1, 1)) - tube_log_probability_exact(PM_ONE, 3999, (-1, 1))
    assert math.exp(d / 2) == pytest.approx(math.cos(math.pi / 4), rel=1e-12)


def test_exact_oracle_rejects_non_lattice():
    with pytest.raises(UnsupportedLaw):
        tube_probability_exact(DiscreteAtoms(((-0.5, 0.5), (0.5, 0.5))), 3, (-1, 1))


@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 3), st.integers(0, 3), st.integers(1, 40))
def test_exact_oracle_monotone_in_band(lo, hi, dlo, dhi, j):
    band = (-lo, hi)
    wide = (-lo - dlo, hi + dhi)
    step = DiscreteAtoms(((-1.0, 0.3), (0.0, 0.2), (2.0, 0.5)))
    assert tube_probability_exact(step, j, band) <= tube_probability_exact(step, j, wide) * (1 + 1e-12)


def test_mogulskii_closed_forms():
    assert mogulskii_rate(1.0, TubeSpec(8, Constant(-1), Constant(1))) == pytest.approx(math.pi ** 2 / 8)
    assert mogulskii_rate(1.0, TubeSpec(8, Constant(0), CubeRootOffset(3, 0))) == pytest.approx(math.pi ** 2 / 6)
    narrow = mogulskii_rate(1.0, TubeSpec(8, Constant(-1), Constant(1)))
    wide = mogulskii_rate(1.0, TubeSpec(8, Constant(-2), Constant(2)))
    assert wide == pytest.approx(narrow / 4)
    assert mogulskii_rate(1.0, TubeSpec(8, Constant(0), Constant(0), relaxed=True)) == math.inf


@pytest.mark.parametrize("lower,upper", [
    (Constant(-1.0), CubeRootOffset(2.0, 0.5)),
    (CubeRootOffset(-1.0, 0.2), CubeRootOffset(2.0, 0.5)),
    (CubeRootOffset(-1.0, 0.3), CubeRootOffset(2.0, 0.3)),
])
def test_mogulskii_against_mpmath(lower, upper):
    spec = TubeSpec(8, lower, upper)
    f = lambda t: 1 / (upper(float(t)) - lower(float(t))) ** 2
    ref = float(mpmath.pi ** 2 / 2 * 1.7 * mpmath.quad(lambda t: f(t), [0, 0.01, 1]))
    assert mogulskii_rate(1.7, spec) == pytest.approx(ref, rel=1e-9)


def test_mc_tube_never_binds():
    spec = TubeSpec(100, Constant(-1e9), Constant(1e9))
    e = tube_probability_mc(Gaussian(0.0, 1.0), spec, 1000, RandomStream(0))
    assert e.p_hat == 1.0


def test_mc_matches_exact_two_steps():
    e = tube_probability_mc(PM_ONE, lattice_band_spec(2, (-1, 1)), 10 ** 5, RandomStream(1))
    assert abs(e.p_hat - 0.5) <= 4 * e.stderr


@pytest.mark.parametrize("j", [5, 17])
def test_mc_matches_exact_lattice(j):
    step = DiscreteAtoms(((-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)))
    band = (-2, 1)
    e = tube_probability_mc(step, lattice_band_spec(j, band), 2 * 10 ** 5, RandomStream(2))
    assert abs(e.p_hat - tube_probability_exact(step, j, band)) <= 4 * e.stderr


def test_endpoint_window_only_removes_paths():
    step = Gaussian(0.0, 1.0)
    base = TubeSpec(27, Constant(-1.0), Constant(1.0))
    win = TubeSpec(27, Constant(-1.0), Constant(1.0), endpoint_window=(0.5, 1.0))
    a = tube_probability_mc(step, base, 20000, RandomStream(3))
    b = tube_probability_mc(step, win, 20000, RandomStream(3))
    assert b.hits <= a.hits


def test_histogram_accounts_for_every_run():
    e = tube_probability_mc(Gaussian(0.0, 1.0), TubeSpec(8, Constant(-1), Constant(1)), 5000,
                            RandomStream(4), histogram=True)
    assert int(e.histogram.sum()) + e.hits == 5000


def test_mc_is_deterministic_across_workers():
    spec = TubeSpec(27, Constant(-1.0), Constant(1.0))
    a = tube_probability_mc(Gaussian(0.0, 1.0), spec, 3000, RandomStream(5), workers=1)
    b = tube_probability_mc(Gaussian(0.0, 1.0), spec, 3000, RandomStream(5), workers=3)
    assert a.hits == b.hits
