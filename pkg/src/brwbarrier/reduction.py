"""Reduction of a non-critical law to the critical case by exponential tilting.

Replacing every position ``V(z)`` by ``t V(z) + Psi(t) |z|`` gives a law with
``Phi~(1) = 1`` and ``Phi~'(1) = -(t Psi'(t) - Psi(t))``; the tilt is critical
exactly when ``t`` solves ``G(t) := t Psi'(t) - Psi(t) = 0``. ``G`` is
nondecreasing (``G' = t Psi''``), so the root is unique and bisection is safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NumericalFailure, UnsupportedLaw
from .laws import (
    ClosedFormProfile,
    FiniteSupport,
    LaplaceProfile,
    PoissonGaussian,
    criticality_check,
    laplace_profile,
    phi,
    psi,
)

ZETA_INF_REDUCIBLE = "ZetaInf_Reducible"
ZETA_INF_IRREDUCIBLE = "ZetaInf_Irreducible"
CASE_A, CASE_B, CASE_C, CASE_D, CASE_E = "A", "B", "C", "D", "E_boundary"
UNCLASSIFIABLE = "Unclassifiable"

_WITH_ROOT = {ZETA_INF_REDUCIBLE, CASE_A, CASE_B, CASE_C, CASE_E}

T_SEARCH_MAX = 1e8


def _profile(obj):
    if isinstance(obj, (LaplaceProfile, ClosedFormProfile)):
        return obj
    return laplace_profile(obj)


def g_function(profile, t: float) -> float:
    """``t Psi'(t) - Psi(t)``."""
    return t * psi(profile, t, 1) - psi(profile, t, 0)


def _bisect(profile, lo: float, hi: float) -> float:
    glo = g_function(profile, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = g_function(profile, mid)
        if gm == 0.0:
            return mid
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _newton_polish(profile, t: float) -> float:
    # G'(t) = t Psi''(t); only used where Psi'' is available in closed form
    for _ in range(4):
        d = t * psi(profile, t, 2)
        if not d > 0:
            break
        step = g_function(profile, t) / d
        if abs(step) > 1e-6 * max(1.0, t):
            break
        t -= step
        if abs(step) <= 1e-16 * t:
            break
    return t


def find_t_star(profile) -> Optional[float]:
    """Root of ``t Psi'(t) - Psi(t)`` in ``(0, zeta]``, or ``None``."""
    profile = _profile(profile)
    zeta = profile.zeta
    if not zeta > 0:
        raise DomainError("zeta must be > 0")
    lo = min(1e-6, zeta / 2)
    if g_function(profile, lo) >= 0:
        # G(0+) = -Psi(0) >= 0: the mean offspring number is <= 1
        return None
    hi = lo
    while True:
        nxt = min(hi * 2.0, zeta) if math.isfinite(zeta) else hi * 2.0
        g = g_function(profile, nxt) if nxt < zeta or _finite_at_zeta(profile) else math.inf
        if g >= 0:
            hi = nxt
            break
        lo = nxt
        hi = nxt
        if nxt >= zeta or nxt > T_SEARCH_MAX:
            return None
    if hi == zeta and g_function(profile, zeta) == 0.0:
        return zeta
    t = _bisect(profile, lo, hi)
    if not isinstance(profile, ClosedFormProfile):
        t = _newton_polish(profile, t)
    return t


def _finite_at_zeta(profile) -> bool:
    if not math.isfinite(profile.zeta):
        return False
    try:
        return math.isfinite(phi(profile, profile.zeta, 0)) and math.isfinite(phi(profile, profile.zeta, 1))
    except (OverflowError, ZeroDivisionError, ValueError):
        return False


@dataclass(frozen=True)
class ReductionReport:
    t_star: Optional[float]
    case_tag: str
    sigma_tilde_sq: Optional[float]
    F_values: list = field(default_factory=list)
    printed_sigma_tilde_sq: Optional[float] = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "case_tag": self.case_tag,
            "sigma_tilde_sq": self.sigma_tilde_sq,
            "printed_sigma_tilde_sq": self.printed_sigma_tilde_sq,
            "printed_minus_direct": (
                None if self.printed_sigma_tilde_sq is None or self.sigma_tilde_sq is None
                else self.printed_sigma_tilde_sq - self.sigma_tilde_sq),
            "F_values": self.F_values,
            "note": self.note,
        }


def f_grid(profile, ts=None) -> list:
    """Diagnostic values of ``F(t) = Psi(t) / t``."""
    profile = _profile(profile)
    if ts is None:
        top = profile.zeta if math.isfinite(profile.zeta) else 10.0
        ts = np.linspace(top / 20, top * (0.999 if math.isfinite(profile.zeta) else 1.0), 20)
    out = []
    for t in ts:
        try:
            out.append((float(t), psi(profile, float(t), 0) / float(t)))
        except (DomainError, ValueError, OverflowError):
            continue
    return out


def sigma_tilde_sq_identity(profile, t_star: float) -> float:
    """``t*^2 Psi''(t*)``, equal to the direct definition at a root of G."""
    return t_star * t_star * psi(profile, t_star, 2)


def printed_sigma_tilde_sq(profile, t_star: float) -> float:
    """``t*^2 Phi''(t*) - Psi(t*)^2`` as displayed in the source (no ``1/Phi(t*)``)."""
    return t_star * t_star * phi(profile, t_star, 2) - psi(profile, t_star, 0) ** 2


def classify_reduction(profile) -> ReductionReport:
    profile = _profile(profile)
    fvals = f_grid(profile)
    if psi(profile, 0.0, 0) <= 0.0:
        # G(0+) = -log Phi(0) >= 0 and G is increasing: no positive root at all
        tag = ZETA_INF_IRREDUCIBLE if not math.isfinite(profile.zeta) else CASE_D
        return ReductionReport(None, tag, None, fvals,
                               note="mean offspring number Phi(0) <= 1: t Psi'(t) > Psi(t) for all t > 0")
    if not math.isfinite(profile.zeta):
        reducible = not (profile.x_min > -math.inf and profile.mass_at_xmin >= 1.0)
        if not reducible:
            return ReductionReport(None, ZETA_INF_IRREDUCIBLE, None, fvals,
                                   note="x_min finite with mu({x_min}) >= 1")
        t = find_t_star(profile)
        if t is None:
            raise NumericalFailure("classification predicts a root of t Psi' - Psi but none was bracketed")
        return _report_with_root(profile, t, ZETA_INF_REDUCIBLE, fvals)

    zeta = profile.zeta
    try:
        p0 = phi(profile, zeta, 0)
        p1 = phi(profile, zeta, 1) if math.isfinite(p0) else math.inf
    except (OverflowError, ZeroDivisionError, ValueError):
        return ReductionReport(None, UNCLASSIFIABLE, None, fvals, note="Phi not evaluable at zeta")
    if not math.isfinite(p0):
        tag = CASE_A
    elif not math.isfinite(p1):
        tag = CASE_B
    else:
        gz = zeta * p1 / p0 - math.log(p0)
        if gz > 0:
            tag = CASE_C
        elif gz < 0:
            return ReductionReport(None, CASE_D, None, fvals, note="zeta Psi'(zeta) < Psi(zeta)")
        else:
            tag = CASE_E
    if tag == CASE_E:
        p2 = phi(profile, zeta, 2)
        if not math.isfinite(p2):
            return ReductionReport(zeta, CASE_E, None, fvals, note="Phi''(zeta) infinite: sigma~^2 infinite")
        return _report_with_root(profile, zeta, CASE_E, fvals)
    t = find_t_star(profile)
    if t is None:
        raise NumericalFailure(f"case {tag} predicts a root in (0, zeta) but none was bracketed")
    return _report_with_root(profile, t, tag, fvals)


def _report_with_root(profile, t, tag, fvals):
    direct = None
    if profile.law is not None:
        direct = tilt_law(profile.law, t).sigma_tilde_sq
    else:
        direct = sigma_tilde_sq_identity(profile, t)
    return ReductionReport(t, tag, direct, fvals, printed_sigma_tilde_sq(profile, t))


@dataclass(frozen=True)
class TiltResult:
    law: object
    sigma_tilde_sq: float


def tilt_law(law, t_star: float) -> TiltResult:
    """Law of ``t* xi + Psi(t*)``; ``sigma_tilde_sq`` from ``E[sum xi~^2 e^{-xi~}]``."""
    profile = laplace_profile(law)
    p0 = phi(profile, t_star, 0)
    p2 = phi(profile, t_star, 2)
    if not (math.isfinite(p0) and math.isfinite(p2)):
        raise DomainError("Phi or Phi'' infinite at t*")
    shift = psi(profile, t_star, 0)
    if isinstance(law, FiniteSupport):
        new = FiniteSupport([(p, [t_star * x + shift for x in d]) for p, d in law.outcomes])
        s2 = math.fsum(p * y * y * math.exp(-y) for p, d in new.outcomes for y in d)
        return TiltResult(new, s2)
    if isinstance(law, PoissonGaussian):
        new = PoissonGaussian(law.m, t_star * law.mu + shift, t_star * t_star * law.s0sq)
        # E[sum y^2 e^{-y}] for Poisson(m) x N(mu', v'):  m e^{-mu'+v'/2} ((mu'-v')^2 + v')
        mu2, v2 = new.mu, new.s0sq
        s2 = new.m * math.exp(-mu2 + 0.5 * v2) * ((mu2 - v2) ** 2 + v2)
        return TiltResult(new, s2)
    raise UnsupportedLaw(type(law).__name__)


# -------------------------------------------------- named closed-form profiles

def _exp_left(m: float = 2.0, beta: float = 2.0) -> ClosedFormProfile:
    """``m`` children at ``-Exp(beta)``: ``Phi(t) = m beta / (beta - t)``, ``zeta = beta``."""

    def d0(t):
        return math.inf if t >= beta else m * beta / (beta - t)

    def d1(t):
        return math.inf if t >= beta else m * beta / (beta - t) ** 2

    def d2(t):
        return math.inf if t >= beta else 2 * m * beta / (beta - t) ** 3

    return ClosedFormProfile("exp_left", (d0, d1, d2), beta, params={"m": m, "beta": beta})


PROFILE_REGISTRY: dict = {"exp_left": _exp_left}


def register_profile(name: str, factory: Callable[..., ClosedFormProfile]) -> None:
    PROFILE_REGISTRY[name] = factory


def closed_form_profile(name: str, **params) -> ClosedFormProfile:
    try:
        return PROFILE_REGISTRY[name](**params)
    except KeyError:
        raise DomainError(f"no closed-form profile registered as {name!r}") from None


def is_critical_after_tilt(law, tol: float = 1e-9) -> bool:
    report = classify_reduction(laplace_profile(law))
    if report.t_star is None:
        return False
    return criticality_check(tilt_law(law, report.t_star).law, tol).is_critical
