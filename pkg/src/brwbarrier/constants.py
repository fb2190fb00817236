"""Critical constants of the cube-root barrier and their algebraic companions.

With ``K = 3 pi^2 sigma^2 / 2`` the map ``b -> b + K / b^2`` has its minimum
``a_c = (3/2)(3 pi^2 sigma^2)^{1/3}`` at ``b = 2 a_c / 3``; the roots of
``a = b + K / b^2`` are the possible cube-root slopes of a population living
under the barrier ``a i^{1/3}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError

DOUBLE_ROOT_TOL = 1e-9

_PI_LD = np.longdouble("3.14159265358979323846264338327950288")


def tube_constant(sigma_sq: float) -> float:
    """``K = 3 pi^2 sigma^2 / 2``."""
    return 1.5 * math.pi ** 2 * sigma_sq


def a_critical(sigma_sq: float) -> float:
    """``a_c = 1.5 (3 pi^2 sigma^2)^{1/3}``, evaluated in extended precision."""
    if not sigma_sq > 0:
        raise DomainError(f"sigma_sq={sigma_sq} must be > 0")
    x = np.longdouble(3) * _PI_LD * _PI_LD * np.longdouble(sigma_sq)
    return float(np.longdouble(1.5) * np.cbrt(x))


@dataclass(frozen=True)
class Roots:
    """Positive roots of ``a = b + K/b^2``.

    ``kind`` is ``"none"``, ``"double"`` (``b_small == b_a == 2 a_c / 3``) or
    ``"pair"``.
    """

    kind: str
    b_small: Optional[float] = None
    b_a: Optional[float] = None


def _polish(b: float, a: float, k: float) -> float:
    # Newton on b^3 - a b^2 + K; two steps are enough from a brentq bracket
    for _ in range(3):
        f = (b - a) * b * b + k
        df = b * (3.0 * b - 2.0 * a)
        if df == 0.0:
            break
        step = f / df
        b -= step
        if abs(step) <= 4e-16 * abs(b):
            break
    return b


def b_roots(sigma_sq: float, a: float) -> Roots:
    if not a > 0:
        raise DomainError(f"a={a} must be > 0")
    ac = a_critical(sigma_sq)
    k = tube_constant(sigma_sq)
    b_star = 2.0 * ac / 3.0
    if abs(a - ac) <= DOUBLE_ROOT_TOL:
        return Roots("double", b_star, b_star)
    if a < ac:
        return Roots("none")

    def g(b):
        return b + k / (b * b) - a

    hi = brentq(g, b_star, a, xtol=1e-15, rtol=1e-15, maxiter=500)
    lo_left = min(b_star, math.sqrt(k / a)) * 0.5  # g(lo_left) > 0 since K/b^2 > a
    lo = brentq(g, lo_left, b_star, xtol=1e-15, rtol=1e-15, maxiter=500)
    return Roots("pair", _polish(lo, a, k), _polish(hi, a, k))


def cubic_residual(sigma_sq: float, a: float, b: float) -> float:
    return abs(a - b - tube_constant(sigma_sq) / (b * b))


@dataclass(frozen=True)
class BIteration:
    values: list
    stopped_early: bool


def b_iteration(sigma_sq: float, a: float, b0: float, n: int) -> BIteration:
    """Iterates of ``b -> a - K / b^2`` starting from ``b0``.

    The upper bound on ``limsup f(t)/t^{1/3}`` improves along this map; when
    ``a < a_c`` the iterates run off to ``-inf`` and the sequence stops at the
    first non-positive value (which is included).
    """
    if not b0 > 0 or n < 1:
        raise DomainError("need b0 > 0 and n >= 1")
    k = tube_constant(sigma_sq)
    out = []
    b = b0
    for _ in range(n):
        b = a - k / (b * b)
        out.append(b)
        if b <= 0:
            return BIteration(out, True)
    return BIteration(out, False)


@dataclass(frozen=True)
class Certificate:
    g_max: float
    negative: bool
    argmax: float


def _cert_profile(alpha, growth_factor):
    return (alpha + 1.0 / (growth_factor - 1.0)) ** (1.0 / 3.0)


def survival_certificate(sigma_sq: float, a: float, b: float, growth_factor: int) -> Certificate:
    """``max_{alpha in [0,1]} G(alpha)`` for checkpoints growing by ``growth_factor``.

    ``G(alpha) = (b + K/b^2 - a) f(alpha) + E^{-1/3} (a - K/b^2) f(0)`` with
    ``f(t) = (t + 1/(E-1))^{1/3}``. G is affine in the increasing ``f``, so the
    maximum sits at an endpoint. A negative maximum certifies survival under
    the barrier ``a i^{1/3}``.
    """
    if not b > 0:
        raise DomainError(f"b={b} must be > 0")
    e = int(growth_factor)
    if e != growth_factor or e < 2:
        raise DomainError(f"growth factor E={growth_factor} must be an integer >= 2")
    k = tube_constant(sigma_sq)
    slope = b + k / (b * b) - a
    const = e ** (-1.0 / 3.0) * (a - k / (b * b)) * _cert_profile(0.0, e)
    g0 = slope * _cert_profile(0.0, e) + const
    g1 = slope * _cert_profile(1.0, e) + const
    if g0 >= g1:
        return Certificate(g0, g0 < 0, 0.0)
    return Certificate(g1, g1 < 0, 1.0)


def minimal_growth_factor(sigma_sq: float, a: float, b: float, e_max: int = 10 ** 9) -> Optional[int]:
    """Smallest integer ``E >= 2`` whose certificate is negative, or ``None``."""
    k = tube_constant(sigma_sq)
    slope = b + k / (b * b) - a
    top = a - k / (b * b)
    if slope >= 0:
        return None
    if top <= 0:
        return 2
    # negative  <=>  E^{-1/3} < -slope / top
    ratio = -slope / top
    guess = max(2, int(math.floor(ratio ** -3)) - 2)
    for e in range(guess, guess + 8):
        if e > e_max:
            return None
        if survival_certificate(sigma_sq, a, b, e).negative:
            return e
    return None  # pragma: no cover
