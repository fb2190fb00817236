"""Barrier-profile ODE ``f' = (a/3) t^{-2/3} - pi^2 sigma^2 / (2 f^2)``, ``f(0) = s``.

The singular point ``t = 0`` is removed by ``u = t^{1/3}``, ``h(u) = f(u^3)``,
which gives ``h' = a - K u^2 / h^2`` with ``K = 3 pi^2 sigma^2 / 2``.

Three phases, each in the variable where the equation is smooth:

* ``h(u)`` on ``[0, s]``, the transient;
* ``q(x) = h/u`` with ``x = log u``, autonomous: ``dq/dx = a - q - K/q^2``.
  Its fixed points are the roots of ``a = b + K/b^2``;
* once ``h' <= -1`` the solution is strictly decreasing and concave for good,
  so it is continued as ``u(h)`` down to ``h = 0``. There
  ``du/dh = h^2 / (a h^2 - K u^2)`` is bounded and analytic, which turns the
  blow-down point into an ordinary endpoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp

from .constants import a_critical, b_roots, tube_constant
from .errors import DomainError, ToleranceNotMet, Unclassified

EPS_STOP = 1e-8
SAFETY_U = 1e6
GROWTH_BAND = 5e-3
TAIL_DECADES = 2.0
RATE_MARGIN = 1e-6

_LN10 = math.log(10.0)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class BlowsDown:
    t_max: float


@dataclass(frozen=True)
class GrowsLikeCubeRoot:
    b_limit: float


@dataclass(frozen=True)
class ProfileSolution:
    sigma_sq: float
    a: float
    s: float
    grid: np.ndarray
    values: np.ndarray
    classification: object
    residual_max: float
    tol: float = 1e-10
    # (x, q) samples used for classification, x = log u, q = h/u
    tail_x: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    tail_q: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    _h: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def t(self) -> np.ndarray:
        return self.grid ** 3

    def h(self, u):
        """Dense ``h(u) = f(u^3)`` inside the stored grid."""
        if self._h is None:
            return np.interp(u, self.grid, self.values)
        out = self._h(np.asarray(u, dtype=float))
        return float(np.reshape(out, -1)[0]) if np.ndim(u) == 0 else out

    def f(self, t):
        return self.h(np.cbrt(np.asarray(t, dtype=float)))


def _check_args(sigma_sq, a, s, tol):
    if not sigma_sq > 0:
        raise DomainError(f"sigma_sq={sigma_sq} must be > 0")
    if not a >= 0:
        raise DomainError(f"a={a} must be >= 0")
    if not s > 0:
        raise DomainError(f"s={s} must be > 0")
    if not 1e-12 <= tol <= 1e-4:
        raise DomainError(f"tol={tol} outside [1e-12, 1e-4]")


def _run(fun, span, y0, tol, event=None):
    # first step and atol proportional to the phase's own scale: solve_ivp's
    # default starting heuristic has absolute cut-offs that break the exact
    # covariance of the scheme under f -> lam^{-1/3} f(lam t)
    scale = abs(span[1] - span[0])
    res = solve_ivp(fun, span, [y0], method="DOP853", rtol=tol, atol=1e-3 * tol * abs(y0),
                    first_step=1e-3 * scale, dense_output=True, events=event)
    if res.status == -1:
        raise ToleranceNotMet(f"step control failed: {res.message}")
    return res


def _gl_segments(fun, lo, hi):
    """16-point Gauss-Legendre of ``fun`` on every ``[lo[i], hi[i]]`` at once."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if lo.size == 0:
        return np.empty(0)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    v = mid[:, None] + half[:, None] * _GL_X[None, :]
    return half * (fun(v.ravel()).reshape(v.shape) @ _GL_W)


@dataclass
class _Piece:
    """Nodes ``(u, h)`` of one phase and ``int v^2/h^2 dv`` between neighbours."""

    u: np.ndarray
    h: np.ndarray
    integrals: np.ndarray
    h_of_u: Callable


def _phase_u(a, k, s, u_end, tol):
    def rhs(u, y):
        return [a - k * u * u / (y[0] * y[0])]

    def turn(u, y):
        return (a + 1.0) * y[0] * y[0] - k * u * u
    turn.terminal, turn.direction = True, -1

    res = _run(rhs, (0.0, u_end), s, tol, turn)
    d = res.sol
    u = res.t
    ints = _gl_segments(lambda v: v * v / d(v)[0] ** 2, u[:-1], u[1:])
    return _Piece(u, res.y[0].copy(), ints, lambda v: d(v)[0]), bool(res.t_events[0].size)


def _phase_x(a, k, x0, q0, x1, tol):
    q_turn = math.sqrt(k / (a + 1.0))

    def rhs(x, y):
        q = y[0]
        return [a - q - k / (q * q)]

    def turn(x, y):
        return y[0] - q_turn
    turn.terminal, turn.direction = True, -1

    res = _run(rhs, (x0, x1), q0, tol, turn)
    d = res.sol
    x = res.t
    # int v^2/h^2 dv = int e^x / q^2 dx
    ints = _gl_segments(lambda z: np.exp(z) / d(z)[0] ** 2, x[:-1], x[1:])
    u = np.exp(x)
    piece = _Piece(u, u * res.y[0], ints, lambda v: v * d(np.log(v))[0])
    return piece, res, bool(res.t_events[0].size)


def _phase_h(a, k, u0, h0, h_stop, h_extra, tol):
    """``u(h)`` from ``h0`` down to 0; nodes are kept down to ``h_stop``."""
    def rhs(h, y):
        u = y[0]
        return [h * h / (a * h * h - k * u * u)]

    res = _run(rhs, (h0, 0.0), u0, tol)
    d = res.sol
    hs = {hv for hv in res.t if hv > h_stop} | {h_stop}
    hs |= {hv for hv in h_extra if h_stop < hv < h0}
    hs = np.array(sorted(hs, reverse=True))
    us = d(hs)[0]

    def integrand(g):
        uu = d(g)[0]
        return uu * uu / (a * g * g - k * uu * uu)

    ints = _gl_segments(integrand, hs[:-1], hs[1:])

    def h_of_u(v):
        # u(h) is decreasing in h: vectorized bisection on [0, h0]
        v = np.asarray(v, dtype=float)
        lo = np.zeros_like(v)
        hi = np.full_like(v, h0)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            past = d(mid)[0] > v
            lo = np.where(past, mid, lo)
            hi = np.where(past, hi, mid)
        return 0.5 * (lo + hi)

    return _Piece(us, hs, ints, h_of_u), float(res.y[0, -1])


def _growth_ready(xs, qs, a, a_c, b_star, band=GROWTH_BAND):
    """``q = f/t^{1/3}`` flat to ``band`` over the last two decades and above ``2 a_c/3``."""
    if a <= a_c:
        # no fixed point on the phase line: a plateau is a bottleneck, not a limit
        return False
    x_end = xs[-1]
    if xs[0] > x_end - TAIL_DECADES * _LN10:
        return False
    tail = qs[xs >= x_end - TAIL_DECADES * _LN10]
    q_end = qs[-1]
    return q_end > b_star and float(np.max(np.abs(tail - q_end))) <= band * q_end


def solve_profile(sigma_sq: float, a: float, s: float, t_horizon: float, tol: float = 1e-10,
                  safety_u: float = SAFETY_U) -> ProfileSolution:
    """Integrate up to ``t_horizon`` (or blow-down) and classify the solution.

    When the horizon comes first, the autonomous form is continued (out to
    ``u = safety_u``) for classification only; the stored grid still ends at
    ``t_horizon``.
    """
    _check_args(sigma_sq, a, s, tol)
    if not t_horizon > 0:
        raise DomainError("t_horizon must be > 0")
    k = tube_constant(sigma_sq)
    a_c = a_critical(sigma_sq)
    b_star = 2.0 * a_c / 3.0
    u_h = float(np.cbrt(t_horizon))
    x_h = math.log(u_h)
    x_safe = max(math.log(safety_u), x_h)

    # switching at u = s keeps the scheme covariant under rescaling
    first, turned = _phase_u(a, k, s, min(u_h, s), tol)
    pieces = [first]
    xs = list(np.log(first.u[1:]))
    qs = list(first.h[1:] / first.u[1:])
    growing = False
    if not turned:
        x_cur, q_cur = math.log(first.u[-1]), first.h[-1] / first.u[-1]
        while x_cur < x_safe:
            x_next = min(x_cur + _LN10, x_safe)
            if x_cur < x_h < x_next:
                x_next = x_h
            piece, res, turned = _phase_x(a, k, x_cur, q_cur, x_next, tol)
            pieces.append(piece)
            sx = np.linspace(res.t[0], res.t[-1], 65)[1:]
            xs.extend(sx)
            qs.extend(res.sol(sx)[0])
            if turned:
                break
            x_cur, q_cur = float(res.t[-1]), float(res.y[0, -1])
            if x_cur >= x_h and _growth_ready(np.asarray(xs), np.asarray(qs), a, a_c, b_star):
                growing = True
                break
    t_max = None
    if turned:
        u0, h0 = float(pieces[-1].u[-1]), float(pieces[-1].h[-1])
        last, u_end = _phase_h(a, k, u0, h0, EPS_STOP * s, (), tol)
        if u0 < u_h < last.u[-1]:
            # put a node exactly on the horizon
            hh = float(last.h_of_u(np.array([u_h]))[0])
            last, u_end = _phase_h(a, k, u0, h0, EPS_STOP * s, (hh,), tol)
        pieces.append(last)
        t_max = u_end ** 3

    tail_x, tail_q = np.asarray(xs), np.asarray(qs)
    if t_max is not None:
        classification = BlowsDown(t_max)
    elif growing or _growth_ready(tail_x, tail_q, a, a_c, b_star):
        classification = GrowsLikeCubeRoot(_aitken_tail(tail_x, tail_q))
    else:
        raise Unclassified(
            f"a={a}, sigma_sq={sigma_sq}, s={s}: neither blow-down nor growth by u={safety_u:g}")

    grid = np.concatenate([[0.0]] + [p.u[1:] for p in pieces])
    values = np.concatenate([[s]] + [p.h[1:] for p in pieces])
    ints = np.concatenate([p.integrals for p in pieces])
    n_keep = int(np.count_nonzero(grid <= u_h * (1.0 + 1e-14)))
    grid, values, ints = grid[:n_keep], values[:n_keep], ints[: n_keep - 1]
    acc = np.concatenate(([0.0], np.cumsum(ints)))
    residual = float(np.max(np.abs(values - a * grid + k * acc - s) / (s + a * grid)))
    return ProfileSolution(sigma_sq, a, s, grid, values, classification, residual, tol,
                           tail_x, tail_q, _stitch(pieces))


def _stitch(pieces):
    los = np.array([p.u[0] for p in pieces])

    def h(u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        idx = np.clip(np.searchsorted(los, u, side="right") - 1, 0, len(pieces) - 1)
        for i in np.unique(idx):
            m = idx == i
            out[m] = pieces[i].h_of_u(u[m])
        return out
    return h


def _aitken_tail(xs, qs):
    # q(x) ~ b + C exp(-(1 - kappa) x): Aitken's delta^2 over the last decade
    x_end = xs[-1]
    q0, q1, q2 = (float(np.interp(p, xs, qs))
                  for p in (x_end - _LN10, x_end - 0.5 * _LN10, x_end))
    den = q0 + q2 - 2.0 * q1
    if (q1 - q0) * (q2 - q1) <= 0 or abs(den) < 1e-14 * abs(q2):
        return q2
    return (q0 * q2 - q1 * q1) / den


def asymptotic_slope(sol: ProfileSolution) -> float:
    """Extrapolated ``lim f(t) / t^{1/3}`` of a growing solution."""
    if not isinstance(sol.classification, GrowsLikeCubeRoot):
        raise DomainError("asymptotic slope requested for a blow-down solution")
    if sol.tail_x.size:
        return _aitken_tail(sol.tail_x, sol.tail_q)
    u = sol.grid[1:]
    return _aitken_tail(np.log(u), sol.values[1:] / u)


def rescale(sol: ProfileSolution, lam: float) -> ProfileSolution:
    """``f_lam(t) = lam^{-1/3} f(lam t)``; exact on the stored nodes."""
    if not lam > 0:
        raise DomainError("lambda must be > 0")
    if lam == 1:
        return sol
    c = float(np.cbrt(lam))
    cls = sol.classification
    if isinstance(cls, BlowsDown):
        cls = BlowsDown(cls.t_max / lam)
    inner = sol.h

    def h(u):
        return inner(np.asarray(u, dtype=float) * c) / c

    return replace(sol, s=sol.s / c, grid=sol.grid / c, values=sol.values / c,
                   classification=cls, tail_x=sol.tail_x - math.log(c), _h=h)


def blow_down_time(sigma_sq: float, a: float, s: float, tol: float = 1e-10,
                   safety_u: float = SAFETY_U) -> Optional[float]:
    """``t_max``, or ``None`` when the solution is classified as growing."""
    sol = solve_profile(sigma_sq, a, s, s ** 3, tol, safety_u=safety_u * s)
    if isinstance(sol.classification, BlowsDown):
        return sol.classification.t_max
    return None


def extinction_rate(sigma_sq: float, a: float, tol: float = 1e-10) -> float:
    """``c = t_max(s=1)^{-1/3}``: by scaling, the ``s`` whose blow-down time is 1."""
    a_c = a_critical(sigma_sq)
    if not a < a_c - RATE_MARGIN:
        raise DomainError(f"a={a} must be below a_c - {RATE_MARGIN} = {a_c - RATE_MARGIN}")
    # below a_c blow-down is certain; the horizon only bounds the bottleneck passage
    t_max = blow_down_time(sigma_sq, a, 1.0, tol, safety_u=math.exp(700.0))
    return t_max ** (-1.0 / 3.0)


def integral_identity_residual(f: Callable[[float], float], sigma_sq: float, a: float, s: float,
                               ts) -> np.ndarray:
    """``-a t^{1/3} + f(t) + (pi^2 sigma^2 / 2) int_0^t du / f(u)^2 - s`` at each ``t``.

    The integrand is split as ``u^{-2/3} * (u^{2/3} / f(u)^2)`` and handed to
    QUADPACK's algebraic-weight rule, so cube-root profiles are integrated
    without loss at the origin.
    """
    half = 0.5 * math.pi ** 2 * sigma_sq
    out = []
    for t in np.atleast_1d(ts):
        t = float(t)
        # the 1e-300 floor only matters for f(0) = 0, where the integrand's limit is finite
        val, _ = quad(lambda u: max(u, 1e-300) ** (2.0 / 3.0) / f(max(u, 1e-300)) ** 2, 0.0, t,
                      weight="alg",
                      wvar=(-2.0 / 3.0, 0.0), epsabs=1e-15, epsrel=1e-13, limit=200)
        out.append(-a * t ** (1.0 / 3.0) + f(t) + half * val - s)
    return np.asarray(out)


def cube_root_solution(sigma_sq: float, a: float) -> Callable[[float], float]:
    """``f_0(t) = b_a t^{1/3}``, the ``s = 0`` solution for ``a >= a_c``."""
    roots = b_roots(sigma_sq, a)
    if roots.kind == "none":
        raise DomainError(f"a={a} < a_c: no cube-root solution")
    b = roots.b_a
    return lambda t: b * t ** (1.0 / 3.0)


def picard_profile(sigma_sq: float, a: float, s: float, t_small: float, n_nodes: int = 2049,
                   iterations: int = 60) -> tuple:
    """Fixed-point iteration of ``h = s + a u - K int_0^u v^2 / h^2`` on ``[0, t_small^{1/3}]``.

    Cross-check only; the map contracts when ``t_small`` is short. Returns
    ``(u, h, sweeps)``.
    """
    _check_args(sigma_sq, a, s, 1e-10)
    k = tube_constant(sigma_sq)
    u = np.linspace(0.0, float(np.cbrt(t_small)), n_nodes)
    h = s + a * u
    du = u[1] - u[0]
    for it in range(1, iterations + 1):
        g = u * u / (h * h)
        # trapezoid with the Euler-Maclaurin end correction (fourth order)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * du * (g[1:] + g[:-1]))))
        dg = np.gradient(g, du, edge_order=2)
        cum -= du * du / 12.0 * (dg - dg[0])
        new = s + a * u - k * cum
        if np.any(new <= 0):
            raise DomainError("Picard iterate left the positive cone; shrink t_small")
        done = np.max(np.abs(new - h)) <= 1e-15 * s
        h = new
        if done:
            return u, h, it
    return u, h, iterations
