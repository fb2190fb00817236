"""Reproduction laws of the branching random walk and their Laplace transform.

Conventions
-----------
A child displaced by ``x`` from its parent carries the weight ``exp(-x)``:

    Phi(t) = E[ sum_children exp(-t * xi) ],   Psi = log Phi,

and the critical normalisation is ``Psi(1) = Psi'(1) = 0``. ``sigma^2`` is
``Phi''(1) = E[sum xi^2 exp(-xi)]``, the variance of the one-step law seen
from the spine. (The displayed definition of ``sigma^2`` in some sources
writes ``exp(+xi)``; with the weight used everywhere else that is a typo, and
this module uses ``exp(-xi)`` throughout.)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import DomainError, UnsupportedLaw
from .rng import RandomStream, child_keys_np, draw_bits_np, normal_np, to_unit_np, to_unit_open_np

PROB_TOL = 1e-12
DEFAULT_CRIT_TOL = 1e-9

KIND_FINITE = 0
KIND_POISSON_GAUSSIAN = 1


@dataclass(frozen=True)
class FiniteSupport:
    """Finitely many joint sibling configurations.

    ``outcomes`` is a sequence of ``(probability, displacements)``; one outcome
    is the complete set of children of one individual, so correlated siblings
    are expressed directly. An empty displacement tuple means no children.
    """

    outcomes: tuple

    def __init__(self, outcomes: Sequence):
        norm = []
        for item in outcomes:
            p, disp = item
            p = float(p)
            if not (0.0 < p <= 1.0):
                raise DomainError(f"outcome probability {p} not in (0, 1]")
            norm.append((p, tuple(float(x) for x in disp)))
        if not norm:
            raise DomainError("FiniteSupport needs at least one outcome")
        total = math.fsum(p for p, _ in norm)
        if abs(total - 1.0) > PROB_TOL:
            raise DomainError(f"outcome probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "outcomes", tuple(norm))

    @property
    def has_negative_steps(self) -> bool:
        return any(x < 0 for _, d in self.outcomes for x in d)

    @property
    def mean_children(self) -> float:
        return math.fsum(p * len(d) for p, d in self.outcomes)

    def atoms(self):
        """Flat ``(weight, x)`` list of the intensity measure, with multiplicity."""
        return [(p, x) for p, d in self.outcomes for x in d]


@dataclass(frozen=True)
class PoissonGaussian:
    """Poisson(m) children, i.i.d. N(mu, s0sq) displacements."""

    m: float
    mu: float
    s0sq: float

    def __post_init__(self):
        if not self.m > 0:
            raise DomainError(f"mean children m={self.m} must be > 0")
        if not self.s0sq > 0:
            raise DomainError(f"displacement variance s0sq={self.s0sq} must be > 0")
        for name in ("m", "mu", "s0sq"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")

    has_negative_steps = True

    @property
    def mean_children(self) -> float:
        return self.m


OffspringLaw = Union[FiniteSupport, PoissonGaussian]


def critical_gaussian(sigma_sq: float = 1.0) -> PoissonGaussian:
    """The critical Poisson-Gaussian law with spine variance ``sigma_sq``.

    Criticality forces ``mu = s0sq = sigma_sq`` and ``m = exp(sigma_sq / 2)``.
    """
    return PoissonGaussian(m=math.exp(sigma_sq / 2.0), mu=sigma_sq, s0sq=sigma_sq)


def law_diagnostics(law: OffspringLaw) -> dict:
    return {
        "has_negative_steps": bool(law.has_negative_steps),
        "subcritical_population": law.mean_children <= 1.0,
        "mean_children": law.mean_children,
    }


# ----------------------------------------------------------------- profiles

@dataclass(frozen=True)
class LaplaceProfile:
    law: OffspringLaw
    zeta: float
    x_min: float
    mass_at_xmin: float


@dataclass(frozen=True)
class ClosedFormProfile:
    """User-supplied transform with a finite domain bound.

    ``derivs[k](t)`` returns ``Phi^{(k)}(t)`` (``inf`` allowed at ``t = zeta``).
    Only the reduction module consumes these.
    """

    name: str
    derivs: tuple
    zeta: float
    x_min: float = -math.inf
    mass_at_xmin: float = 0.0
    params: dict = field(default_factory=dict, compare=False)

    @property
    def law(self):
        return None


Profile = Union[LaplaceProfile, ClosedFormProfile]


def laplace_profile(law: OffspringLaw) -> LaplaceProfile:
    if isinstance(law, PoissonGaussian):
        return LaplaceProfile(law, math.inf, -math.inf, 0.0)
    if isinstance(law, FiniteSupport):
        atoms = law.atoms()
        if not atoms:
            raise DomainError("law never has children; Phi is identically 0")
        x_min = min(x for _, x in atoms)
        mass = math.fsum(p for p, x in atoms if x == x_min)
        return LaplaceProfile(law, math.inf, x_min, mass)
    raise UnsupportedLaw(f"unknown law type {type(law).__name__}")


def _as_profile(obj) -> Profile:
    if isinstance(obj, (LaplaceProfile, ClosedFormProfile)):
        return obj
    return laplace_profile(obj)


def _check_t(profile: Profile, t: float):
    if not (t >= 0.0) or t > profile.zeta:
        raise DomainError(f"t={t} outside [0, zeta={profile.zeta}]")


def phi(profile, t: float, order: int = 0) -> float:
    """``Phi^{(order)}(t)``, order 0, 1 or 2, in closed form."""
    profile = _as_profile(profile)
    if order not in (0, 1, 2):
        raise DomainError(f"order must be 0, 1 or 2, got {order}")
    _check_t(profile, t)
    if isinstance(profile, ClosedFormProfile):
        return float(profile.derivs[order](t))
    law = profile.law
    if isinstance(law, FiniteSupport):
        return math.fsum(p * (-x) ** order * math.exp(-t * x) for p, x in law.atoms())
    p0 = psi(profile, t, 0)
    p1 = psi(profile, t, 1)
    big = math.exp(p0)
    if order == 0:
        return big
    if order == 1:
        return p1 * big
    return (law.s0sq + p1 * p1) * big


def psi(profile, t: float, order: int = 0) -> float:
    """Derivatives of ``Psi = log Phi``; log-domain, stable for large ``t``."""
    profile = _as_profile(profile)
    _check_t(profile, t)
    if isinstance(profile, ClosedFormProfile):
        f0 = phi(profile, t, 0)
        if order == 0:
            return math.log(f0)
        f1 = phi(profile, t, 1)
        if order == 1:
            return f1 / f0
        return phi(profile, t, 2) / f0 - (f1 / f0) ** 2
    law = profile.law
    if isinstance(law, PoissonGaussian):
        if order == 0:
            return math.log(law.m) - t * law.mu + 0.5 * t * t * law.s0sq
        if order == 1:
            return -law.mu + t * law.s0sq
        return law.s0sq
    atoms = law.atoms()
    w = np.array([math.log(p) - t * x for p, x in atoms])
    xs = np.array([x for _, x in atoms])
    wmax = w.max()
    e = np.exp(w - wmax)
    z = math.fsum(e)
    if order == 0:
        return float(wmax) + math.log(z)
    q = e / z
    m1 = -math.fsum(q * xs)
    if order == 1:
        return m1
    return max(math.fsum(q * (xs + m1) ** 2), 0.0)


@dataclass(frozen=True)
class CriticalityReport:
    is_critical: bool
    psi1: float
    dpsi1: float
    sigma_sq: float


def criticality_check(profile, tol: float = DEFAULT_CRIT_TOL) -> CriticalityReport:
    profile = _as_profile(profile)
    if profile.zeta <= 1.0:
        raise DomainError(f"zeta={profile.zeta} <= 1: Phi(1) undefined or at the boundary")
    p0 = psi(profile, 1.0, 0)
    p1 = psi(profile, 1.0, 1)
    s2 = phi(profile, 1.0, 2)
    return CriticalityReport(abs(p0) <= tol and abs(p1) <= tol, p0, p1, s2)


# ----------------------------------------------------------------- sampling

def enumerate_outcomes(law: OffspringLaw):
    if not isinstance(law, FiniteSupport):
        raise UnsupportedLaw("only FiniteSupport laws can be enumerated")
    return [(p, list(d)) for p, d in law.outcomes]


class PackedLaw(NamedTuple):
    """Flat-array form consumed by the kernels."""

    kind: int
    cum: np.ndarray       # cumulative outcome probabilities (finite)
    offsets: np.ndarray   # outcome k owns atoms[offsets[k]:offsets[k+1]]
    atoms: np.ndarray
    params: np.ndarray    # m, mu, sd, exp(-m) (Poisson-Gaussian)


def pack_law(law: OffspringLaw) -> PackedLaw:
    if isinstance(law, FiniteSupport):
        probs = np.array([p for p, _ in law.outcomes])
        cum = np.cumsum(probs)
        cum[-1] = max(cum[-1], 1.0)
        sizes = [len(d) for _, d in law.outcomes]
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)
        atoms = np.array([x for _, d in law.outcomes for x in d], dtype=np.float64)
        return PackedLaw(KIND_FINITE, cum, offsets, atoms, np.zeros(4))
    if isinstance(law, PoissonGaussian):
        params = np.array([law.m, law.mu, math.sqrt(law.s0sq), math.exp(-law.m)])
        return PackedLaw(KIND_POISSON_GAUSSIAN, np.ones(1), np.zeros(2, dtype=np.int64),
                         np.zeros(0), params)
    raise UnsupportedLaw(f"unknown law type {type(law).__name__}")


POISSON_KMAX = 100_000


def poisson_inverse_np(u: np.ndarray, m: float, p0: float) -> np.ndarray:
    """Inverse-transform Poisson; arithmetic mirrors the numba kernel exactly."""
    k = np.zeros(u.shape, dtype=np.int64)
    p = np.full(u.shape, p0)
    cdf = p.copy()
    active = u >= cdf
    j = 0
    while active.any() and j < POISSON_KMAX:
        j += 1
        idx = np.nonzero(active)[0]
        p[idx] = p[idx] * m / j
        cdf[idx] = cdf[idx] + p[idx]
        k[idx] = j
        active[idx] = u[idx] >= cdf[idx]
    return k


def offspring_np(packed: PackedLaw, keys: np.ndarray):
    """Children of every parent key.

    Returns ``(parent_index, displacement, child_key)`` arrays, grouped by
    parent in input order and by child index within a parent.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    u0 = to_unit_np(draw_bits_np(keys, 0))
    if packed.kind == KIND_FINITE:
        oc = np.searchsorted(packed.cum, u0, side="right")
        oc = np.minimum(oc, len(packed.cum) - 1)
        counts = packed.offsets[oc + 1] - packed.offsets[oc]
    else:
        counts = poisson_inverse_np(u0, packed.params[0], packed.params[3])
    parent = np.repeat(np.arange(keys.size), counts)
    starts = np.cumsum(counts) - counts
    cidx = np.arange(parent.size) - np.repeat(starts, counts)
    pkeys = keys[parent]
    if packed.kind == KIND_FINITE:
        disp = packed.atoms[packed.offsets[oc][parent] + cidx]
    else:
        c = cidx.astype(np.uint64)
        u1 = to_unit_open_np(draw_bits_np(pkeys, np.uint64(1) + np.uint64(2) * c))
        u2 = to_unit_np(draw_bits_np(pkeys, np.uint64(2) + np.uint64(2) * c))
        z = normal_np(u1, u2)
        disp = packed.params[1] + packed.params[2] * z
    return parent, disp, child_keys_np(pkeys, cidx)


def sample_offspring(law: OffspringLaw, stream: RandomStream) -> list:
    """Displacements of one individual's children, drawn from ``stream``."""
    key = np.array([stream.next_key()], dtype=np.uint64)
    _, disp, _ = offspring_np(pack_law(law), key)
    return disp.tolist()


def sample_offspring_many(law: OffspringLaw, stream: RandomStream, count: int):
    """``count`` independent sibling sets, as ``(parent_index, displacement)``."""
    parent, disp, _ = offspring_np(pack_law(law), stream.keys(count))
    return parent, disp
