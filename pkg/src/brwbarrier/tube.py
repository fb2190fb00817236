"""The one-step walk seen from the spine, and walks confined to tubes.

Under the many-to-one identity, sums over generation ``n`` weighted by
``exp(-V)`` become expectations over a random walk ``S`` whose step ``X`` has
``E f(X) = E[sum_children exp(-xi) f(xi)]``. This module builds that step
law, checks the identity by exhaustive enumeration, and estimates the
probability that ``S`` stays inside a tube of width ``~ j^{1/3}``.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.integrate import quad

from . import kernels
from ._parallel import chunk_ranges, ordered_map
from .errors import DomainError, SizeLimit, UnsupportedLaw
from .laws import FiniteSupport, PoissonGaussian, phi
from .results import binomial_estimate
from .rng import RandomStream

ENUM_LIMIT = 10 ** 7
MC_CHUNK = 1 << 20


# ------------------------------------------------------------------ step laws

@dataclass(frozen=True)
class DiscreteAtoms:
    atoms: Tuple[Tuple[float, float], ...]   # (x, p), sorted by x

    def __post_init__(self):
        total = math.fsum(p for _, p in self.atoms)
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"atom probabilities sum to {total!r}")

    @property
    def xs(self) -> np.ndarray:
        return np.array([x for x, _ in self.atoms])

    @property
    def ps(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    @property
    def mean(self) -> float:
        return math.fsum(x * p for x, p in self.atoms)

    @property
    def variance(self) -> float:
        m = self.mean
        return math.fsum((x - m) ** 2 * p for x, p in self.atoms)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float


TiltedStepLaw = Union[DiscreteAtoms, Gaussian]


def tilted_step(law, tol: float = 1e-9) -> TiltedStepLaw:
    """Law of ``X`` with ``E f(X) = E[sum exp(-xi) f(xi)]``; needs ``Phi(1) = 1``."""
    p1 = phi(law, 1.0, 0)
    if abs(p1 - 1.0) > tol:
        raise DomainError(f"Phi(1) = {p1!r} != 1: the tilted step is not a probability law")
    if isinstance(law, FiniteSupport):
        mass = defaultdict(list)
        for p, disp in law.outcomes:
            for x in disp:
                mass[x].append(p * math.exp(-x))
        atoms = [(x, math.fsum(v)) for x, v in sorted(mass.items())]
        total = math.fsum(p for _, p in atoms)
        # Phi(1) is only 1 to within tol; fold the remainder back in
        return DiscreteAtoms(tuple((x, p / total) for x, p in atoms))
    if isinstance(law, PoissonGaussian):
        # exp(-x) N(mu, v) is proportional to N(mu - v, v)
        return Gaussian(law.mu - law.s0sq, law.s0sq)
    raise UnsupportedLaw(type(law).__name__)


# ----------------------------------------------------------- many-to-one

@dataclass(frozen=True)
class One:
    def __call__(self, path) -> float:
        return 1.0


@dataclass(frozen=True)
class IndicatorBelowZeroAtN:
    def __call__(self, path) -> float:
        return 1.0 if path[-1] <= 0.0 else 0.0


@dataclass(frozen=True)
class IndicatorTubeConstant:
    w: float

    def __call__(self, path) -> float:
        return 1.0 if all(-self.w <= x <= self.w for x in path) else 0.0


@dataclass(frozen=True)
class ManyToOne:
    lhs: float
    rhs: float
    abs_diff: float


def _tree_side(law: FiniteSupport, n: int, functional) -> float:
    """``E[sum_{|u|=n} exp(-V(u)) F(V(u_1), ..., V(u_n))]`` over every realization.

    A realization of the first ``g`` generations is the list of ancestral
    paths of its generation-``g`` individuals together with its probability;
    going one generation down, every individual independently picks an
    outcome, so realizations multiply out as a Cartesian product.
    """
    outcomes = law.outcomes
    level = [(1.0, [()])]
    for _ in range(n):
        projected = sum(len(outcomes) ** len(paths) for _, paths in level)
        if projected > ENUM_LIMIT:
            raise SizeLimit(f"{projected} tree realizations exceed {ENUM_LIMIT}")
        nxt = []
        for prob, paths in level:
            # partial: joint choices of the individuals handled so far
            partial = [(prob, [])]
            for path in paths:
                base = path[-1] if path else 0.0
                grown = []
                for q, kids in partial:
                    for p, disp in outcomes:
                        grown.append((q * p, kids + [path + (base + x,) for x in disp]))
                partial = grown
            nxt.extend((q, kids) for q, kids in partial if kids)
        level = nxt
        if sum(len(k) for _, k in level) > ENUM_LIMIT:
            raise SizeLimit(f"more than {ENUM_LIMIT} leaves")
    return math.fsum(q * math.exp(-path[-1]) * functional(path) for q, kids in level for path in kids)


def _walk_side(step: DiscreteAtoms, n: int, functional) -> float:
    if len(step.atoms) ** n > ENUM_LIMIT:
        raise SizeLimit(f"{len(step.atoms)}^{n} walk paths")
    paths = [(1.0, ())]
    for _ in range(n):
        paths = [(q * p, path + ((path[-1] if path else 0.0) + x,))
                 for q, path in paths for x, p in step.atoms]
    return math.fsum(q * functional(path) for q, path in paths)


def many_to_one_check(law, n: int, functional) -> ManyToOne:
    if not isinstance(law, FiniteSupport):
        raise UnsupportedLaw("exact enumeration needs a FiniteSupport law")
    if not 1 <= n <= 6:
        raise DomainError("n must be in 1..6")
    step = tilted_step(law)
    lhs = _tree_side(law, n, functional)
    rhs = _walk_side(step, n, functional)
    return ManyToOne(lhs, rhs, abs(lhs - rhs))


# ------------------------------------------------------------------- tubes

@dataclass(frozen=True)
class Constant:
    v: float

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.v)


@dataclass(frozen=True)
class CubeRootOffset:
    coeff: float
    offset: float = 0.0

    def __post_init__(self):
        if self.offset < 0:
            raise DomainError("offset must be >= 0")

    def __call__(self, t):
        return self.coeff * np.cbrt(np.asarray(t, dtype=float) + self.offset)


Profile = Union[Constant, CubeRootOffset]


def parse_profile(text: str) -> Profile:
    """``"const:-1"`` or ``"cbrt:3:0.1"`` (coefficient, offset)."""
    parts = text.split(":")
    try:
        if parts[0] == "const" and len(parts) == 2:
            return Constant(float(parts[1]))
        if parts[0] == "cbrt" and len(parts) in (2, 3):
            return CubeRootOffset(float(parts[1]), float(parts[2]) if len(parts) == 3 else 0.0)
    except ValueError:
        pass
    raise DomainError(f"bad profile spec {text!r}; expected const:v or cbrt:c[:offset]")


@dataclass(frozen=True)
class TubeSpec:
    """Event ``lower(i/j) <= S_i / j^{1/3} <= upper(i/j)`` for ``1 <= i <= j``.

    With ``units="absolute"`` the profiles bound ``S_i`` itself and the
    endpoint window applies to ``S_j``; otherwise both are in the scaled
    units ``S / j^{1/3}``.
    """

    j: int
    lower: Profile
    upper: Profile
    endpoint_window: Optional[Tuple[float, float]] = None
    units: str = "scaled"
    relaxed: bool = False

    def __post_init__(self):
        if self.j < 1:
            raise DomainError("j must be >= 1")
        if self.units not in ("scaled", "absolute"):
            raise DomainError(f"units must be 'scaled' or 'absolute', not {self.units!r}")
        if float(self.lower(0.0)) > 0.0 or float(self.upper(0.0)) < 0.0:
            raise DomainError("need lower(0) <= 0 <= upper(0)")
        t = np.arange(1, self.j + 1) / self.j
        gap = self.upper(t) - self.lower(t)
        if np.any(gap < 0) or (not self.relaxed and np.any(gap == 0)):
            raise DomainError("lower must stay below upper on the grid")
        if self.endpoint_window is not None and self.endpoint_window[0] > self.endpoint_window[1]:
            raise DomainError("endpoint window lo > hi")

    @property
    def scale(self) -> float:
        return float(np.cbrt(self.j)) if self.units == "scaled" else 1.0

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Absolute bounds on ``S_i``, index ``i = 0..j`` (entry 0 unused)."""
        t = np.arange(self.j + 1) / self.j
        return self.lower(t) * self.scale, self.upper(t) * self.scale

    def endpoint(self) -> Tuple[float, float]:
        if self.endpoint_window is None:
            return -math.inf, math.inf
        lo, hi = self.endpoint_window
        return lo * self.scale, hi * self.scale


def _step_arrays(step: TiltedStepLaw):
    if isinstance(step, DiscreteAtoms):
        cum = np.cumsum(step.ps)
        cum[-1] = max(cum[-1], 1.0)
        return kernels.STEP_DISCRETE, cum, step.xs, 0.0, 0.0
    if isinstance(step, Gaussian):
        return kernels.STEP_GAUSSIAN, np.ones(1), np.zeros(1), step.mean, math.sqrt(step.variance)
    raise UnsupportedLaw(type(step).__name__)


def tube_probability_mc(step: TiltedStepLaw, spec: TubeSpec, runs: int, stream: RandomStream,
                        workers: int = 1, histogram: bool = False, backend=None):
    """Fraction of ``runs`` walks that stay in the tube (and end in the window)."""
    if runs < 1:
        raise DomainError("runs must be >= 1")
    kind, cum, atoms, mean, sd = _step_arrays(step)
    lower, upper = spec.bounds()
    end_lo, end_hi = spec.endpoint()
    key_chunks = [stream.keys(hi - lo) for lo, hi in chunk_ranges(runs, MC_CHUNK)]

    def work(keys):
        return kernels.tube_walk(keys, kind, cum, atoms, mean, sd, lower, upper,
                                 end_lo, end_hi, 0.0, backend=backend)

    parts = ordered_map(work, key_chunks, workers)
    hits = sum(h for h, _ in parts)
    hist = np.sum([h for _, h in parts], axis=0)
    return binomial_estimate(spec.j, hits, runs, histogram=hist if histogram else None)


def mogulskii_rate(sigma_sq: float, spec: TubeSpec) -> float:
    """``(pi^2 sigma^2 / 2) int_0^1 dt / (upper - lower)^2``; ``inf`` if the tube pinches."""
    if not sigma_sq > 0:
        raise DomainError("sigma_sq must be > 0")
    lo, up = spec.lower, spec.upper
    pref = 0.5 * math.pi ** 2 * sigma_sq
    if isinstance(lo, Constant) and isinstance(up, Constant):
        w = up.v - lo.v
        return math.inf if w <= 0 else pref / (w * w)
    # width b (t + delta)^{1/3}: antiderivative 3 (t + delta)^{1/3} / b^2
    width_cbrt = None
    if isinstance(lo, CubeRootOffset) and isinstance(up, CubeRootOffset) and lo.offset == up.offset:
        width_cbrt = (up.coeff - lo.coeff, up.offset)
    elif isinstance(lo, Constant) and lo.v == 0.0 and isinstance(up, CubeRootOffset):
        width_cbrt = (up.coeff, up.offset)
    if width_cbrt is not None:
        b, d = width_cbrt
        if b <= 0:
            return math.inf
        return pref * 3.0 / (b * b) * ((1.0 + d) ** (1.0 / 3.0) - d ** (1.0 / 3.0))

    def inv_sq(t):
        w = float(up(t) - lo(t))
        return math.inf if w <= 0 else 1.0 / (w * w)

    ts = np.linspace(0.0, 1.0, 1025)
    if np.any(up(ts) - lo(ts) <= 0):
        return math.inf
    val, _ = quad(inv_sq, 0.0, 1.0, epsabs=0.0, epsrel=1e-10, limit=500)
    return pref * val


# ----------------------------------------------------------- exact oracle

def _integer_atoms(step: DiscreteAtoms):
    xs = step.xs
    ks = np.rint(xs).astype(np.int64)
    if not np.all(ks == xs):
        raise UnsupportedLaw("lattice oracle needs integer-valued atoms")
    return ks, step.ps


def tube_log_probability_exact(step: DiscreteAtoms, j: int, band: Tuple[int, int],
                               start: int = 0) -> float:
    """``log P(lo <= S_i <= hi for all i <= j)`` by the banded transfer operator.

    The state vector is renormalized every step and the logs of the
    normalizers are summed with ``math.fsum``.
    """
    if not isinstance(step, DiscreteAtoms):
        raise UnsupportedLaw("lattice oracle needs DiscreteAtoms")
    ks, ps = _integer_atoms(step)
    lo, hi = int(band[0]), int(band[1])
    width = hi - lo + 1
    if width < 1 or width > 10 ** 4:
        raise DomainError("band must contain 1..10^4 integers")
    if not 0 <= j <= 10 ** 6:
        raise DomainError("j must be in 0..10^6")
    if not lo <= start <= hi:
        return -math.inf
    v = np.zeros(width)
    v[start - lo] = 1.0
    logs = []
    for _ in range(j):
        nv = np.zeros(width)
        for k, p in zip(ks, ps):
            if k >= 0:
                if k < width:
                    nv[k:] += p * v[: width - k]
            elif -k < width:
                nv[: width + k] += p * v[-k:]
        mass = math.fsum(nv)
        if mass == 0.0:
            return -math.inf
        logs.append(math.log(mass))
        v = nv / mass
    return math.fsum(logs)


def tube_probability_exact(step: DiscreteAtoms, j: int, band: Tuple[int, int], start: int = 0) -> float:
    return math.exp(tube_log_probability_exact(step, j, band, start))


def tube_decay_ratio(step: DiscreteAtoms, band: Tuple[int, int]) -> float:
    """Leading eigenvalue of the killed one-step operator (the per-step decay)."""
    ks, ps = _integer_atoms(step)
    lo, hi = int(band[0]), int(band[1])
    width = hi - lo + 1
    m = np.zeros((width, width))
    for k, p in zip(ks, ps):
        for a in range(width):
            b = a + k
            if 0 <= b < width:
                m[b, a] += p
    return float(np.max(np.abs(np.linalg.eigvals(m))))


PM_ONE = DiscreteAtoms(((-1.0, 0.5), (1.0, 0.5)))


def lattice_band_spec(j: int, band: Tuple[int, int]) -> TubeSpec:
    """Absolute-unit tube for the integer band ``lo <= S_i <= hi``."""
    return TubeSpec(j, Constant(float(band[0])), Constant(float(band[1])), units="absolute")
