"""Branching random walk killed above a barrier.

Every individual of generation ``g`` draws one offspring outcome from its own
64-bit key; children born strictly above ``phi(g + 1)`` are removed. Because
outcomes depend only on keys, two runs that share a root key but use
different barriers are coupled pathwise: raising the barrier only adds
individuals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import kernels
from ._parallel import chunk_ranges, ordered_map
from .constants import a_critical, b_roots, tube_constant
from .errors import DegenerateFit, DomainError, InsufficientHits
from .laws import criticality_check, pack_law
from .results import NAIVE, SPLITTING, SurvivalEstimate, binomial_estimate
from .rng import SALT_CLONE, mix64_np, salted_np

DEFAULT_CAP = 10 ** 6
CHUNK_RUNS = 512
MIN_HITS = 10
SPARSE_N_MIN = 16


# ------------------------------------------------------------------ barriers

def _cbrt_range(n: int) -> np.ndarray:
    return np.cbrt(np.arange(n + 1, dtype=np.float64))


@dataclass(frozen=True)
class PowerLaw:
    a: float

    def values(self, n: int) -> np.ndarray:
        return self.a * _cbrt_range(n)

    @property
    def a_plus(self) -> float:
        return self.a

    @property
    def a_minus(self) -> float:
        return self.a


@dataclass(frozen=True)
class Linear:
    eps: float

    def values(self, n: int) -> np.ndarray:
        return self.eps * np.arange(n + 1, dtype=np.float64)

    @property
    def a_plus(self) -> float:
        return math.copysign(math.inf, self.eps) if self.eps != 0 else 0.0

    a_minus = a_plus


@dataclass(frozen=True)
class OscillatingParity:
    """``a_plus n^{1/3}`` on even generations, ``a_minus n^{1/3}`` on odd ones."""

    a_hi: float
    a_lo: float

    def values(self, n: int) -> np.ndarray:
        i = np.arange(n + 1)
        return np.where(i % 2 == 0, self.a_hi, self.a_lo) * _cbrt_range(n)

    @property
    def a_plus(self) -> float:
        return max(self.a_hi, self.a_lo)

    @property
    def a_minus(self) -> float:
        return min(self.a_hi, self.a_lo)


@dataclass(frozen=True)
class SparseDip:
    """``a_lo n^{1/3}`` when ``n`` is a power of ``N``, ``a_hi n^{1/3}`` otherwise."""

    a_hi: float
    a_lo: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise DomainError("SparseDip needs an integer N >= 2")

    def values(self, n: int) -> np.ndarray:
        coef = np.full(n + 1, float(self.a_hi))
        p = 1
        while p <= n:
            coef[p] = self.a_lo
            p *= self.N
        return coef * _cbrt_range(n)

    @property
    def a_plus(self) -> float:
        return max(self.a_hi, self.a_lo)

    @property
    def a_minus(self) -> float:
        return min(self.a_hi, self.a_lo)


@dataclass(frozen=True)
class Table:
    """Explicit ``phi(1), phi(2), ...``; no limits are known."""

    table: Tuple[float, ...]

    def values(self, n: int) -> np.ndarray:
        if n > len(self.table):
            raise DomainError(f"table barrier defined up to generation {len(self.table)}, asked for {n}")
        return np.concatenate([[0.0], np.asarray(self.table[:n], dtype=np.float64)])

    a_plus = None
    a_minus = None


def parse_barrier(text: str):
    """``pow:a``, ``lin:eps``, ``osc:a_hi:a_lo``, ``dip:a_hi:a_lo:N``."""
    fields = {"pow": ("a",), "lin": ("eps",), "osc": ("a_plus", "a_minus"),
              "dip": ("a_plus", "a_minus", "N")}
    kind, *parts = text.split(":")
    if kind not in fields:
        raise DomainError(f"barrier kind {kind!r} unknown; expected one of {sorted(fields)}")
    names = fields[kind]
    if len(parts) != len(names):
        raise DomainError(f"barrier {text!r}: expected fields {':'.join(names)}")
    vals = []
    for name, raw in zip(names, parts):
        try:
            vals.append(int(raw) if name == "N" else float(raw))
        except ValueError:
            raise DomainError(f"barrier {text!r}: field {name!r} is not a number: {raw!r}") from None
    return {"pow": PowerLaw, "lin": Linear, "osc": OscillatingParity, "dip": SparseDip}[kind](*vals)


# ---------------------------------------------------------------- simulation

@dataclass
class PopulationState:
    generation: int
    positions: np.ndarray
    weights: np.ndarray
    truncated: bool = False
    extinct_at: Optional[int] = None
    keys: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def particles(self):
        return list(zip(self.positions.tolist(), self.weights.tolist()))

    @property
    def size(self) -> int:
        return int(self.positions.size)


def _require_critical(law, allow_noncritical: bool):
    if not allow_noncritical:
        rep = criticality_check(law)
        if not rep.is_critical:
            raise DomainError(f"law is not critical (Psi(1)={rep.psi1!r}, Psi'(1)={rep.dpsi1!r}); "
                              "pass allow_noncritical to simulate it anyway")


def _single_root(keys):
    keys = np.asarray(keys, np.uint64)
    r = keys.size
    return np.zeros(r), keys, np.arange(r + 1, dtype=np.int64), np.ones(r)


def simulate(law, barrier, n: int, cap: int, stream, allow_noncritical: bool = False,
             backend=None) -> PopulationState:
    """One run from a single ancestor at 0 up to generation ``n``.

    When the population exceeds ``cap`` a uniformly chosen subset of size
    ``cap`` is kept and ``truncated`` is set.
    """
    if n < 0 or cap < 1:
        raise DomainError("need n >= 0 and cap >= 1")
    _require_critical(law, allow_noncritical)
    upper = barrier.values(n)
    lower = np.full(n + 1, -np.inf)
    pos0, key0, off0, w0 = _single_root([stream.next_key()])
    ext, capg, _, _, _, pos, key, _ = kernels.evolve(
        pos0, key0, off0, w0, 0, n, upper, lower, pack_law(law), cap,
        kernels.CAP_SUBSAMPLE, keep_final=True, backend=backend)
    e = int(ext[0])
    return PopulationState(n if e < 0 else e, pos, np.ones(pos.size), bool(capg[0] >= 0),
                           None if e < 0 else e, key)


def _naive(packed, upper, lower, keys, cap, workers, backend):
    def work(span):
        pos0, key0, off0, w0 = _single_root(keys[span[0]:span[1]])
        ext, capg, *_ = kernels.evolve(pos0, key0, off0, w0, 0, upper.size - 1, upper, lower,
                                       packed, cap, kernels.CAP_ALIVE, backend=backend)
        return int(np.count_nonzero(ext < 0)), int(np.count_nonzero(capg >= 0))

    parts = ordered_map(work, chunk_ranges(keys.size, CHUNK_RUNS), workers)
    return sum(p[0] for p in parts), sum(p[1] for p in parts)


def milestones(n: int, n0: int = 4, E: float = 2.0) -> list:
    """Splitting levels ``round(n0 E^k)`` below ``n``, followed by ``n``."""
    out, k = [], 0
    while True:
        m = int(round(n0 * E ** k))
        if m >= n:
            break
        if not out or m > out[-1]:
            out.append(m)
        k += 1
    return out + [n]


def _split_group(packed, upper, lower, root_keys, levels, cap, backend):
    reps = root_keys.size
    pos, key, off, w = _single_root(root_keys)
    g = 0
    log_p = 0.0
    cap_hits = 0
    for level, m in enumerate(levels):
        ext, capg, count, _, _, pos, key, off = kernels.evolve(
            pos, key, off, w, g, m, upper, lower, packed, cap, kernels.CAP_SUBSAMPLE,
            keep_final=True, backend=backend)
        cap_hits += int(np.count_nonzero(capg >= 0))
        alive = np.flatnonzero(ext < 0)
        if alive.size == 0:
            return 0.0, cap_hits
        log_p += math.log(alive.size / reps)
        g = m
        if level == len(levels) - 1:
            break
        # systematic reallocation over a random ordering of the survivors
        lead = key[off[alive]]
        alive = alive[np.argsort(salted_np(lead, SALT_CLONE), kind="stable")]
        src = alive[(np.arange(reps) * alive.size) // reps]
        sizes = off[src + 1] - off[src]
        new_off = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        idx = np.concatenate([np.arange(off[s], off[s + 1]) for s in src])
        slot = np.repeat(np.arange(reps, dtype=np.uint64), sizes)
        tag = np.uint64(SALT_CLONE) ^ ((np.uint64(level + 1) << np.uint64(32)) | slot)
        pos = pos[idx]
        key = mix64_np(key[idx] ^ mix64_np(tag))
        off = new_off
    return math.exp(log_p), cap_hits


def survival_probability(law, barrier, n: int, runs: int, method: str = NAIVE, stream=None,
                         cap: int = DEFAULT_CAP, workers: int = 1, groups: int = 10,
                         levels: Optional[Sequence[int]] = None, allow_noncritical: bool = False,
                         backend=None) -> SurvivalEstimate:
    """Probability that some individual of generation ``n`` stayed below the barrier.

    ``Naive`` counts runs alive at ``n``; a run whose population exceeds
    ``cap`` is stopped and counted alive. ``Splitting`` splits ``runs`` into
    ``groups`` independent fixed-effort chains over the ``levels``
    milestones; each chain multiplies the surviving fractions.
    """
    if runs < 100:
        raise DomainError("runs must be >= 100")
    if n < 1:
        raise DomainError("n must be >= 1")
    _require_critical(law, allow_noncritical)
    packed = pack_law(law)
    upper = barrier.values(n)
    lower = np.full(n + 1, -np.inf)
    method = {"naive": NAIVE, "split": SPLITTING, "splitting": SPLITTING}.get(str(method).lower(), method)
    if method == NAIVE:
        hits, cap_hits = _naive(packed, upper, lower, stream.keys(runs), cap, workers, backend)
        est = binomial_estimate(n, hits, runs, cap_hits=cap_hits)
        if hits < MIN_HITS:
            raise InsufficientHits(f"only {hits} of {runs} runs survived; use Splitting", est)
        return est
    if method != SPLITTING:
        raise DomainError(f"unknown method {method!r}")
    if groups < 2:
        raise DomainError("splitting needs at least 2 groups")
    per = runs // groups
    if per < 10:
        raise DomainError("fewer than 10 replicates per splitting group")
    levels = list(levels) if levels is not None else milestones(n)
    if levels[-1] != n or any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 1:
        raise DomainError("levels must increase strictly and end at n")
    key_sets = [stream.keys(per) for _ in range(groups)]
    parts = ordered_map(lambda ks: _split_group(packed, upper, lower, ks, levels, cap, backend),
                        key_sets, workers)
    ps = np.array([p for p, _ in parts])
    p_hat = math.fsum(ps) / groups
    stderr = float(np.std(ps, ddof=1)) / math.sqrt(groups)
    return SurvivalEstimate(n, p_hat, stderr, per * groups, SPLITTING, sum(c for _, c in parts))


# -------------------------------------------------------------------- census

@dataclass(frozen=True)
class CensusRecord:
    k: int
    n_k: int
    mean_count: float
    stderr: float
    target: float
    unconstrained_mean: float
    meets_target: bool


def two_barrier_census(law, a: float, b: Optional[float] = None, E: int = 4, k_max: int = 3,
                       runs: int = 1000, stream=None, eps: float = 1.0, cap: Optional[int] = None,
                       workers: int = 1, allow_noncritical: bool = False, backend=None) -> list:
    """Mean number of generation-``E^k`` individuals whose path stayed in
    ``[(a - b) i^{1/3}, a i^{1/3}]``.

    With a finite ``cap`` a run whose population exceeds it keeps a uniform
    subset and scales its weight by ``N / cap``, which leaves the mean
    unbiased.
    """
    if E < 2 or k_max < 0 or runs < 1:
        raise DomainError("need E >= 2, k_max >= 0, runs >= 1")
    _require_critical(law, allow_noncritical)
    sigma_sq = criticality_check(law).sigma_sq
    ac = a_critical(sigma_sq)
    if not a > ac:
        raise DomainError(f"a={a} must exceed a_c={ac}")
    if b is None:
        b = b_roots(sigma_sq, a).b_a
    n = E ** k_max
    packed = pack_law(law)
    upper = a * _cbrt_range(n)
    lower = (a - b) * _cbrt_range(n)
    lower[0] = -np.inf
    ck = [E ** k for k in range(1, k_max + 1)]
    cap = np.iinfo(np.int64).max if cap is None else int(cap)
    keys = stream.keys(runs)

    def work(span):
        pos0, key0, off0, w0 = _single_root(keys[span[0]:span[1]])
        return kernels.evolve(pos0, key0, off0, w0, 0, n, upper, lower, packed, cap,
                              kernels.CAP_WEIGHT, ck_gens=ck, backend=backend)[4]

    counts = np.concatenate(ordered_map(work, chunk_ranges(runs, CHUNK_RUNS), workers), axis=0)
    m0 = law.mean_children
    out = [CensusRecord(0, 1, 1.0, 0.0, 1.0, 1.0, True)]
    for k, col in zip(range(1, k_max + 1), counts.T):
        nk = E ** k
        mean = math.fsum(col) / runs
        se = float(np.std(col, ddof=1)) / math.sqrt(runs) if runs > 1 else math.nan
        target = math.exp(nk ** (1.0 / 3.0) * (b - eps))
        out.append(CensusRecord(k, nk, mean, se, target, m0 ** nk, mean >= target))
    return out


# ------------------------------------------------------------ classification

EXTINCT, SURVIVES, UNKNOWN = "Extinct", "Survives", "Unknown"


@dataclass(frozen=True)
class Classification:
    label: str
    reason: str


def classify_general_barrier(sigma_sq: float, barrier, n_min: int = SPARSE_N_MIN) -> Classification:
    ap, am = barrier.a_plus, barrier.a_minus
    if ap is None or am is None:
        return Classification(UNKNOWN, "barrier has no closed-form limsup/liminf")
    ac = a_critical(sigma_sq)
    k = tube_constant(sigma_sq)
    if ap < ac:
        return Classification(EXTINCT, f"a+={ap!r} < a_c={ac!r}")
    if am > ac:
        return Classification(SURVIVES, f"a-={am!r} > a_c={ac!r}")
    if isinstance(barrier, OscillatingParity) and am < ac:
        return Classification(EXTINCT, f"parity-oscillating barrier with a-={am!r} < a_c={ac!r}")
    if ap == ac:
        return Classification(UNKNOWN, "a+ equals a_c exactly; the critical case is open")
    threshold = k / b_roots(sigma_sq, ap).b_a ** 2
    if am < threshold:
        return Classification(EXTINCT, f"a-={am!r} < K/b_(a+)^2={threshold!r}")
    if isinstance(barrier, SparseDip) and am > threshold:
        if barrier.N >= n_min:
            return Classification(SURVIVES, f"a-={am!r} > K/b_(a+)^2={threshold!r} with dips at powers "
                                            f"of N={barrier.N} >= {n_min} (valid for N large enough)")
        return Classification(UNKNOWN, f"dip spacing N={barrier.N} below N_min={n_min}")
    return Classification(UNKNOWN, f"K/b_(a+)^2={threshold!r} <= a-={am!r} <= a_c={ac!r}")


# --------------------------------------------------------------- slope fit

@dataclass(frozen=True)
class SlopeFit:
    c_hat: float
    stderr: float
    r_squared: float
    intercept: float


def extinction_slope_fit(estimates: Sequence[SurvivalEstimate]) -> SlopeFit:
    """Weighted least squares of ``-log p_hat`` on ``n^{1/3}`` with free intercept.

    Weights are ``(p_hat / stderr)^2`` (delta method); if any stderr is zero
    all points get equal weight.
    """
    est = [e for e in estimates if e.p_hat > 0]
    if len({e.n for e in est}) < 2:
        raise DegenerateFit("need estimates at two or more distinct n")
    if len(est) < 3:
        raise DegenerateFit("need at least 3 estimates with p_hat > 0")
    x = np.cbrt(np.array([e.n for e in est], dtype=np.float64))
    y = -np.log(np.array([e.p_hat for e in est]))
    se = np.array([e.stderr for e in est])
    w = (np.array([e.p_hat for e in est]) / se) ** 2 if np.all(se > 0) else np.ones(x.size)
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    icpt = ym - slope * xm
    resid = y - icpt - slope * x
    ss_res = np.sum(w * resid ** 2)
    ss_tot = np.sum(w * (y - ym) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = x.size - 2
    stderr = math.sqrt(ss_res / dof / sxx) if dof > 0 else math.nan
    return SlopeFit(float(slope), stderr, float(r2), float(icpt))
