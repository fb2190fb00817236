"""Inner loops: one branching generation between two barriers, and the confined walk.

Each kernel exists as an ``@njit`` function and as a vectorized numpy
function with the same per-run semantics. Everything random is keyed per
particle (see :mod:`brwbarrier.rng`), so a run's outcome depends on neither
the backend's iteration order nor on how runs are chunked. Gaussian draws use
the arithmetic-only Box-Muller of :mod:`brwbarrier.rng`, so both backends
return bit-identical results.
"""
import math

import numpy as np

from . import _accel
from .laws import KIND_FINITE, POISSON_KMAX, PackedLaw, offspring_np
from .rng import (
    SALT_KEEP,
    child_key_nb,
    draw_bits_np,
    draw_unit_nb,
    draw_unit_open_nb,
    mix64_nb,
    normal_nb,
    normal_np,
    salted_np,
    to_unit_np,
    to_unit_open_np,
)
from ._accel import njit

CAP_SUBSAMPLE = 0   # keep a uniform subset of size cap; flag truncation
CAP_ALIVE = 1       # stop the run and count it as surviving
CAP_WEIGHT = 2      # keep a uniform subset; multiply the run's weight by N/cap

STEP_DISCRETE = 0
STEP_GAUSSIAN = 1

_SALT_KEEP_U = np.uint64(SALT_KEEP)


# ======================================================================= numba

@njit
def _outcome_nb(kind, cum, offsets, params, key):
    u0 = draw_unit_nb(key, 0)
    if kind == KIND_FINITE:
        oc = np.searchsorted(cum, u0, side="right")
        if oc > cum.size - 1:
            oc = cum.size - 1
        return oc, offsets[oc + 1] - offsets[oc]
    m = params[0]
    p = params[3]
    cdf = p
    k = 0
    while u0 >= cdf and k < POISSON_KMAX:
        k += 1
        p = p * m / k
        cdf = cdf + p
    return -1, k


@njit
def _generation_nb(pos, key, kind, cum, offsets, atoms, params, ub, lb):
    n = pos.size
    ocs = np.empty(n, np.int64)
    cnt = np.empty(n, np.int64)
    total = 0
    for i in range(n):
        oc, c = _outcome_nb(kind, cum, offsets, params, key[i])
        ocs[i] = oc
        cnt[i] = c
        total += c
    npos = np.empty(total, np.float64)
    nkey = np.empty(total, np.uint64)
    m = 0
    mu = params[1]
    sd = params[2]
    for i in range(n):
        for c in range(cnt[i]):
            if kind == KIND_FINITE:
                x = pos[i] + atoms[offsets[ocs[i]] + c]
            else:
                u1 = draw_unit_open_nb(key[i], 1 + 2 * c)
                u2 = draw_unit_nb(key[i], 2 + 2 * c)
                z = normal_nb(u1, u2)
                x = pos[i] + (mu + sd * z)
            if x > ub or x < lb:
                continue
            npos[m] = x
            nkey[m] = child_key_nb(key[i], c)
            m += 1
    return npos[:m], nkey[:m]


@njit
def _subsample_nb(pos, key, cap):
    sk = np.empty(key.size, np.uint64)
    for i in range(key.size):
        sk[i] = mix64_nb(key[i] ^ _SALT_KEEP_U)
    keep = np.sort(np.argsort(sk, kind="mergesort")[:cap])
    return pos[keep], key[keep]


@njit
def _grow(buf, need):
    if need <= buf.size:
        return buf
    out = np.empty(max(need, 2 * buf.size), buf.dtype)
    out[: buf.size] = buf
    return out


@njit
def evolve_nb(pos0, key0, off0, w0, g0, g1, upper, lower, kind, cum, offsets, atoms, params,
              cap, cap_mode, ck_gens, keep_final):
    reps = off0.size - 1
    extinct_at = np.full(reps, -1, np.int64)
    cap_gen = np.full(reps, -1, np.int64)
    count = np.zeros(reps, np.int64)
    weight = w0.copy()
    ck = np.zeros((reps, ck_gens.size), np.float64)
    out_pos = np.empty(16, np.float64)
    out_key = np.empty(16, np.uint64)
    out_off = np.zeros(reps + 1, np.int64)
    used = 0
    for r in range(reps):
        pos = pos0[off0[r]:off0[r + 1]].copy()
        key = key0[off0[r]:off0[r + 1]].copy()
        w = w0[r]
        stopped = pos.size == 0
        if stopped:
            extinct_at[r] = g0
        for g in range(g0, g1):
            if stopped:
                break
            pos, key = _generation_nb(pos, key, kind, cum, offsets, atoms, params,
                                      upper[g + 1], lower[g + 1])
            n = pos.size
            if n == 0:
                extinct_at[r] = g + 1
                break
            if n > cap:
                if cap_gen[r] < 0:
                    cap_gen[r] = g + 1
                if cap_mode == CAP_ALIVE:
                    count[r] = n
                    stopped = True
                    pos = pos[:0]
                    key = key[:0]
                    break
                if cap_mode == CAP_WEIGHT:
                    w = w * (n / cap)
                pos, key = _subsample_nb(pos, key, cap)
                n = cap
            for c in range(ck_gens.size):
                if ck_gens[c] == g + 1:
                    ck[r, c] = w * n
        if not stopped:
            count[r] = pos.size
        weight[r] = w
        if keep_final:
            out_pos = _grow(out_pos, used + pos.size)
            out_key = _grow(out_key, used + pos.size)
            out_pos[used:used + pos.size] = pos
            out_key[used:used + pos.size] = key
            used += pos.size
        out_off[r + 1] = used
    return extinct_at, cap_gen, count, weight, ck, out_pos[:used], out_key[:used], out_off


@njit
def _step_nb(kind, cum, atoms, mean, sd, key, i):
    if kind == STEP_DISCRETE:
        u = draw_unit_nb(key, i)
        idx = np.searchsorted(cum, u, side="right")
        if idx > cum.size - 1:
            idx = cum.size - 1
        return atoms[idx]
    u1 = draw_unit_open_nb(key, 2 * i)
    u2 = draw_unit_nb(key, 2 * i + 1)
    return mean + sd * normal_nb(u1, u2)


@njit
def tube_walk_nb(keys, kind, cum, atoms, mean, sd, lower, upper, end_lo, end_hi, start):
    """Hit count and first-exit histogram (index ``j + 1`` = missed endpoint window)."""
    j = lower.size - 1
    hist = np.zeros(j + 2, np.int64)
    hits = 0
    for r in range(keys.size):
        s = start
        ok = True
        for i in range(1, j + 1):
            s = s + _step_nb(kind, cum, atoms, mean, sd, keys[r], i)
            if s < lower[i] or s > upper[i]:
                hist[i] += 1
                ok = False
                break
        if ok:
            if s < end_lo or s > end_hi:
                hist[j + 1] += 1
            else:
                hits += 1
    return hits, hist


# ======================================================================= numpy

def _generation_np(pos, key, rep, packed, ub, lb):
    parent, disp, ckeys = offspring_np(packed, key)
    npos = pos[parent] + disp
    keep = ~((npos > ub) | (npos < lb))
    return npos[keep], ckeys[keep], rep[parent][keep]


def _subsample_np(pos, key, rep, over, cap):
    """Within every replicate flagged in ``over`` keep the ``cap`` smallest salted keys."""
    sel = over[rep]
    idx = np.flatnonzero(sel)
    sk = salted_np(key[idx], _SALT_KEEP_U)
    order = idx[np.lexsort((sk, rep[idx]))]
    r_sorted = rep[order]
    first = np.searchsorted(r_sorted, r_sorted, side="left")
    rank = np.arange(order.size) - first
    keep = np.ones(pos.size, bool)
    keep[order[rank >= cap]] = False
    return pos[keep], key[keep], rep[keep]


def evolve_np(pos0, key0, off0, w0, g0, g1, upper, lower, packed: PackedLaw, cap, cap_mode,
              ck_gens, keep_final):
    reps = off0.size - 1
    sizes = np.diff(off0)
    rep = np.repeat(np.arange(reps), sizes)
    pos = np.asarray(pos0, np.float64).copy()
    key = np.asarray(key0, np.uint64).copy()
    extinct_at = np.where(sizes == 0, g0, -1).astype(np.int64)
    cap_gen = np.full(reps, -1, np.int64)
    count = np.zeros(reps, np.int64)
    weight = np.asarray(w0, np.float64).copy()
    ck = np.zeros((reps, len(ck_gens)), np.float64)
    stopped = sizes == 0
    for g in range(g0, g1):
        if pos.size == 0:
            break
        pos, key, rep = _generation_np(pos, key, rep, packed, upper[g + 1], lower[g + 1])
        n = np.bincount(rep, minlength=reps)
        died = (n == 0) & ~stopped
        extinct_at[died] = g + 1
        stopped |= died
        over = n > cap
        if over.any():
            cap_gen[over & (cap_gen < 0)] = g + 1
            if cap_mode == CAP_ALIVE:
                count[over] = n[over]
                stopped |= over
                keep = ~over[rep]
                pos, key, rep = pos[keep], key[keep], rep[keep]
                n = np.where(over, 0, n)
            else:
                if cap_mode == CAP_WEIGHT:
                    weight[over] = weight[over] * (n[over] / cap)
                pos, key, rep = _subsample_np(pos, key, rep, over, cap)
                n = np.where(over, cap, n)
        for c, gen in enumerate(ck_gens):
            if gen == g + 1:
                ck[:, c] = np.where(stopped, 0.0, weight * n)
    live = ~stopped
    final = np.bincount(rep, minlength=reps)
    count[live] = final[live]
    off = np.zeros(reps + 1, np.int64)
    if keep_final:
        off[1:] = np.cumsum(final)
        return extinct_at, cap_gen, count, weight, ck, pos, key, off
    return extinct_at, cap_gen, count, weight, ck, np.empty(0), np.empty(0, np.uint64), off


def _step_np(kind, cum, atoms, mean, sd, keys, i):
    if kind == STEP_DISCRETE:
        u = to_unit_np(draw_bits_np(keys, i))
        idx = np.minimum(np.searchsorted(cum, u, side="right"), cum.size - 1)
        return atoms[idx]
    u1 = to_unit_open_np(draw_bits_np(keys, 2 * i))
    u2 = to_unit_np(draw_bits_np(keys, 2 * i + 1))
    return mean + sd * normal_np(u1, u2)


def tube_walk_np(keys, kind, cum, atoms, mean, sd, lower, upper, end_lo, end_hi, start):
    j = lower.size - 1
    hist = np.zeros(j + 2, np.int64)
    live = np.asarray(keys, np.uint64)
    s = np.full(live.size, float(start))
    for i in range(1, j + 1):
        if live.size == 0:
            break
        s = s + _step_np(kind, cum, atoms, mean, sd, live, i)
        out = (s < lower[i]) | (s > upper[i])
        hist[i] = int(out.sum())
        live, s = live[~out], s[~out]
    miss = (s < end_lo) | (s > end_hi)
    hist[j + 1] = int(miss.sum())
    return int(live.size - miss.sum()), hist


# ===================================================================== dispatch

def evolve(pos0, key0, off0, w0, g0, g1, upper, lower, packed: PackedLaw, cap, cap_mode,
           ck_gens=(), keep_final=False, backend=None):
    """Advance every replicate from generation ``g0`` to ``g1``.

    ``upper``/``lower`` are barrier values indexed by generation; a child at
    generation ``g`` dies if its position is ``> upper[g]`` or ``< lower[g]``.
    Returns ``(extinct_at, cap_gen, count, weight, checkpoint_counts,
    final_pos, final_key, final_off)``; ``extinct_at``/``cap_gen`` are -1 when
    the event did not happen.
    """
    use_nb = _accel.USE_NUMBA if backend is None else backend == "numba"
    ck = np.asarray(ck_gens, np.int64)
    upper = np.asarray(upper, np.float64)
    lower = np.asarray(lower, np.float64)
    if use_nb:
        return evolve_nb(np.asarray(pos0, np.float64), np.asarray(key0, np.uint64),
                         np.asarray(off0, np.int64), np.asarray(w0, np.float64), int(g0), int(g1),
                         upper, lower, packed.kind, packed.cum, packed.offsets, packed.atoms,
                         packed.params, int(cap), int(cap_mode), ck, bool(keep_final))
    return evolve_np(np.asarray(pos0, np.float64), np.asarray(key0, np.uint64),
                     np.asarray(off0, np.int64), np.asarray(w0, np.float64), int(g0), int(g1),
                     upper, lower, packed, int(cap), int(cap_mode), ck, bool(keep_final))


def tube_walk(keys, kind, cum, atoms, mean, sd, lower, upper, end_lo=-math.inf, end_hi=math.inf,
              start=0.0, backend=None):
    use_nb = _accel.USE_NUMBA if backend is None else backend == "numba"
    args = (np.asarray(keys, np.uint64), int(kind), np.asarray(cum, np.float64),
            np.asarray(atoms, np.float64), float(mean), float(sd),
            np.asarray(lower, np.float64), np.asarray(upper, np.float64),
            float(end_lo), float(end_hi), float(start))
    if use_nb:
        hits, hist = tube_walk_nb(*args)
        return int(hits), hist
    return tube_walk_np(*args)
