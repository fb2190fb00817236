"""Counter-based random numbers.

Every random quantity in a simulation is a pure function of a 64-bit key and
a small integer counter, hashed with the splitmix64 finalizer. Particles
carry their own key (derived from the parent's key and the child index), so
the realized genealogical tree does not depend on which particles a barrier
kills, on batching, or on how runs are spread over workers. This is what
makes barrier comparisons pathwise monotone under a shared seed.

The same hash is implemented three times: on Python ints (key derivation),
on numpy ``uint64`` arrays, and as numba scalar functions. All three agree
bit for bit.
"""
import math

import numpy as np

from ._accel import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# domain-separation salts
SALT_DRAW = 0x2545F4914F6CDD1D
SALT_CHILD = 0xD1B54A32D192ED03
SALT_RUN = 0x8CB92BA72F3D8DD7
SALT_KEEP = 0xA0761D6478BD642F
SALT_CLONE = 0xE7037ED1A0B428DB
SALT_STREAM = 0x589965CC75374CC3

INV_2_53 = 1.0 / 9007199254740992.0


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Fold integers into one 64-bit key, order-sensitive."""
    k = 0
    for p in parts:
        k = mix64(k ^ (int(p) & MASK64))
    return k


def run_key(seed: int, run: int) -> int:
    return mix64(mix64(int(seed) & MASK64) ^ mix64((int(run) ^ SALT_RUN) & MASK64))


def run_keys(seed: int, first: int, count: int) -> np.ndarray:
    """Root keys for runs ``first .. first+count-1`` as a uint64 array."""
    runs = np.arange(first, first + count, dtype=np.uint64)
    base = np.uint64(mix64(int(seed) & MASK64))
    return mix64_np(base ^ mix64_np(runs ^ np.uint64(SALT_RUN)))


# ---------------------------------------------------------------- numpy

def mix64_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def draw_bits_np(keys: np.ndarray, j) -> np.ndarray:
    """64 random bits for counter ``j`` (scalar or array) of each key."""
    jj = np.asarray(j, dtype=np.uint64)
    return mix64_np(np.asarray(keys, dtype=np.uint64) ^ mix64_np(jj ^ np.uint64(SALT_DRAW)))


def to_unit_np(bits: np.ndarray) -> np.ndarray:
    """Uniform on [0, 1)."""
    return (bits >> np.uint64(11)).astype(np.float64) * INV_2_53


def to_unit_open_np(bits: np.ndarray) -> np.ndarray:
    """Uniform on (0, 1]; safe inside ``log``."""
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * INV_2_53


def child_keys_np(keys: np.ndarray, k) -> np.ndarray:
    kk = np.asarray(k, dtype=np.uint64)
    return mix64_np(np.asarray(keys, dtype=np.uint64) ^ mix64_np(kk ^ np.uint64(SALT_CHILD)))


def salted_np(keys: np.ndarray, salt) -> np.ndarray:
    return mix64_np(np.asarray(keys, dtype=np.uint64) ^ np.asarray(salt, dtype=np.uint64))


# ---------------------------------------------------------------- numba

_GOLDEN_U = np.uint64(GOLDEN)
_M1_U = np.uint64(_M1)
_M2_U = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_SALT_DRAW_U = np.uint64(SALT_DRAW)
_SALT_CHILD_U = np.uint64(SALT_CHILD)


@njit
def mix64_nb(x):
    z = x + _GOLDEN_U
    z = (z ^ (z >> _S30)) * _M1_U
    z = (z ^ (z >> _S27)) * _M2_U
    return z ^ (z >> _S31)


@njit
def draw_unit_nb(key, j):
    b = mix64_nb(key ^ mix64_nb(np.uint64(j) ^ _SALT_DRAW_U))
    return float(b >> _S11) * INV_2_53


@njit
def draw_unit_open_nb(key, j):
    b = mix64_nb(key ^ mix64_nb(np.uint64(j) ^ _SALT_DRAW_U))
    return (float(b >> _S11) + 1.0) * INV_2_53


@njit
def child_key_nb(key, k):
    return mix64_nb(key ^ mix64_nb(np.uint64(k) ^ _SALT_CHILD_U))


# ------------------------------------------------------- normal variates
#
# Box-Muller with log and cos(2 pi u) built from +, *, / and frexp only.
# Library log/cos may differ by an ulp between numpy's vectorized loops and
# libm; these versions round identically on both backends, so a particle
# sitting on the barrier meets the same fate under numba and numpy.

_LN2 = math.log(2.0)
_SQRT_HALF = math.sqrt(0.5)
_HALF_PI = 0.5 * math.pi
# atanh series: log m = 2 s (1 + z/3 + z^2/5 + ...), s = (m-1)/(m+1), z = s^2
_LOG_C = np.array([1.0 / (2 * k + 1) for k in range(11)][::-1])
_COS_C = np.array([(-1) ** k / math.factorial(2 * k) for k in range(12)][::-1])
_SIN_C = np.array([(-1) ** k / math.factorial(2 * k + 1) for k in range(12)][::-1])


@njit
def _horner_nb(c, z):
    acc = c[0]
    for i in range(1, c.size):
        acc = acc * z + c[i]
    return acc


@njit
def log_nb(x):
    m, e = math.frexp(x)
    if m < _SQRT_HALF:
        m = m * 2.0
        e = e - 1
    t = (m - 1.0) / (m + 1.0)
    return e * _LN2 + 2.0 * t * _horner_nb(_LOG_C, t * t)


@njit
def cos2pi_nb(u):
    v = 4.0 * u
    q = int(v)
    phi = (v - q) * _HALF_PI
    z = phi * phi
    if q == 0:
        return _horner_nb(_COS_C, z)
    if q == 1:
        return -(phi * _horner_nb(_SIN_C, z))
    if q == 2:
        return -_horner_nb(_COS_C, z)
    return phi * _horner_nb(_SIN_C, z)


@njit
def normal_nb(u1, u2):
    """Standard normal from ``u1`` in (0, 1] and ``u2`` in [0, 1)."""
    return math.sqrt(-2.0 * log_nb(u1)) * cos2pi_nb(u2)


def _horner_np(c, z):
    acc = np.full_like(z, c[0])
    for ci in c[1:]:
        acc = acc * z + ci
    return acc


def log_np(x: np.ndarray) -> np.ndarray:
    m, e = np.frexp(np.asarray(x, dtype=np.float64))
    low = m < _SQRT_HALF
    m = np.where(low, m * 2.0, m)
    e = (e - low).astype(np.float64)
    t = (m - 1.0) / (m + 1.0)
    return e * _LN2 + 2.0 * t * _horner_np(_LOG_C, t * t)


def cos2pi_np(u: np.ndarray) -> np.ndarray:
    v = 4.0 * np.asarray(u, dtype=np.float64)
    q = v.astype(np.int64)
    phi = (v - q) * _HALF_PI
    z = phi * phi
    c = _horner_np(_COS_C, z)
    sn = phi * _horner_np(_SIN_C, z)
    return np.select([q == 0, q == 1, q == 2], [c, -sn, -c], sn)


def normal_np(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    return np.sqrt(-2.0 * log_np(u1)) * cos2pi_np(u2)


class RandomStream:
    """Sequential view over the counter-based generator.

    Each call to :meth:`next_key` hands out a fresh 64-bit key; the offspring
    of one individual are a deterministic function of such a key.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._key = derive_key(self.seed, SALT_STREAM, self.stream_id)
        self.counter = 0

    def next_key(self) -> int:
        k = mix64(self._key ^ mix64(self.counter ^ SALT_DRAW))
        self.counter += 1
        return k

    def keys(self, n: int) -> np.ndarray:
        ctr = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return mix64_np(np.uint64(self._key) ^ mix64_np(ctr ^ np.uint64(SALT_DRAW)))

    def uniforms(self, n: int) -> np.ndarray:
        return to_unit_np(self.keys(n))

    def spawn(self, i: int) -> "RandomStream":
        return RandomStream(derive_key(self.seed, self.stream_id), i)
