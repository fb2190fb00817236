"""Numba switch.

Hot kernels exist twice: an ``@njit`` version and a pure-numpy version that
produces the same numbers. Setting ``BRWBARRIER_PURE_NUMPY=1`` before import
selects the numpy path everywhere (handy for debugging and for platforms
without an LLVM toolchain).
"""
import os

_FLAG = "BRWBARRIER_PURE_NUMPY"

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None

HAVE_NUMBA = _nb is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "0").lower() not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with ``nogil`` and ``cache`` on; identity when numba is absent."""
    kwargs.setdefault("nogil", True)
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return _nb.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
