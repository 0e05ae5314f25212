"""Numba switch.

Hot kernels are written twice: a numba ``@njit`` loop version and a vectorised
numpy version.  ``MNPCVI_NUMBA=0`` in the environment selects the numpy path
at import time; the numpy path is also used when numba is not importable.
"""
import os

# TBB on this class of machine is too old for numba; avoid the warning
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

_FLAG = os.environ.get("MNPCVI_NUMBA", "1").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or ``None`` when numba is missing."""
    kwargs.setdefault("cache", True)

    def decorate(func):
        if not HAS_NUMBA:
            return None
        return numba.njit(**kwargs)(func)

    if args and callable(args[0]):
        return decorate(args[0])
    return decorate


if HAS_NUMBA:
    from numba import prange
else:  # pragma: no cover
    prange = range


def set_threads(n):
    """Set the numba worker count (clamped to what numba was started with)."""
    if not HAS_NUMBA or n is None:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


def backend():
    return "numba" if USE_NUMBA else "numpy"
