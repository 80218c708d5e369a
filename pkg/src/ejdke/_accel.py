"""Numba switch.

Hot loops live in :mod:`ejdke._kernels` in two flavours: an ``@njit`` version
and a pure-numpy/python version. ``EJDKE_NO_NUMBA=1`` in the environment (or a
missing numba install) selects the pure path by default. Both stay importable
so the benchmark can time them side by side.
"""
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

_FLAG = os.environ.get("EJDKE_NO_NUMBA", "").strip().lower()
USE_NUMBA = HAS_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """``numba.njit(cache=True, nogil=True)`` or a no-op without numba."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def resolve(backend=None):
    """Return ``"numba"`` or ``"numpy"`` for an optional explicit choice."""
    if backend is None:
        return "numba" if USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def max_workers(default=None):
    """Worker cap from ``EJDKE_THREADS`` (falls back to the CPU count)."""
    raw = os.environ.get("EJDKE_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"EJDKE_THREADS must be an integer, got {raw!r}")
        return max(1, n)
    if default is not None:
        return max(1, int(default))
    return os.cpu_count() or 1
