"""Optional numba acceleration.

Hot kernels are written once as plain Python loops and wrapped with
:func:`maybe_njit`.  When numba is importable and ``EDICKE_NUMBA`` is not set
to ``0``, the wrapped function is compiled; otherwise the kernel modules fall
back to their vectorized numpy implementations.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None


def numba_enabled():
    """Return True if compiled kernels should be used."""
    flag = os.environ.get("EDICKE_NUMBA", "1").strip().lower()
    return NUMBA_AVAILABLE and flag not in ("0", "false", "no", "off")


def maybe_njit(func):
    """``numba.njit(cache=True)`` if numba is importable, else identity."""
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(cache=True)(func)
