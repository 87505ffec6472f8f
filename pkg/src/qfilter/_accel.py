"""Numba switch.

Set ``QFILTER_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
numba is unavailable or when debugging. The choice is made once at import.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and os.environ.get("QFILTER_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
