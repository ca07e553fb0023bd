"""Optional numba acceleration.

Set ``ZCURVEMETA_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is importable. The flag is read once, at import time.
"""

import os

_DISABLED = os.environ.get("ZCURVEMETA_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _numba_njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it unchanged."""
    if HAS_NUMBA:
        return _numba_njit(cache=True, nogil=True)(func)
    return func


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
