"""JIT switch for the hot kernels.

Set ``SVFI_NBV_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
fallback instead of the numba build. The flag is read once at import time.
"""
import os

_DISABLED = os.environ.get("SVFI_NBV_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(func):
    """Compile ``func`` with numba when it is usable, otherwise return it unchanged."""
    if HAS_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
