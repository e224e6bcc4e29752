"""Backend switch for the numeric kernels.

Set ``MUCS_DISABLE_NUMBA=1`` to force the pure-numpy path. The numba path is
also skipped silently when numba cannot be imported.
"""

import os

_FLAG = os.environ.get("MUCS_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by MUCS_DISABLE_NUMBA")
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:
    _njit = None
    NUMBA_AVAILABLE = False


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if _njit is None:
        return func
    return _njit(cache=True, nogil=True)(func)


def backend():
    return "numba" if NUMBA_AVAILABLE else "numpy"
