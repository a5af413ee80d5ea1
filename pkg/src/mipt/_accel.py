"""Backend selection for the hot kernels.

Every kernel exists twice: a loop version compiled with numba ``@njit`` and
a vectorised numpy version. The numpy path is used when numba cannot be
imported or when ``MIPT_DISABLE_NUMBA`` is set to anything but ``0``.
Compilation is lazy, so a disabled build never pays the JIT cost.
"""

import os

_flag = os.environ.get("MIPT_DISABLE_NUMBA", "0").strip().lower()
DISABLED = _flag not in ("", "0", "false", "no")

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    HAVE_NUMBA = False
    _njit = None

USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(func):
    """Compile ``func`` lazily with numba when available, else return it unchanged."""
    if _njit is None:
        return func
    return _njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
