"""Backend switch for the numeric kernels.

Set ``STREAMDEC_DISABLE_JIT=1`` before import to force the pure-numpy
kernels even when numba is installed.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

JIT_DISABLED = os.environ.get("STREAMDEC_DISABLE_JIT", "0").lower() in ("1", "true", "yes")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not JIT_DISABLED


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched without numba."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
