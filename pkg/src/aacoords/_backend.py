"""Selection between numba-compiled kernels and the pure numpy path.

Set ``AACOORDS_NO_JIT=1`` in the environment before import to force the
numpy path (useful for debugging and for benchmarking the two).
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("AACOORDS_NO_JIT", "0") in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(fn):
    """``numba.njit`` when enabled, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(fn)
    return fn
