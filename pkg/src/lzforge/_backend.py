"""Kernel backend selection.

The hot loops (ordered products of 2x2 step propagators and the GRAPE
forward/backward sweep) come in two flavours: numba ``@njit`` kernels and
pure-numpy fallbacks.  ``LZFORGE_BACKEND`` picks one at import time:

* ``numba`` (default when numba imports cleanly)
* ``numpy``

Both paths are always importable from :mod:`lzforge.kernels` so that they
can be compared against each other in tests and benchmarks.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_requested = os.environ.get("LZFORGE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(
        f"LZFORGE_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

BACKEND = "numba" if (_requested == "numba" and HAS_NUMBA) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is available, identity decorator otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func
