"""Backend switch for the hot kernels.

Set ``HRPRO_DISABLE_NUMBA=1`` to force the pure-numpy path. If numba is not
importable the numpy path is used regardless.
"""

import os

_disabled = os.environ.get("HRPRO_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(func):
    """Compile ``func`` in nopython mode when numba is present, else return it."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
