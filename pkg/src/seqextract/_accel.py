"""Numba switch.

Set ``SEQEXTRACT_NUMBA=0`` to force the pure-numpy kernels. The flag is read
once at import time; tests that compare both paths call the ``*_numpy`` and
``*_numba`` variants in :mod:`seqextract.kernels` directly.
"""

import os

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SEQEXTRACT_NUMBA", "1") not in ("0", "false", "no")


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is importable, else return it as is."""
    if HAVE_NUMBA:
        return _njit(cache=True)(fn)
    return fn
