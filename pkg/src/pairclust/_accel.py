"""Numba dispatch.

Hot kernels are written twice: a numba ``@njit`` loop version and a pure-numpy
version. ``PAIRCLUST_NUMBA=0`` in the environment (read once at import) forces
the numpy path; the numpy path is also used when numba is not importable.
"""

import functools
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_flag = os.environ.get("PAIRCLUST_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _flag not in ("0", "false", "no", "off")


def njit(func):
    """``numba.njit(cache=True)`` when numba is present, otherwise identity."""
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True)(func)


def dispatch(numba_impl, numpy_impl):
    """Pick the active implementation according to ``USE_NUMBA``."""
    impl = numba_impl if USE_NUMBA else numpy_impl

    @functools.wraps(numpy_impl)
    def wrapper(*args, **kwargs):
        return impl(*args, **kwargs)

    wrapper.numba_impl = numba_impl
    wrapper.numpy_impl = numpy_impl
    return wrapper
