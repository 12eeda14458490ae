"""Numba detection and the switch between compiled and pure-numpy kernels.

Set ``SMTNET_DISABLE_NUMBA=1`` before import to force the numpy path.
"""
import os

_DISABLED = os.environ.get("SMTNET_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if numba is not None:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
