"""Backend switch for the hot numeric kernels.

Kernels are written once as plain-python/numpy loops and compiled with
``numba.njit`` unless ``DDESSM_DISABLE_NUMBA`` is set to a truthy value
(or numba is not importable), in which case the same source runs as
ordinary Python.  The choice is made at import time.
"""
import os

_flag = os.environ.get("DDESSM_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def jit(func=None, **kwargs):
    """``numba.njit`` when the numba backend is active, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if HAVE_NUMBA:
            return _njit(**kwargs)(f)
        return f

    if func is None:
        return wrap
    return wrap(func)
