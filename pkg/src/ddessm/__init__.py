"""Spectral-submanifold reduction of delay differential equations."""
import os

__version__ = "0.1.0"

# DDESSM_NUM_THREADS caps BLAS and numba threads; it only takes effect when
# this package is imported before numpy.
_threads = os.environ.get("DDESSM_NUM_THREADS", "").strip()
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
