"""Backend selection for the numeric kernels.

Set ``XMATCH_DISABLE_NUMBA=1`` in the environment to force the pure-numpy
path. The flag is read once, at import time.
"""
import os

_flag = os.environ.get("XMATCH_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = _flag not in ("1", "true", "yes", "on")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False
    else:
        # skip the TBB probe; older system TBB builds only emit warnings
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

BACKEND = "numba" if USE_NUMBA else "numpy"
