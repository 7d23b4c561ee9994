"""Backend selection for the per-step kernels.

The compiled extension is used when it imports; setting ``SCHEDQ_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

if os.environ.get("SCHEDQ_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _pykernels as _impl

        BACKEND = "python"

penalties = _impl.penalties
masked_argmin = _impl.masked_argmin
masked_argmax = _impl.masked_argmax
serve = _impl.serve
apply_drift = _impl.apply_drift
