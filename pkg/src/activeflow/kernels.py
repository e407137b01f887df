"""Backend selection for the sampling kernels.

The compiled extension is used when it imports; set ``ACTIVEFLOW_PURE=1`` to
force the numpy fallback.
"""
import logging
import os

log = logging.getLogger(__name__)

if os.environ.get("ACTIVEFLOW_PURE", "") not in ("", "0"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
categorical = _impl.categorical
euler_sample = _impl.euler_sample
softmax_generate = _impl.softmax_generate
