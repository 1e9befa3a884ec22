"""Kernel backend selection.

The compiled extension is used when it imports; set ``FLOWSYNTH_PURE_PYTHON=1``
to force the numpy fallback (the tests run both and compare).
"""
import os

from . import _kernels_py

BACKEND = "numpy"
_impl = _kernels_py

if not os.environ.get("FLOWSYNTH_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
best_gini_split = _impl.best_gini_split

compiled = None if BACKEND == "numpy" else _impl
fallback = _kernels_py
