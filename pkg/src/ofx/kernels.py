"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback. Set ``OFX_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if _ckernels is not None and os.environ.get("OFX_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]

correlate2d = _impl.correlate2d
im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
extend_rows = _impl.extend_rows

__all__ = ["BACKEND", "BACKENDS", "correlate2d", "im2col3x3", "col2im3x3", "extend_rows"]
