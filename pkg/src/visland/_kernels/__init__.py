"""Hot loops, compiled with Cython when the extension is built.

The compiled module is used when importable; set ``VISLAND_PURE_PYTHON=1``
to force the numpy fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

if os.environ.get("VISLAND_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

pixel_margins = _impl.pixel_margins
bounded_bfs = _impl.bounded_bfs

__all__ = ["BACKEND", "pixel_margins", "bounded_bfs"]
