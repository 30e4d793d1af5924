"""Hot-loop kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``SIAMCAR_PURE_PYTHON=1`` to force the fallback (benchmarks, debugging).
"""
import os

from . import _pykernels

if os.environ.get("SIAMCAR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
xcorr_forward = _impl.xcorr_forward
xcorr_backward = _impl.xcorr_backward


def backends():
    """Return ``{name: module}`` for every kernel implementation importable here."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
