"""Convolution kernel backends.

A compiled extension (``_convcore``) provides the hot inner loop; a numpy
implementation is the fallback. The backend is picked once at import:
the compiled core when it is built, otherwise numpy. Set the environment
variable ``FOREST2FCN_KERNEL`` to ``python`` or ``compiled`` to force one.
Both backends implement the same contract and agree to float32 rounding.
"""

import os

from . import conv_py

try:
    from . import _convcore
except ImportError:
    _convcore = None

_BACKENDS = {"python": conv_py.conv2d_f32}
if _convcore is not None:
    _BACKENDS["compiled"] = _convcore.conv2d_f32

_active = os.environ.get("FOREST2FCN_KERNEL")
if _active is None:
    _active = "compiled" if _convcore is not None else "python"
if _active not in _BACKENDS:
    raise ImportError(f"kernel backend {_active!r} is not available "
                      f"(built: {sorted(_BACKENDS)})")

_conv_impl = _BACKENDS[_active]


def backend_name():
    return _active


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    """Switch the active backend; raises KeyError for an unbuilt one."""
    global _active, _conv_impl
    _conv_impl = _BACKENDS[name]
    _active = name


def conv2d(x, w, bias, stride=1, pad=0):
    """Cross-correlate a (h, w, c) float32 tensor with a (kh, kw, c, oc) kernel.

    Returns a float32 tensor of shape (oh, ow, oc) with
    oh = (h + 2*pad - kh)//stride + 1 and ow likewise.
    """
    import numpy as np

    out_h = (x.shape[0] + 2 * pad - w.shape[0]) // stride + 1
    out_w = (x.shape[1] + 2 * pad - w.shape[1]) // stride + 1
    out = np.empty((out_h, out_w, w.shape[3]), dtype=np.float32)
    _conv_impl(np.ascontiguousarray(x, dtype=np.float32),
               np.ascontiguousarray(w, dtype=np.float32),
               np.ascontiguousarray(bias, dtype=np.float32),
               stride, pad, out)
    return out
