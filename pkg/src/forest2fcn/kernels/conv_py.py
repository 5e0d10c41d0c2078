"""Pure-numpy convolution kernel, used when the compiled core is absent."""

import numpy as np


def conv2d_f32(x, w, bias, stride, pad, out):
    """Channel-last float32 cross-correlation into a preallocated output.

    x: (h, w, in_c), w: (kh, kw, in_c, out_c), bias: (out_c,).
    Accumulates one matmul per kernel tap so memory stays bounded and the
    per-cell summation order (bias, then taps in (ky, kx) order) matches
    the compiled kernel's structure.
    """
    kh, kw = w.shape[0], w.shape[1]
    out_h, out_w = out.shape[0], out.shape[1]
    if pad > 0:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    out[:] = bias
    for ky in range(kh):
        for kx in range(kw):
            window = x[ky:ky + stride * out_h:stride, kx:kx + stride * out_w:stride]
            out += window @ w[ky, kx]
    return out
