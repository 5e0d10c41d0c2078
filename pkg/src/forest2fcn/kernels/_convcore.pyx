# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 2-D cross-correlation kernel (channel-last float32).

Packs im2col row blocks in C and multiplies them against the kernel
matrix with one BLAS sgemm call per block, so the hot loop spends its
time inside the vendor GEMM instead of Python. Fully interior tap rows
are packed with a single memcpy of kw * channels floats. Per output cell
the reduction runs over taps in (ky, kx, channel) order regardless of
image size, so convolving a cropped window reproduces the full-image
cells.
"""

import numpy as np

from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport sgemm

# Cap the im2col scratch block at ~8 MB of float32.
DEF BLOCK_FLOATS = 2_000_000


def conv2d_f32(const float[:, :, ::1] x,
               const float[:, :, :, ::1] w,
               const float[::1] bias,
               int stride,
               int pad,
               float[:, :, ::1] out):
    cdef Py_ssize_t in_h = x.shape[0], in_w = x.shape[1], in_c = x.shape[2]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], out_c = w.shape[3]
    cdef Py_ssize_t out_h = out.shape[0], out_w = out.shape[1]
    cdef Py_ssize_t kdim = kh * kw * in_c
    cdef Py_ssize_t row_floats = kw * in_c

    cdef Py_ssize_t block_rows = BLOCK_FLOATS // max(1, out_w * kdim)
    if block_rows < 1:
        block_rows = 1
    if block_rows > out_h:
        block_rows = out_h

    cols_np = np.empty((block_rows * out_w, kdim), dtype=np.float32)
    cdef float[:, ::1] cols = cols_np

    cdef Py_ssize_t row0, rows, oy, ox, ky, kx, ci, co, iy, ix, iy0, ix0, cell
    cdef float* col_ptr
    cdef float* out_ptr
    cdef float* dst
    cdef int m, n, k, lda, ldb, ldc
    cdef float alpha = 1.0, beta = 1.0
    cdef char no_trans = b'N'

    for row0 in range(0, out_h, block_rows):
        rows = min(block_rows, out_h - row0)
        with nogil:
            # Pack taps for `rows` output rows: one im2col row per cell.
            cell = 0
            for oy in range(row0, row0 + rows):
                iy0 = oy * stride - pad
                for ox in range(out_w):
                    ix0 = ox * stride - pad
                    col_ptr = &cols[cell, 0]
                    for ky in range(kh):
                        iy = iy0 + ky
                        dst = col_ptr + ky * row_floats
                        if iy < 0 or iy >= in_h:
                            for ci in range(row_floats):
                                dst[ci] = 0.0
                        elif ix0 >= 0 and ix0 + kw <= in_w:
                            memcpy(dst, &x[iy, ix0, 0], row_floats * sizeof(float))
                        else:
                            for kx in range(kw):
                                ix = ix0 + kx
                                if ix < 0 or ix >= in_w:
                                    for ci in range(in_c):
                                        dst[kx * in_c + ci] = 0.0
                                else:
                                    memcpy(dst + kx * in_c, &x[iy, ix, 0],
                                           in_c * sizeof(float))
                    cell += 1
            # Seed the output with the bias, then accumulate via GEMM.
            out_ptr = &out[row0, 0, 0]
            for cell in range(rows * out_w):
                for co in range(out_c):
                    out_ptr[cell * out_c + co] = bias[co]
            # Row-major (cells x kdim) @ (kdim x out_c) expressed as
            # column-major (out_c x kdim) x (kdim x cells).
            m = <int> out_c
            n = <int> (rows * out_w)
            k = <int> kdim
            lda = m
            ldb = k
            ldc = m
            sgemm(&no_trans, &no_trans, &m, &n, &k, &alpha,
                  <float*> &w[0, 0, 0, 0], &lda,
                  &cols[0, 0], &ldb, &beta,
                  out_ptr, &ldc)
    return None
