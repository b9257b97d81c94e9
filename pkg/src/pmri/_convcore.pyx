# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""BLAS-backed 2-D convolution kernels (compiled core).

Same-size correlation with zero padding, channels-last layout. Each kernel
offset contributes one GEMM on a contiguous slice of a padded flat buffer,
so there is no im2col copy and the accumulation order is fixed (row-major
over kernel offsets), which keeps results deterministic.

The pure-numpy fallback in ``_convnp`` implements identical semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

ctypedef fused real_t:
    float
    double

cdef char TRANS_N = b'N'
cdef char TRANS_T = b'T'


cdef inline void _gemm(char fa, char fb, int m, int n, int k, real_t alpha,
                       real_t* a, int lda, real_t* b, int ldb,
                       real_t beta, real_t* c, int ldc) noexcept nogil:
    # Column-major GEMM; callers pass transposed views of C-order arrays.
    if real_t is float:
        sgemm(&fa, &fb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(&fa, &fb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _forward(real_t[:, ::1] xf, real_t[:, :, :, ::1] w,
                   real_t[:, ::1] of, int H, int Wp, int pt, int pl) noexcept nogil:
    # of[p, o] += sum_k xf[p + off_k, i] * w[ky, kx, i, o]
    cdef int kh = w.shape[0], kw = w.shape[1], ci = w.shape[2], co = w.shape[3]
    cdef int n = H * Wp
    cdef int ky, kx, off
    for ky in range(kh):
        for kx in range(kw):
            off = ky * Wp + kx
            # C-order C(n,co) += A(n,ci) @ w_k(ci,co): col-major C^T = w_k^T A^T
            _gemm(TRANS_N, TRANS_N, co, n, ci, <real_t>1.0,
                  &w[ky, kx, 0, 0], co, &xf[off, 0], ci,
                  <real_t>1.0, &of[0, 0], co)


cdef void _grad_input(real_t[:, ::1] gf, real_t[:, :, :, ::1] w,
                      real_t[:, ::1] gxf, int H, int Wp) noexcept nogil:
    # gxf[p + off_k, i] += gf[p, o] * w[ky, kx, i, o]  (transpose of _forward)
    cdef int kh = w.shape[0], kw = w.shape[1], ci = w.shape[2], co = w.shape[3]
    cdef int n = H * Wp
    cdef int ky, kx, off
    for ky in range(kh):
        for kx in range(kw):
            off = ky * Wp + kx
            # C-order C(n,ci) += G(n,co) @ w_k^T: col-major C^T = w_k G^T
            _gemm(TRANS_T, TRANS_N, ci, n, co, <real_t>1.0,
                  &w[ky, kx, 0, 0], co, &gf[0, 0], co,
                  <real_t>1.0, &gxf[off, 0], ci)


cdef void _gather_patches(real_t[:, ::1] xf, real_t[:, ::1] patches,
                          int H, int Wp, int kh, int kw) noexcept nogil:
    # patches[p, ky*row : (ky+1)*row] = xf flat scalars at (p + ky*Wp)*ci
    cdef int n = H * Wp
    cdef int row = kw * xf.shape[1]
    cdef int p, ky
    for p in range(n):
        for ky in range(kh):
            memcpy(&patches[p, ky * row], &xf[p + ky * Wp, 0], row * sizeof(real_t))


def _flat_pad(x, int kh, int kw, int pt, int pl):
    cdef int H = x.shape[0], W = x.shape[1], C = x.shape[2]
    cdef int Wp = W + kw - 1
    xp = np.zeros((H + kh, Wp, C), dtype=x.dtype)
    xp[pt:pt + H, pl:pl + W] = x
    return xp.reshape(-1, C), Wp


def conv_forward(x, w, int pt, int pl):
    """Correlate x (H, W, Ci) with w (kh, kw, Ci, Co); output (H, W, Co)."""
    cdef int H = x.shape[0], W = x.shape[1]
    cdef int kh = w.shape[0], kw = w.shape[1], co = w.shape[3]
    xf, Wp = _flat_pad(x, kh, kw, pt, pl)
    of = np.zeros((H * Wp, co), dtype=x.dtype)
    if x.dtype == np.float32:
        _forward[float](xf, w, of, H, Wp, pt, pl)
    else:
        _forward[double](xf, w, of, H, Wp, pt, pl)
    return np.ascontiguousarray(of.reshape(H, Wp, co)[:, :W])


def conv_grad_input(g, w, int pt, int pl):
    """Adjoint of conv_forward in its first argument; g is (H, W, Co)."""
    cdef int H = g.shape[0], W = g.shape[1]
    cdef int kh = w.shape[0], kw = w.shape[1], ci = w.shape[2], co = w.shape[3]
    cdef int Wp = W + kw - 1
    gf = np.zeros((H * Wp, co), dtype=g.dtype)
    gf.reshape(H, Wp, co)[:, :W] = g
    gxf = np.zeros(((H + kh) * Wp, ci), dtype=g.dtype)
    if g.dtype == np.float32:
        _grad_input[float](gf, w, gxf, H, Wp)
    else:
        _grad_input[double](gf, w, gxf, H, Wp)
    return np.ascontiguousarray(gxf.reshape(H + kh, Wp, ci)[pt:pt + H, pl:pl + W])


# Patch-matrix workspaces are reused across calls: training hits the same
# shapes thousands of times and fresh 40+ MB allocations cost page faults.
_workspaces = {}


def _workspace(shape, dtype):
    key = (shape, np.dtype(dtype).str)
    buf = _workspaces.get(key)
    if buf is None:
        buf = np.empty(shape, dtype=dtype)
        _workspaces[key] = buf
    return buf


def conv_grad_weight(x, g, int kh, int kw, int pt, int pl):
    """Gradient of conv_forward w.r.t. the kernel bank; returns (kh, kw, Ci, Co).

    A per-offset GEMM is badly shaped for BLAS (tiny output, huge K), so the
    patch matrix is gathered with C-level memcpys and reduced in one GEMM.
    """
    cdef int H = x.shape[0], W = x.shape[1], ci = x.shape[2], co = g.shape[2]
    xf, Wp = _flat_pad(x, kh, kw, pt, pl)
    gf = np.zeros((H * Wp, co), dtype=g.dtype)
    gf.reshape(H, Wp, co)[:, :W] = g
    patches = _workspace((H * Wp, kh * kw * ci), x.dtype)
    if x.dtype == np.float32:
        _gather_patches[float](xf, patches, H, Wp, kh, kw)
    else:
        _gather_patches[double](xf, patches, H, Wp, kh, kw)
    return (patches.T @ gf).reshape(kh, kw, ci, co)
