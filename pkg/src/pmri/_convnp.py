"""Pure-numpy convolution kernels, semantics identical to the compiled core.

Same-size correlation with zero padding, channels-last layout. One matmul
per kernel offset on a shifted window of the padded input; accumulation
order matches the compiled core (row-major over offsets).
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _pad(x, kh, kw, pt, pl):
    return np.pad(x, ((pt, kh - 1 - pt), (pl, kw - 1 - pl), (0, 0)))


def conv_forward(x, w, pt, pl):
    """Correlate x (H, W, Ci) with w (kh, kw, Ci, Co); output (H, W, Co)."""
    H, W, _ = x.shape
    kh, kw, _, co = w.shape
    xp = _pad(x, kh, kw, pt, pl)
    out = np.zeros((H, W, co), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            out += xp[ky:ky + H, kx:kx + W] @ w[ky, kx]
    return out


def conv_grad_input(g, w, pt, pl):
    """Adjoint of conv_forward in its first argument; g is (H, W, Co)."""
    H, W, _ = g.shape
    kh, kw, ci, _ = w.shape
    gxp = np.zeros((H + kh - 1, W + kw - 1, ci), dtype=g.dtype)
    for ky in range(kh):
        for kx in range(kw):
            gxp[ky:ky + H, kx:kx + W] += g @ w[ky, kx].T
    return np.ascontiguousarray(gxp[pt:pt + H, pl:pl + W])


# Reused across calls: training hits the same shapes thousands of times and
# fresh 40+ MB allocations cost page faults.
_workspaces = {}


def _workspace(shape, dtype):
    key = (shape, np.dtype(dtype).str)
    buf = _workspaces.get(key)
    if buf is None:
        buf = np.empty(shape, dtype=dtype)
        _workspaces[key] = buf
    return buf


def conv_grad_weight(x, g, kh, kw, pt, pl):
    """Gradient of conv_forward w.r.t. the kernel bank; returns (kh, kw, Ci, Co).

    Gathers the patch matrix (one strided copy per kernel row) and reduces it
    in a single GEMM; per-offset GEMMs are badly shaped for BLAS.
    """
    H, W, ci = x.shape
    co = g.shape[2]
    Wp = W + kw - 1
    xp = np.zeros((H + kh, Wp, ci), dtype=x.dtype)
    xp[pt:pt + H, pl:pl + W] = x
    flat = xp.reshape(-1)
    n = H * Wp
    row = kw * ci
    step = flat.itemsize
    patches = _workspace((n, kh * row), x.dtype)
    for ky in range(kh):
        src = as_strided(flat[ky * Wp * ci:], shape=(n, row), strides=(ci * step, step))
        patches[:, ky * row:(ky + 1) * row] = src
    gf = np.zeros((n, co), dtype=g.dtype)
    gf.reshape(H, Wp, co)[:, :W] = g
    return (patches.T @ gf).reshape(kh, kw, ci, co)
