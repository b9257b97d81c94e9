"""Minimal reverse-mode autodiff over numpy arrays.

Nodes hold real or complex arrays (or python floats for scalars). For a
complex-valued node the accumulated gradient follows the real-pair
convention: ``grad = dL/dRe(v) + 1j * dL/dIm(v)``. The loss itself must be
a real scalar. Graphs are built define-by-run and discarded after
``backward``; evaluation order is deterministic (depth-first topological
order over the recorded parents).

Only the operations the reconstruction network needs are provided; each op
carries its backward rule as a closure.
"""

import numpy as np

from . import backend


class NonFiniteError(RuntimeError):
    """A forward or backward intermediate contained NaN/Inf."""


class Var:
    """One node of the computation graph."""

    __slots__ = ("value", "grad", "_parents", "_backprop", "name")

    def __init__(self, value, parents=(), backprop=None, name=None):
        self.value = value
        self.grad = None
        self._parents = parents
        self._backprop = backprop
        self.name = name

    def __repr__(self):
        shape = getattr(self.value, "shape", ())
        return f"Var(shape={shape}, name={self.name!r})"


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _topo(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(root):
    """Accumulate dRoot/dLeaf into every node's ``grad``; root must be scalar."""
    if np.ndim(root.value) != 0:
        raise ValueError("backward() starts from a scalar node")
    root.grad = 1.0
    for node in reversed(_topo(root)):
        if node._backprop is None or node.grad is None:
            continue
        for parent, contrib in zip(node._parents, node._backprop(node.grad)):
            if contrib is None:
                continue
            if parent.grad is None:
                parent.grad = contrib
            else:
                parent.grad = parent.grad + contrib


def check_finite(x, what):
    v = x.value if isinstance(x, Var) else x
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = as_var(a), as_var(b)
    return Var(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return Var(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(s, x):
    """Multiply array node x by real scalar node s."""
    s, x = as_var(s), as_var(x)
    sval = float(s.value)
    xval = x.value

    def backprop(g):
        if np.iscomplexobj(xval):
            ds = float(np.sum(xval.real * g.real) + np.sum(xval.imag * g.imag))
        else:
            ds = float(np.sum(xval * g))
        return ds, sval * g

    return Var(sval * xval, (s, x), backprop)


def mul_const(c, x):
    x = as_var(x)
    return Var(c * x.value, (x,), lambda g: (c * g,))


# ---------------------------------------------------------------------------
# complex structure


def real_part(z):
    z = as_var(z)
    return Var(np.ascontiguousarray(z.value.real), (z,), lambda g: (g + 0j,))


def imag_part(z):
    z = as_var(z)
    return Var(np.ascontiguousarray(z.value.imag), (z,), lambda g: (1j * g,))


def make_complex(re, im):
    re, im = as_var(re), as_var(im)
    return Var(re.value + 1j * im.value, (re, im),
               lambda g: (np.ascontiguousarray(g.real), np.ascontiguousarray(g.imag)))


# ---------------------------------------------------------------------------
# Fourier / sampling (unitary centered transforms: adjoint = inverse)


def fft2(x):
    from . import core

    x = as_var(x)
    return Var(core.fft2(x.value), (x,), lambda g: (core.ifft2(g),))


def ifft2(x):
    from . import core

    x = as_var(x)
    return Var(core.ifft2(x.value), (x,), lambda g: (core.fft2(g),))


def mask_mul(mask, x):
    """Pointwise multiply by a constant real mask (broadcasts over channels)."""
    x = as_var(x)
    return Var(mask * x.value, (x,), lambda g: (mask * g,))


# ---------------------------------------------------------------------------
# network layers (real tensors, channels last)


def conv2d(x, w, b, name=None):
    """Same-padding correlation of x (H, W, Ci) with w (Co, Ci, kh, kw) + bias.

    Gradients flow to x, w and b.
    """
    x, w, b = as_var(x), as_var(w), as_var(b)
    xval = x.value
    kh, kw = w.value.shape[2], w.value.shape[3]
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    wt = np.ascontiguousarray(np.transpose(w.value, (2, 3, 1, 0)))

    def backprop(g):
        g = np.ascontiguousarray(g)
        gx = backend.conv_grad_input(g, wt, pt, pl)
        gw = backend.conv_grad_weight(xval, g, kh, kw, pt, pl)
        return gx, np.transpose(gw, (3, 2, 0, 1)), g.sum(axis=(0, 1))

    out = backend.conv_forward(xval, wt, pt, pl) + b.value
    return Var(out, (x, w, b), backprop, name=name)


def relu(x):
    x = as_var(x)
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0), (x,), lambda g: (np.where(mask, g, 0),))


def soft_shrink(z, alpha, mode="group"):
    """Soft shrinkage of a (H, W, C) map by threshold node alpha.

    ``group``: per-pixel shrinkage of the cross-channel vector magnitude
    (complex moduli included), the proximal map of the sum of those group
    norms. ``component``: per-entry shrinkage of the complex modulus. At the
    kink (norm == alpha) the zero-side derivative is used.
    """
    if mode not in ("group", "component"):
        raise ValueError(f"unknown shrink mode {mode!r}")
    z, alpha = as_var(z), as_var(alpha)
    a = float(alpha.value)
    if a < 0:
        raise ValueError("shrinkage threshold must be nonnegative")
    zval = z.value
    mag2 = zval.real ** 2 + zval.imag ** 2 if np.iscomplexobj(zval) else zval ** 2
    if mode == "group":
        nrm = np.sqrt(mag2.sum(axis=-1, keepdims=True))
    else:
        nrm = np.sqrt(mag2)
    active = nrm > a
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(active, 1.0 - a / nrm, 0.0)
    factor = factor.astype(mag2.dtype, copy=False)

    def backprop(g):
        if np.iscomplexobj(zval):
            zg = zval.real * g.real + zval.imag * g.imag
        else:
            zg = zval * g
        if mode == "group":
            zg = zg.sum(axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(active, 1.0 / nrm, 0.0)
        da = -float((zg * inv).sum())
        gz = factor * g + (a * inv ** 3 * zg) * zval
        return gz, da

    return Var(factor * zval, (z, alpha), backprop)


def sos(u, eps=1e-12):
    """Root sum of squares over the channel axis: (H, W, C) -> (H, W).

    ``eps`` floors the denominator in the backward pass only; the forward
    value is exact.
    """
    u = as_var(u)
    uval = u.value
    if np.iscomplexobj(uval):
        s = np.sqrt((uval.real ** 2 + uval.imag ** 2).sum(axis=-1))
    else:
        s = np.sqrt((uval ** 2).sum(axis=-1))

    def backprop(g):
        ratio = (g / np.maximum(s, eps))[..., None]
        return ((ratio * uval).astype(uval.dtype, copy=False),)

    return Var(s, (u,), backprop)


def l2norm(x):
    """Euclidean norm of a real array, as a scalar node.

    Subgradient 0 at the origin (the norm is not differentiable there).
    """
    x = as_var(x)
    xval = x.value
    n = float(np.sqrt(np.sum(xval ** 2)))

    def backprop(g):
        if n == 0.0:
            return (None,)
        return ((g / n) * xval,)

    return Var(n, (x,), backprop)


def sub_const(x, c):
    x = as_var(x)
    return Var(x.value - c, (x,), lambda g: (g,))
