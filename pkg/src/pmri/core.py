"""Complex tensor primitives: centered unitary FFT pair and complex convolution.

Complex images are plain numpy complex arrays of shape (H, W) or (H, W, C);
the interleaved re/im memory layout of numpy complex dtypes is the on-disk
layout as well (see ``pmri.io``). Convolution treats the real and imaginary
parts as independent channels-last real tensors with unshared kernel banks
and no cross-mixing between the two paths.
"""

from dataclasses import dataclass

import numpy as np

from . import backend


def _check_image(x):
    x = np.asarray(x)
    if x.ndim not in (2, 3) or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"expected (H, W) or (H, W, C) array, got shape {x.shape}")
    return x


def fft2(x):
    """Centered, unitary 2-D DFT over the first two axes.

    DC ends up at (H//2, W//2) and energy is preserved, so the adjoint and
    the inverse coincide (``ifft2``).
    """
    x = _check_image(x)
    shifted = np.fft.ifftshift(x, axes=(0, 1))
    return np.fft.fftshift(np.fft.fft2(shifted, axes=(0, 1), norm="ortho"), axes=(0, 1))


def ifft2(x):
    """Inverse (= adjoint) of :func:`fft2`."""
    x = _check_image(x)
    shifted = np.fft.ifftshift(x, axes=(0, 1))
    return np.fft.fftshift(np.fft.ifft2(shifted, axes=(0, 1), norm="ortho"), axes=(0, 1))


@dataclass
class ConvKernelBank:
    """Kernel bank pair for one complex conv layer.

    ``real`` filters the real path and ``imag`` the imaginary path; the two
    banks have identical (out_channels, in_channels, kh, kw) shapes but
    independent values.
    """

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real)
        self.imag = np.asarray(self.imag)
        if self.real.shape != self.imag.shape or self.real.ndim != 4:
            raise ValueError(
                f"kernel banks must share a 4-D shape, got {self.real.shape} and {self.imag.shape}"
            )

    @property
    def out_channels(self):
        return self.real.shape[0]

    @property
    def in_channels(self):
        return self.real.shape[1]


def _to_backend_layout(kernels):
    # (out, in, kh, kw) -> contiguous (kh, kw, in, out) expected by the kernels
    return np.ascontiguousarray(np.transpose(kernels, (2, 3, 1, 0)))


def _same_pads(kh, kw):
    return (kh - 1) // 2, (kw - 1) // 2


def _split_paths(x):
    x = _check_image(x)
    if x.ndim == 2:
        x = x[:, :, None]
    real = np.ascontiguousarray(x.real)
    imag = np.ascontiguousarray(x.imag)
    return real, imag


def conv2d(x, k: ConvKernelBank, stride=1, pad="same"):
    """Complex conv: real/imag parts each filtered by their own bank.

    Spatial size is preserved ("same" zero padding); only stride 1 is
    supported.
    """
    if stride != 1:
        raise ValueError("only stride 1 is supported")
    if pad != "same":
        raise ValueError("only 'same' padding is supported")
    xr, xi = _split_paths(x)
    if xr.shape[2] != k.in_channels:
        raise ValueError(f"input has {xr.shape[2]} channels, kernel expects {k.in_channels}")
    kh, kw = k.real.shape[2], k.real.shape[3]
    pt, pl = _same_pads(kh, kw)
    yr = backend.conv_forward(xr, _to_backend_layout(k.real), pt, pl)
    yi = backend.conv_forward(xi, _to_backend_layout(k.imag), pt, pl)
    return yr + 1j * yi


def conv2d_transpose(y, k: ConvKernelBank):
    """Exact adjoint of :func:`conv2d` with the same bank and padding."""
    yr, yi = _split_paths(y)
    if yr.shape[2] != k.out_channels:
        raise ValueError(f"input has {yr.shape[2]} channels, kernel produces {k.out_channels}")
    kh, kw = k.real.shape[2], k.real.shape[3]
    pt, pl = _same_pads(kh, kw)
    xr = backend.conv_grad_input(yr, _to_backend_layout(k.real), pt, pl)
    xi = backend.conv_grad_input(yi, _to_backend_layout(k.imag), pt, pl)
    return xr + 1j * xi


def inner_product(x, y):
    """sum(conj(x) * y); conjugate-linear in the first argument."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return complex(np.vdot(x, y))
