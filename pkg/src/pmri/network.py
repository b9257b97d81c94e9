"""The unrolled reconstruction network.

Each of the T phases runs a k-space fidelity gradient step followed by a
learned residual update: the coil stack is combined into one body image,
passed through a sparse feature encoder, soft-shrunk, then decoded and
expanded back to per-coil residuals. Real and imaginary parts flow through
structurally identical conv stacks with unshared weights.

Forward evaluation is a thin wrapper over the autodiff graph builder, so
training and inference share one code path.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .mri import KSpaceData, gradient_step_graph, zero_filled_recon

COMBINER_FILTERS = 64
COMBINER_KERNEL = 3
ENCODER_FILTERS = 32
ENCODER_KERNEL = 9
STACK_DEPTH = 4


@dataclass
class LayerSpec:
    kernel_size: int
    in_channels: int
    out_channels: int
    relu: bool


@dataclass
class ConvStackSpec:
    layers: list

    @property
    def in_channels(self):
        return self.layers[0].in_channels

    @property
    def out_channels(self):
        return self.layers[-1].out_channels

    def mirrored(self):
        """Layer-by-layer reversal with swapped channel counts; ReLU on all but last."""
        rev = list(reversed(self.layers))
        layers = [
            LayerSpec(l.kernel_size, l.out_channels, l.in_channels, relu=i < len(rev) - 1)
            for i, l in enumerate(rev)
        ]
        return ConvStackSpec(layers)


def _stack(kernel, width, in_channels, out_channels, depth=STACK_DEPTH):
    layers = [LayerSpec(kernel, in_channels, width, relu=True)]
    for _ in range(depth - 2):
        layers.append(LayerSpec(kernel, width, width, relu=True))
    layers.append(LayerSpec(kernel, width, out_channels, relu=False))
    return ConvStackSpec(layers)


def combiner_spec(num_coils):
    """Coil-combination stack: num_coils -> 1 channels, 3x3 kernels, 64 filters."""
    return _stack(COMBINER_KERNEL, COMBINER_FILTERS, num_coils, 1)


def encoder_spec():
    """Sparse feature encoder: 1 -> 1 channels, 9x9 kernels, 32 filters."""
    return _stack(ENCODER_KERNEL, ENCODER_FILTERS, 1, 1)


@dataclass
class ConvLayerParams:
    """One complex conv layer: unshared real/imag kernel banks plus biases."""

    w_re: np.ndarray  # (out, in, kh, kw)
    w_im: np.ndarray
    b_re: np.ndarray  # (out,)
    b_im: np.ndarray
    relu: bool


@dataclass
class PhaseParams:
    """Everything one phase owns: step size, threshold and four conv stacks."""

    step_size: np.ndarray  # scalar (0-d)
    threshold: np.ndarray  # scalar (0-d), kept >= 0
    combiner: list = field(default_factory=list)
    encoder: list = field(default_factory=list)
    decoder: list = field(default_factory=list)
    expander: list = field(default_factory=list)


@dataclass
class NetworkParams:
    phases: list
    shrink_mode: str = "group"
    init_mode: str = "zero_filled"  # or "zeros"

    @property
    def num_phases(self):
        return len(self.phases)

    @property
    def num_coils(self):
        return self.phases[0].combiner[0].w_re.shape[1]


def _run_stack(xr, xi, layers, tag=None, check=False):
    for i, layer in enumerate(layers):
        name = f"{tag}/layer{i}" if tag else None
        xr = ad.conv2d(xr, layer.w_re, layer.b_re, name=name)
        xi = ad.conv2d(xi, layer.w_im, layer.b_im, name=name)
        if layer.relu:
            xr, xi = ad.relu(xr), ad.relu(xi)
        if check:
            ad.check_finite(xr, f"{name} (real path)")
            ad.check_finite(xi, f"{name} (imaginary path)")
    return xr, xi


def combine_graph(u, phase: PhaseParams, tag=None, check=False):
    vr, vi = _run_stack(ad.real_part(u), ad.imag_part(u), phase.combiner,
                        tag=f"{tag}/combiner" if tag else None, check=check)
    return ad.make_complex(vr, vi)


def phase_update_graph(b, phase: PhaseParams, shrink_mode="group", tag=None, check=False):
    """b + expander(decoder(shrink(encoder(combiner(b)))))."""
    br, bi = ad.real_part(b), ad.imag_part(b)
    vr, vi = _run_stack(br, bi, phase.combiner, tag=f"{tag}/combiner" if tag else None, check=check)
    wr, wi = _run_stack(vr, vi, phase.encoder, tag=f"{tag}/encoder" if tag else None, check=check)
    shrunk = ad.soft_shrink(ad.make_complex(wr, wi), phase.threshold, mode=shrink_mode)
    yr, yi = _run_stack(ad.real_part(shrunk), ad.imag_part(shrunk), phase.decoder,
                        tag=f"{tag}/decoder" if tag else None, check=check)
    rr, ri = _run_stack(yr, yi, phase.expander, tag=f"{tag}/expander" if tag else None, check=check)
    return ad.add(b, ad.make_complex(rr, ri))


def initial_stack(f: KSpaceData, mode="zero_filled", dtype=None):
    if mode == "zero_filled":
        u0 = zero_filled_recon(f)
    elif mode == "zeros":
        u0 = np.zeros_like(f.coils)
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    return u0.astype(dtype) if dtype is not None else u0


def forward_pass_graph(f: KSpaceData, theta: NetworkParams, check=False):
    """Build the full T-phase graph; returns (u_T node, combined-image node)."""
    u = ad.as_var(initial_stack(f, theta.init_mode))
    for t, phase in enumerate(theta.phases):
        tag = f"phase{t}"
        b = gradient_step_graph(u, f.coils, f.mask, phase.step_size)
        if check:
            ad.check_finite(b, f"{tag}/gradient-step")
        u = phase_update_graph(b, phase, theta.shrink_mode, tag=tag, check=check)
    v = combine_graph(u, theta.phases[-1], tag="final", check=check)
    return u, v


# ---------------------------------------------------------------------------
# ndarray-facing wrappers (inference)


def combine_coils(u, phase: PhaseParams):
    """Collapse an (H, W, Nc) coil stack into the (H, W, 1) body image."""
    u = np.asarray(u)
    if u.ndim != 3 or u.shape[2] != phase.combiner[0].w_re.shape[1]:
        raise ValueError("coil stack does not match the combiner input channels")
    return combine_graph(ad.as_var(u), phase).value


def encode_features(v, phase: PhaseParams):
    """Sparse feature map of a combined image (same spatial size)."""
    v = np.asarray(v)
    if v.ndim == 2:
        v = v[:, :, None]
    wr, wi = _run_stack(ad.real_part(ad.as_var(v)), ad.imag_part(ad.as_var(v)), phase.encoder)
    return wr.value + 1j * wi.value


def soft_shrink(x, alpha, mode="group"):
    """Soft shrinkage of an (H, W, C) feature map (see autodiff.soft_shrink)."""
    return ad.soft_shrink(ad.as_var(np.asarray(x)), float(alpha), mode=mode).value


def phase_update(b, phase: PhaseParams, shrink_mode="group"):
    """One residual update of the coil stack b (H, W, Nc)."""
    b = np.asarray(b)
    return phase_update_graph(ad.as_var(b), phase, shrink_mode).value


def forward_pass(f: KSpaceData, theta: NetworkParams):
    """Run the network; returns (u_T coil stack, combined single image)."""
    u, v = forward_pass_graph(f, theta)
    return u.value, v.value
