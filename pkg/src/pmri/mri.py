"""Sampling masks, per-coil encoding operators and baselines.

The encoding model per coil is ``k = mask * fft2(image)``; its adjoint is
``ifft2(mask * k)``. Coil images are stacked on a trailing channel axis, so
all operators broadcast over coils.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import core


@dataclass
class SamplingMask:
    """Binary Cartesian undersampling pattern on an (m, n) k-space grid."""

    grid: np.ndarray
    ratio: float

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2:
            raise ValueError("mask grid must be 2-D")
        actual = self.achieved_ratio()
        if abs(actual - self.ratio) > 1.0 / self.grid.size + 1e-12:
            raise ValueError(f"stored ratio {self.ratio} inconsistent with grid ({actual})")

    def achieved_ratio(self):
        return float(np.count_nonzero(self.grid)) / self.grid.size

    @property
    def shape(self):
        return self.grid.shape

    def as_weights(self, dtype=np.float64):
        """Mask as a (m, n, 1) multiplier broadcasting over coil channels."""
        return self.grid.astype(dtype)[:, :, None]


@dataclass
class SensitivityMaps:
    """Simulator-side coil profiles; the reconstruction network never sees them."""

    maps: np.ndarray  # (m, n, num_coils) complex

    def __post_init__(self):
        self.maps = np.asarray(self.maps)
        if self.maps.ndim != 3:
            raise ValueError("sensitivity maps must be (m, n, coils)")

    @property
    def num_coils(self):
        return self.maps.shape[2]

    def sos_normalized(self):
        """Rescale so the per-pixel sum of squared magnitudes is 1."""
        norm = np.sqrt((np.abs(self.maps) ** 2).sum(axis=2, keepdims=True))
        if np.any(norm == 0):
            raise ValueError("cannot SOS-normalize maps with all-zero pixels")
        return SensitivityMaps(self.maps / norm)


@dataclass
class KSpaceData:
    """Per-coil partial k-space samples, exactly zero off the mask."""

    coils: np.ndarray  # (m, n, num_coils) complex
    mask: SamplingMask
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.coils = np.asarray(self.coils)
        if self.coils.ndim != 3:
            raise ValueError("k-space data must be (m, n, coils)")
        if self.coils.shape[:2] != self.mask.shape:
            raise ValueError("k-space grid does not match mask")
        off = self.coils[self.mask.grid == 0]
        if off.size and np.any(off != 0):
            raise ValueError("k-space entries at unsampled locations must be zero")

    @property
    def num_coils(self):
        return self.coils.shape[2]


@dataclass
class TrainingSample:
    """(partial k-space, ground-truth coil images) pair."""

    f: KSpaceData
    u_hat: np.ndarray  # (m, n, num_coils) complex

    def __post_init__(self):
        self.u_hat = np.asarray(self.u_hat)
        if self.u_hat.shape != self.f.coils.shape:
            raise ValueError("ground truth shape does not match k-space data")


def make_cartesian_mask(m, n, ratio, acs_lines=24):
    """Regularly spaced phase-encode rows plus a fully sampled central band.

    The achieved sampling ratio lands within one row of the request. Rows
    index the first grid axis; the band is centred at m // 2 to match the
    centered FFT convention.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if acs_lines < 0:
        raise ValueError("acs_lines must be nonnegative")
    target = int(round(ratio * m))
    if target < 1:
        raise ValueError(f"ratio {ratio} selects no rows on an m={m} grid")
    if acs_lines > target:
        raise ValueError(f"acs_lines={acs_lines} exceeds the {target}-row budget at ratio {ratio}")

    rows = np.zeros(m, dtype=bool)
    centre = m // 2
    lo = centre - acs_lines // 2
    rows[max(lo, 0):min(lo + acs_lines, m)] = True
    extra = target - int(rows.sum())
    outer = np.flatnonzero(~rows)
    if extra > 0 and outer.size:
        take = np.minimum((np.arange(extra) * outer.size) // extra, outer.size - 1)
        rows[outer[take]] = True

    grid = np.repeat(rows[:, None], n, axis=1)
    return SamplingMask(grid=grid, ratio=float(np.count_nonzero(grid)) / grid.size)


def forward_op(u, mask: SamplingMask):
    """mask * fft2(u) per coil channel."""
    u = np.asarray(u)
    _check_grid(u, mask)
    return _weights_like(mask, u) * core.fft2(u)


def adjoint_op(f, mask: SamplingMask):
    """ifft2(mask * f); exact adjoint of :func:`forward_op`."""
    f = np.asarray(f)
    _check_grid(f, mask)
    return core.ifft2(_weights_like(mask, f) * f)


def _check_grid(x, mask):
    if x.shape[:2] != mask.shape:
        raise ValueError(f"array grid {x.shape[:2]} does not match mask {mask.shape}")


def _weights_like(mask, x):
    w = mask.grid.astype(x.real.dtype)
    return w[:, :, None] if x.ndim == 3 else w


def gradient_step_graph(u, f_coils, mask: SamplingMask, rho):
    """Autodiff node for one fidelity gradient step (see ``gradient_step``)."""
    u = ad.as_var(u)
    weights = _weights_like(mask, u.value)
    residual = ad.sub_const(ad.mask_mul(weights, ad.fft2(u)), f_coils)
    return ad.sub(u, ad.scale(rho, ad.ifft2(ad.mask_mul(weights, residual))))


def gradient_step(u, f: KSpaceData, rho):
    """One gradient-descent step on the k-space fidelity of every coil.

    Returns ``u - rho * adjoint_op(forward_op(u) - f)`` with the mask applied
    once inside the residual (sampled k-space entries of ``f`` are already
    the only nonzero ones).
    """
    u = np.asarray(u)
    if u.shape != f.coils.shape:
        raise ValueError(f"image stack {u.shape} does not match k-space {f.coils.shape}")
    if not np.isfinite(rho):
        raise ValueError("step size must be finite")
    return gradient_step_graph(u, f.coils, f.mask, float(rho)).value


def zero_filled_recon(f: KSpaceData):
    """Per-coil inverse FFT of the zero-filled k-space (the network input)."""
    return core.ifft2(f.coils)


@dataclass
class CGResult:
    image: np.ndarray
    residuals: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def cg_sense(f: KSpaceData, sens: SensitivityMaps, iters=30, tol=1e-6):
    """Least-squares SENSE reconstruction by conjugate gradient.

    Solves ``min_v sum_i 0.5 * ||mask * fft2(s_i * v) - f_i||^2`` on the
    normal equations. ``residuals`` tracks the data-space residual norm per
    iterate (monotone for CG); convergence is declared when the relative
    normal-equations residual drops below ``tol``. On stagnation the best
    iterate found is returned with ``converged=False`` and a warning.
    """
    maps = sens.maps
    if maps.shape != f.coils.shape:
        raise ValueError("sensitivities do not match k-space layout")
    weights = f.mask.as_weights()

    def fwd(v):
        return weights * core.fft2(maps * v[:, :, None])

    def adj(k):
        return (np.conj(maps) * core.ifft2(weights * k)).sum(axis=2)

    rhs = adj(f.coils)
    rhs_norm = np.linalg.norm(rhs)
    x = np.zeros(maps.shape[:2], dtype=np.complex128)
    if rhs_norm == 0:
        return CGResult(image=x, residuals=[0.0], converged=True, iterations=0)

    def data_residual(v):
        return float(np.linalg.norm(fwd(v) - f.coils))

    r = rhs.copy()
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    result = CGResult(image=x.copy(), residuals=[data_residual(x)])
    for it in range(1, iters + 1):
        ap = adj(fwd(p))
        denom = float(np.vdot(p, ap).real)
        if denom <= 0:
            break
        step = rs / denom
        x = x + step * p
        r = r - step * ap
        rs_new = float(np.vdot(r, r).real)
        result.image = x
        result.residuals.append(data_residual(x))
        result.iterations = it
        if np.sqrt(rs_new) <= tol * rhs_norm:
            result.converged = True
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    if not result.converged:
        warnings.warn(f"CG-SENSE stopped after {result.iterations} iterations "
                      f"without reaching tol={tol}", RuntimeWarning, stacklevel=2)
    return result
