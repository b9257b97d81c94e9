"""Synthetic multi-coil data: ellipse phantoms, smooth coil profiles, sampling.

Stands in for scanner data. Every generator draws from an explicit
``numpy.random.Generator``; a sample is a pure function of (specs, mask,
noise level, seed), so datasets are reproducible bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from . import core
from .mri import KSpaceData, SamplingMask, SensitivityMaps, TrainingSample


@dataclass
class PhantomSpec:
    """Randomized ellipse phantom: a head outline plus interior structures."""

    num_ellipses: tuple = (4, 8)  # inclusive bounds on interior ellipse count
    intensity_range: tuple = (0.2, 1.0)
    phase_amplitude: float = 0.6  # radians; 0 disables the smooth phase map

    def validate(self):
        lo, hi = self.num_ellipses
        if not (0 <= lo <= hi):
            raise ValueError(f"bad ellipse count range {self.num_ellipses}")
        if self.phase_amplitude < 0:
            raise ValueError("phase_amplitude must be nonnegative")


@dataclass
class SensitivitySpec:
    """Gaussian-lobe coil profiles placed on a ring around the FOV."""

    num_coils: int = 4
    coil_width: float = 1.1  # lobe sigma in units of the half-FOV
    phase_amplitude: float = 0.5  # radians across the FOV, per coil
    normalize_sos: bool = True
    seed: int = None  # fixed coil draw, independent of the sample seed

    def validate(self):
        if self.num_coils < 1:
            raise ValueError("need at least one coil")
        if self.coil_width <= 0:
            raise ValueError("coil_width must be positive")


def _grid(m, n):
    ys = np.linspace(-1.0, 1.0, m, endpoint=False) + 1.0 / m
    xs = np.linspace(-1.0, 1.0, n, endpoint=False) + 1.0 / n
    return np.meshgrid(ys, xs, indexing="ij")


def make_phantom(spec: PhantomSpec, m, n, rng):
    """Complex (m, n) phantom with nonnegative magnitude and smooth phase."""
    spec.validate()
    yy, xx = _grid(m, n)
    mag = np.zeros((m, n))

    def add_ellipse(cy, cx, ay, ax, theta, weight):
        yr = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
        xr = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
        mag[(yr / ay) ** 2 + (xr / ax) ** 2 <= 1.0] += weight

    add_ellipse(0.0, 0.0, 0.9, 0.75, 0.0, 1.0)
    lo, hi = spec.num_ellipses
    count = int(rng.integers(lo, hi + 1))
    for _ in range(count):
        cy, cx = rng.uniform(-0.5, 0.5, size=2)
        ay, ax = rng.uniform(0.08, 0.45, size=2)
        theta = rng.uniform(0.0, np.pi)
        sign = 1.0 if rng.uniform() < 0.7 else -1.0
        weight = sign * rng.uniform(*spec.intensity_range)
        add_ellipse(cy, cx, ay, ax, theta, weight)
    np.maximum(mag, 0.0, out=mag)
    peak = mag.max()
    if peak > 0:
        mag /= peak

    if spec.phase_amplitude > 0:
        c = rng.uniform(-1.0, 1.0, size=6)
        phase = spec.phase_amplitude * (
            c[0] + c[1] * yy + c[2] * xx + c[3] * yy * xx + c[4] * yy ** 2 + c[5] * xx ** 2
        )
        return mag * np.exp(1j * phase)
    return mag.astype(np.complex128)


def make_sensitivities(spec: SensitivitySpec, m, n, rng):
    """Smooth complex coil maps; optionally SOS-normalized to 1 per pixel."""
    spec.validate()
    if spec.seed is not None:
        rng = np.random.default_rng(spec.seed)
    yy, xx = _grid(m, n)
    maps = np.empty((m, n, spec.num_coils), dtype=np.complex128)
    start = rng.uniform(0.0, 2.0 * np.pi)
    for i in range(spec.num_coils):
        theta = start + 2.0 * np.pi * i / spec.num_coils
        cy, cx = 1.15 * np.sin(theta), 1.15 * np.cos(theta)
        lobe = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * spec.coil_width ** 2))
        ramp = rng.uniform(-1.0, 1.0, size=2)
        phase = spec.phase_amplitude * (ramp[0] * yy + ramp[1] * xx) + rng.uniform(0, 2 * np.pi)
        maps[:, :, i] = lobe * np.exp(1j * phase)
    sens = SensitivityMaps(maps)
    return sens.sos_normalized() if spec.normalize_sos else sens


def perturb_sensitivities(sens: SensitivityMaps, rel_sigma, seed):
    """Multiplicative complex-Gaussian error, e.g. 0.1 for a 10% perturbation."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(sens.maps.shape) + 1j * rng.standard_normal(sens.maps.shape)
    return SensitivityMaps(sens.maps * (1.0 + rel_sigma * noise / np.sqrt(2.0)))


def simulate_sample(phantom_spec: PhantomSpec, sens_spec: SensitivitySpec,
                    mask: SamplingMask, noise_sigma, seed):
    """Deterministic (specs, mask, noise, seed) -> TrainingSample.

    Coil images are the phantom weighted by each profile; k-space gets
    circular Gaussian noise at the sampled locations only. Both k-space and
    ground truth are then rescaled by the peak magnitude of the zero-filled
    reconstruction, so that max |ifft2(f)| == 1 per sample.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    m, n = mask.shape
    v = make_phantom(phantom_spec, m, n, rng)
    sens = make_sensitivities(sens_spec, m, n, rng)
    u_hat = sens.maps * v[:, :, None]
    weights = mask.as_weights()
    f = weights * core.fft2(u_hat)
    if noise_sigma > 0:
        shape = f.shape
        noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        f = f + weights * (noise_sigma * noise)
    peak = np.abs(core.ifft2(f)).max()
    if peak > 0:
        f = f / peak
        u_hat = u_hat / peak
    f[mask.grid == 0] = 0  # exact zeros off the mask
    return TrainingSample(f=KSpaceData(coils=f, mask=mask, noise_sigma=noise_sigma),
                          u_hat=u_hat)


def dataset_seeds(master_seed, count):
    """Stable per-sample seeds derived from one master seed."""
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(count)]


def simulate_dataset(phantom_spec, sens_spec, mask, noise_sigma, master_seed, count):
    """List of samples sharing one coil array (seeded by the master seed)."""
    if sens_spec.seed is None:
        sens_spec = SensitivitySpec(**{**sens_spec.__dict__, "seed": master_seed})
    return [simulate_sample(phantom_spec, sens_spec, mask, noise_sigma, s)
            for s in dataset_seeds(master_seed, count)]
