"""Image quality metrics: relative RMSE, PSNR and windowed SSIM.

All metrics operate on real (magnitude) images. Conventions are recorded in
the report header so the numbers are self-describing: PSNR peak defaults to
max |reference|, SSIM uses an 11x11 Gaussian window (sigma 1.5) with
k1=0.01, k2=0.03 and dynamic range max |reference|.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 300.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(x_hat, x_star):
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_hat.shape != x_star.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x_star.shape}")
    return x_hat, x_star


def rmse(x_hat, x_star):
    """Relative Euclidean error ||x_hat - x_star|| / ||x_star||."""
    x_hat, x_star = _pair(x_hat, x_star)
    ref = np.linalg.norm(x_star)
    if ref == 0:
        raise ValueError("reference image has zero norm")
    return float(np.linalg.norm(x_hat - x_star) / ref)


def psnr(x_hat, x_star, peak=None):
    """20*log10(peak / rms error) in dB, capped at 300 for identical inputs.

    ``peak`` defaults to max |x_star|.
    """
    x_hat, x_star = _pair(x_hat, x_star)
    if peak is None:
        peak = float(np.abs(x_star).max())
    if peak <= 0:
        raise ValueError("peak must be positive")
    rms = float(np.sqrt(np.mean((x_hat - x_star) ** 2)))
    if rms == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(20.0 * np.log10(peak / rms)))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _windowed_mean(img, win):
    views = sliding_window_view(img, win.shape)
    return np.tensordot(views, win, axes=([2, 3], [0, 1]))


def ssim(x_hat, x_star, dynamic_range=None):
    """Mean local SSIM over valid 11x11 Gaussian windows; value in [-1, 1]."""
    x_hat, x_star = _pair(x_hat, x_star)
    if min(x_hat.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels per side")
    if dynamic_range is None:
        dynamic_range = float(np.abs(x_star).max())
    if dynamic_range <= 0:
        raise ValueError("dynamic range must be positive")
    win = _gaussian_window()
    mu1 = _windowed_mean(x_hat, win)
    mu2 = _windowed_mean(x_star, win)
    s11 = _windowed_mean(x_hat * x_hat, win) - mu1 ** 2
    s22 = _windowed_mean(x_star * x_star, win) - mu2 ** 2
    s12 = _windowed_mean(x_hat * x_star, win) - mu1 * mu2
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 ** 2 + mu2 ** 2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-image metrics plus mean/std aggregates for one comparison set."""

    label: str = ""
    psnr_values: list = field(default_factory=list)
    ssim_values: list = field(default_factory=list)
    rmse_values: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.psnr_values)

    def summary(self):
        out = {}
        for name, vals in (("psnr", self.psnr_values), ("ssim", self.ssim_values),
                           ("rmse", self.rmse_values)):
            arr = np.asarray(vals, dtype=np.float64)
            out[name] = (float(arr.mean()), float(arr.std()))
        return out

    def to_text(self):
        s = self.summary()
        lines = [
            f"# {self.label or 'reconstruction metrics'} ({self.count} images)",
            "# psnr peak = max|reference|; ssim: 11x11 gaussian sigma=1.5, "
            "k1=0.01, k2=0.03, range = max|reference|",
            f"{'':10s} {'PSNR (dB)':>20s} {'SSIM':>20s} {'RMSE':>20s}",
        ]
        for i in range(self.count):
            lines.append(f"image {i:3d}  {self.psnr_values[i]:20.4f} "
                         f"{self.ssim_values[i]:20.4f} {self.rmse_values[i]:20.4f}")
        lines.append(
            f"{'mean+-std':10s} "
            f"{s['psnr'][0]:12.4f}+-{s['psnr'][1]:.4f} "
            f"{s['ssim'][0]:13.4f}+-{s['ssim'][1]:.4f} "
            f"{s['rmse'][0]:13.4f}+-{s['rmse'][1]:.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        lines = ["index,psnr_db,ssim,rmse"]
        for i in range(self.count):
            lines.append(f"{i},{self.psnr_values[i]!r},{self.ssim_values[i]!r},"
                         f"{self.rmse_values[i]!r}")
        s = self.summary()
        lines.append(f"mean,{s['psnr'][0]!r},{s['ssim'][0]!r},{s['rmse'][0]!r}")
        lines.append(f"std,{s['psnr'][1]!r},{s['ssim'][1]!r},{s['rmse'][1]!r}")
        return "\n".join(lines) + "\n"


def evaluate(recon_images, truth_images, label=""):
    """Metric report over paired real images (e.g. SOS magnitudes)."""
    if len(recon_images) != len(truth_images):
        raise ValueError(f"got {len(recon_images)} reconstructions "
                         f"but {len(truth_images)} references")
    if not recon_images:
        raise ValueError("empty image set")
    report = MetricReport(label=label)
    for rec, ref in zip(recon_images, truth_images):
        report.psnr_values.append(psnr(rec, ref))
        report.ssim_values.append(ssim(rec, ref))
        report.rmse_values.append(rmse(rec, ref))
    return report
