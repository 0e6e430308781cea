"""Coil combination and image-quality metrics."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgument
from .phantom import CoilImages

__all__ = ["ssos", "psnr", "ssim", "subtracted_mip", "ReconReport", "FrameResult"]


def ssos(g):
    """Square root of the sum of squares across the coil axis."""
    images = g.images if isinstance(g, CoilImages) else np.asarray(g)
    return np.sqrt(np.sum(np.abs(images) ** 2, axis=0))


def psnr(x_hat, y):
    """Peak SNR in dB against reference ``y``, peak taken as ``max(y)``.

    Returns ``math.inf`` when the images are identical.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_hat.shape != y.shape:
        raise InvalidArgument(f"shape mismatch {x_hat.shape} vs {y.shape}")
    if not np.any(y):
        raise InvalidArgument("reference image is identically zero")
    mse = np.mean((x_hat - y) ** 2)
    if mse == 0:
        return math.inf
    return float(20 * np.log10(np.max(y) / np.sqrt(mse)))


def ssim(x_hat, y, dynamic_range=None, k1=0.01, k2=0.03, windowed=False, sigma=1.5):
    """Structural similarity.

    By default a single window spans the whole image (global means, variances
    and covariance). ``windowed=True`` gives the usual Gaussian-window mean
    SSIM map instead. ``dynamic_range`` defaults to ``max(y) - min(y)``.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_hat.shape != y.shape:
        raise InvalidArgument(f"shape mismatch {x_hat.shape} vs {y.shape}")
    if dynamic_range is None:
        dynamic_range = float(y.max() - y.min()) or 1.0
    if dynamic_range <= 0:
        raise InvalidArgument(f"dynamic range must be positive, got {dynamic_range}")
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    if windowed:
        def f(a):
            return gaussian_filter(a, sigma, truncate=3.5)
        mx, my = f(x_hat), f(y)
        vx = f(x_hat * x_hat) - mx**2
        vy = f(y * y) - my**2
        cxy = f(x_hat * y) - mx * my
        smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
        return float(smap.mean())
    mx, my = x_hat.mean(), y.mean()
    vx, vy = x_hat.var(), y.var()
    cxy = np.mean((x_hat - mx) * (y - my))
    return float(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))


def subtracted_mip(frames, baseline_index=0, axis=None):
    """Baseline-subtracted, zero-clamped maximum intensity projections.

    With ``axis=None`` (2-D frames) the projection is the identity and only
    the subtraction and clamp are applied.
    """
    frames = [np.asarray(f, dtype=float) for f in frames]
    if not -len(frames) <= baseline_index < len(frames):
        raise InvalidArgument(f"baseline index {baseline_index} out of range")
    base = frames[baseline_index]
    out = []
    for f in frames:
        d = np.maximum(f - base, 0.0)
        out.append(d if axis is None else d.max(axis=axis))
    return out


@dataclass
class FrameResult:
    frame: int
    psnr: float
    ssim: float
    seconds: float


@dataclass
class ReconReport:
    """Per-frame metrics plus the combined images they were computed from."""

    engine: str
    frames: list = field(default_factory=list)
    ssos_images: list = field(default_factory=list)
    mip_images: list = field(default_factory=list)
    reference: str = "phantom"

    def add(self, frame, recon_ssos, ref_ssos, seconds=0.0):
        r = FrameResult(frame, psnr(recon_ssos, ref_ssos),
                        ssim(recon_ssos, ref_ssos), float(seconds))
        self.frames.append(r)
        self.ssos_images.append(np.asarray(recon_ssos))
        return r

    def finalize(self, baseline_index=0):
        if self.ssos_images:
            self.mip_images = subtracted_mip(self.ssos_images, baseline_index)
        return self

    @property
    def mean_psnr(self):
        return float(np.mean([f.psnr for f in self.frames]))

    @property
    def mean_ssim(self):
        return float(np.mean([f.ssim for f in self.frames]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["engine", "reference", "frame", "psnr_db", "ssim", "seconds"])
            for f in self.frames:
                w.writerow([self.engine, self.reference, f.frame,
                            "inf" if math.isinf(f.psnr) else f"{f.psnr:.6f}",
                            f"{f.ssim:.6f}", f"{f.seconds:.6f}"])
