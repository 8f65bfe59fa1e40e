"""Image quality measures and the pluggable metric-oracle registry.

Scores are computed on the luma plane only (BT.601 weighting).  SSIM and
MS-SSIM use the canonical constants: 11x11 Gaussian window with sigma
1.5, K1=0.01, K2=0.03, dynamic range 255.  Identical inputs map PSNR to
a declared 100 dB cap so scores stay finite and sortable.
"""
from __future__ import annotations

import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import signal

__all__ = [
    "MetricError",
    "QualityScore",
    "MetricOracle",
    "luma",
    "psnr",
    "psnr_avg",
    "ssim",
    "ms_ssim",
    "gaussian_window",
    "PSNR_CAP",
    "oracle_registry",
    "get_oracle",
    "make_external_oracle",
]

PSNR_CAP = 100.0
_K1 = 0.01
_K2 = 0.03
_L = 255.0
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class MetricError(Exception):
    pass


@dataclass(frozen=True)
class QualityScore:
    value: float
    metric: str
    peak: float | None = None

    def __float__(self):
        return float(self.value)


def luma(image: np.ndarray) -> np.ndarray:
    """BT.601 luma of an HxWx3 image in [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise MetricError(f"luma expects HxWx3 input, got shape {img.shape}")
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def psnr(ref: np.ndarray, dist: np.ndarray, peak: float = 255.0) -> QualityScore:
    """Peak signal-to-noise ratio in dB; identical inputs return the cap."""
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise MetricError(f"psnr requires equal shapes, got {ref.shape} and {dist.shape}")
    if peak <= 0:
        raise MetricError(f"psnr peak must be positive, got {peak}")
    err = np.mean((ref - dist) ** 2)
    if err == 0:
        return QualityScore(PSNR_CAP, "psnr", peak)
    return QualityScore(min(10.0 * np.log10(peak * peak / err), PSNR_CAP), "psnr", peak)


def psnr_avg(psnr_y: float, psnr_u: float, psnr_v: float) -> float:
    """Combined per-channel PSNR: (4*Y + U + V) / 6."""
    return (4.0 * psnr_y + psnr_u + psnr_v) / 6.0


def gaussian_window(size: int = _WINDOW_SIZE, sigma: float = _WINDOW_SIGMA) -> np.ndarray:
    """Normalized 2-d Gaussian window."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_maps(ref: np.ndarray, dist: np.ndarray):
    """Luminance and contrast-structure maps over the valid window region."""
    win = gaussian_window()
    c1 = (_K1 * _L) ** 2
    c2 = (_K2 * _L) ** 2

    def filt(img):
        return signal.correlate(img, win, mode="valid")

    mu1 = filt(ref)
    mu2 = filt(dist)
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    sigma1_sq = filt(ref * ref) - mu1_sq
    sigma2_sq = filt(dist * dist) - mu2_sq
    sigma12 = filt(ref * dist) - mu12
    lum = (2.0 * mu12 + c1) / (mu1_sq + mu2_sq + c1)
    cs = (2.0 * sigma12 + c2) / (sigma1_sq + sigma2_sq + c2)
    return lum, cs


def ssim(ref: np.ndarray, dist: np.ndarray) -> QualityScore:
    """Mean local structural similarity of two luma planes in [0, 255]."""
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise MetricError(f"ssim requires equal shapes, got {ref.shape} and {dist.shape}")
    if ref.ndim != 2 or min(ref.shape) < _WINDOW_SIZE:
        raise MetricError(f"ssim needs a 2-d image with extents >= {_WINDOW_SIZE}, got {ref.shape}")
    lum, cs = _ssim_maps(ref, dist)
    return QualityScore(float(np.mean(lum * cs)), "ssim")


def ms_ssim(ref: np.ndarray, dist: np.ndarray) -> QualityScore:
    """Five-scale multi-scale SSIM with the standard exponent vector.

    Scales are produced by 2x2 mean downsampling; the luminance term
    enters only at the coarsest scale.  Contrast-structure terms are
    clamped at zero before exponentiation.
    """
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise MetricError(f"ms_ssim requires equal shapes, got {ref.shape} and {dist.shape}")
    scales = len(MS_SSIM_WEIGHTS)
    need = _WINDOW_SIZE * 2 ** (scales - 1)
    if ref.ndim != 2 or min(ref.shape) < need:
        raise MetricError(
            f"ms_ssim needs extents >= {need} for {scales} dyadic scales, got {ref.shape}")
    score = 1.0
    a, b = ref, dist
    for level, weight in enumerate(MS_SSIM_WEIGHTS):
        lum, cs = _ssim_maps(a, b)
        cs_mean = max(float(np.mean(cs)), 0.0)
        score *= cs_mean ** weight
        if level == scales - 1:
            lum_mean = max(float(np.mean(lum)), 0.0)
            score *= lum_mean ** weight
        else:
            a = _downsample2(a)
            b = _downsample2(b)
    return QualityScore(score, "msssim")


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[:h - h % 2, :w - w % 2]
    return (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2]) / 4.0


# -- oracles ----------------------------------------------------------


@dataclass(frozen=True)
class MetricOracle:
    """A black-box full-reference scorer: (ref RGB, dist RGB) -> real.

    Inputs are HxWx3 arrays in [0, 255]; ``max_score`` is the declared
    upper bound of the underlying model.
    """

    name: str
    score: Callable[[np.ndarray, np.ndarray], float]
    max_score: float


def _ssim_oracle(ref, dist):
    return ssim(luma(ref), luma(dist)).value


def _msssim_oracle(ref, dist):
    return ms_ssim(luma(ref), luma(dist)).value


def _psnr_oracle(ref, dist):
    return psnr(luma(ref), luma(dist), peak=255.0).value


oracle_registry: dict[str, MetricOracle] = {
    "ssim": MetricOracle("ssim", _ssim_oracle, 1.0),
    "msssim": MetricOracle("msssim", _msssim_oracle, 1.0),
    "psnr": MetricOracle("psnr", _psnr_oracle, PSNR_CAP),
}


def get_oracle(name: str) -> MetricOracle:
    try:
        return oracle_registry[name]
    except KeyError:
        raise MetricError(f"unknown metric {name!r}; registered: {sorted(oracle_registry)}") from None


def make_external_oracle(name: str, command: list[str], max_score: float = 100.0) -> MetricOracle:
    """Bridge to an external scorer invoked as ``command ref.png dist.png``.

    The scorer must print a single decimal number on stdout.
    """
    from .imageio import save_image  # late import: imageio pulls in Pillow

    def score(ref, dist):
        with tempfile.TemporaryDirectory(prefix="pxiq-metric-") as tmp:
            ref_path = Path(tmp) / "ref.png"
            dist_path = Path(tmp) / "dist.png"
            save_image(ref_path, np.asarray(ref) / 255.0)
            save_image(dist_path, np.asarray(dist) / 255.0)
            proc = subprocess.run(
                [*command, str(ref_path), str(dist_path)],
                capture_output=True, text=True)
            if proc.returncode != 0:
                raise MetricError(
                    f"external scorer {name!r} failed (exit {proc.returncode}): {proc.stderr.strip()}")
            for token in proc.stdout.split():
                try:
                    return float(token)
                except ValueError:
                    continue
            raise MetricError(f"external scorer {name!r} printed no decimal: {proc.stdout!r}")

    return MetricOracle(name, score, max_score)
