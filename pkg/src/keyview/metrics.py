"""Image quality metrics and the combined geometric-mean score."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _check_shapes(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; identical images give ``inf``."""
    a, b = _check_shapes(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_gray(a, b, win):
    k = win.shape[0]
    pa = sliding_window_view(a, (k, k))
    pb = sliding_window_view(b, (k, k))

    def wmean(p):
        return np.einsum("ijkl,kl->ij", p, win)

    mu_a, mu_b = wmean(pa), wmean(pb)
    var_a = wmean(pa * pa) - mu_a ** 2
    var_b = wmean(pb * pb) - mu_b ** 2
    cov = wmean(pa * pb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid positions only.

    Color images score as the mean of their per-channel SSIM.
    """
    a, b = _check_shapes(a, b)
    if a.ndim not in (2, 3) or min(a.shape[:2]) < SSIM_WINDOW:
        raise InputError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    win = gaussian_window()
    if a.ndim == 2:
        return _ssim_gray(a, b, win)
    return float(np.mean([_ssim_gray(a[..., c], b[..., c], win) for c in range(a.shape[2])]))


def avg_metric(psnr_db: float, ssim_value: float, lpips: float) -> float:
    """Geometric mean of LPIPS, sqrt(1 - SSIM) and 10^(-PSNR/10)."""
    if ssim_value > 1:
        raise InputError(f"ssim must be <= 1, got {ssim_value}")
    if lpips < 0:
        raise InputError(f"lpips must be >= 0, got {lpips}")
    prod = lpips * math.sqrt(1.0 - ssim_value) * 10.0 ** (-psnr_db / 10.0)
    return prod ** (1.0 / 3.0)


@dataclass
class EvalReport:
    psnr: float
    ssim: float
    lpips: float | None = None
    avg: float | None = None

    @classmethod
    def build(cls, psnr_db, ssim_value, lpips=None) -> "EvalReport":
        avg = None if lpips is None else avg_metric(psnr_db, ssim_value, lpips)
        return cls(psnr_db, ssim_value, lpips, avg)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    def to_csv_row(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["psnr", "ssim", "lpips", "avg"])
        w.writerow(["" if v is None else repr(float(v)) for v in asdict(self).values()])
        return buf.getvalue()


def evaluate_images(preds, gts, lpips=None) -> EvalReport:
    """Average PSNR and SSIM over image pairs."""
    preds, gts = list(preds), list(gts)
    if not preds or len(preds) != len(gts):
        raise InputError("need equally many predicted and reference images")
    p = float(np.mean([psnr(a, b) for a, b in zip(preds, gts)]))
    s = float(np.mean([ssim(a, b) for a, b in zip(preds, gts)]))
    return EvalReport.build(p, s, lpips)
