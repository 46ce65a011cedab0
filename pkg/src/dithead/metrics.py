"""Frame-quality and lip-sync metrics.

Images live in [-1, 1] internally, so the default peak is 2; 8-bit exports use
peak 255.  Zero-error PSNR is reported as ``PSNR_CAP`` dB.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError, UndefinedCorrelationError

PSNR_CAP = 100.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 2.0, mask=None) -> float:
    """10 log10(peak^2 / MSE); ``mask`` (H, W) restricts the MSE to selected pixels."""
    if peak <= 0:
        raise ParameterError("peak must be positive")
    a, b = _pair(a, b)
    sq = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape[: m.ndim]:
            raise DimensionError(f"mask {m.shape} does not match image {a.shape}")
        sq = sq[m]
        if sq.size == 0:
            raise ParameterError("mask selects no pixels")
    mse = float(sq.mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    return g / g.sum()


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03, peak: float = 2.0, sigma: float = 1.5) -> float:
    """Gaussian-windowed SSIM averaged over valid window positions and channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ParameterError(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    g = _gaussian_window(window, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    r = window // 2

    def filt(x):
        y = ndimage.correlate1d(x, g, axis=0, mode="constant")
        y = ndimage.correlate1d(y, g, axis=1, mode="constant")
        return y[r : x.shape[0] - r, r : x.shape[1] - r]

    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return float(np.clip(np.mean(vals), -1.0, 1.0))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError("correlation needs two equal-length vectors")
    if len(x) < 3:
        raise ParameterError("correlation needs at least 3 samples")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt((xc * xc).sum()), math.sqrt((yc * yc).sum())
    if sx < 1e-12 or sy < 1e-12:
        raise UndefinedCorrelationError("zero-variance input: correlation undefined")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def lip_sync_score(frames, envelope, mouth_center, search_half_height: float) -> float:
    """Pearson correlation between pixel-scanned mouth opening and the audio envelope."""
    from .synthdata import measure_mouth_opening

    frames = list(frames)
    env = np.asarray(envelope, dtype=np.float64)
    if len(frames) != len(env):
        raise DimensionError(f"{len(frames)} frames but {len(env)} envelope values")
    openings = [measure_mouth_opening(f, mouth_center, search_half_height) for f in frames]
    return pearson(openings, env)


@dataclass
class MetricReport:
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    lip_sync: float | None = None

    @property
    def frame_count(self) -> int:
        return len(self.psnr)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def write(self, report_path, table_path) -> None:
        """Line-oriented ``key: value`` report plus a per-frame CSV table."""
        lines = [
            f"frame_count: {self.frame_count}",
            f"mean_psnr_db: {self.mean_psnr:.6f}",
            f"mean_ssim: {self.mean_ssim:.6f}",
            f"lip_sync_r: {'nan' if self.lip_sync is None else f'{self.lip_sync:.6f}'}",
        ]
        Path(report_path).write_text("\n".join(lines) + "\n")
        with open(table_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "psnr_db", "ssim"])
            for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
                w.writerow([i, f"{p:.6f}", f"{s:.6f}"])


def evaluate_frames(generated, reference, peak: float = 2.0) -> MetricReport:
    generated, reference = list(generated), list(reference)
    if len(generated) != len(reference):
        raise DimensionError(f"{len(generated)} generated frames vs {len(reference)} reference frames")
    rep = MetricReport()
    for g, r in zip(generated, reference):
        rep.psnr.append(psnr(g, r, peak))
        rep.ssim.append(ssim(g, r, peak=peak))
    return rep
