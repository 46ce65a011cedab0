"""Everything that becomes a condition for the denoiser.

Audio: per-frame feature rows are windowed (5 frames either side, edge frames
repeated) into a 363-dim vector and linearly projected to the transformer width.
Masks: the convex hull of mouth/jaw landmarks is rasterised, smoothed with a
normalised Gaussian and used to blank the mouth region.  Reference frames are
drawn at least ``min_gap`` frames from the target.

Pixel ``(row, col)`` has its centre at point ``(x=col, y=row)``; landmarks are
``(x, y)`` pairs in the same frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage
from torch import nn

from . import numerics
from .errors import DimensionError, GeometryError, ParameterError

Tensor = torch.Tensor

FPS = 25
SAMPLE_RATE = 16_000
FEATURE_DIM = 33
WINDOW_RADIUS = 5
WINDOW_FRAMES = 2 * WINDOW_RADIUS + 1
MASK_FILL = 0.0


@dataclass
class AudioTrack:
    samples: np.ndarray
    sample_rate: int
    features: np.ndarray  # (F, d_a), one row per video frame
    fps: int = FPS

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def envelope(self) -> np.ndarray:
        return self.features[:, 0]


def window_audio(track: AudioTrack | np.ndarray, frame_index: int, radius: int = WINDOW_RADIUS) -> np.ndarray:
    """Concatenate features of frames ``i-radius .. i+radius`` (indices clamped)."""
    feats = track.features if isinstance(track, AudioTrack) else np.asarray(track)
    n = feats.shape[0]
    if not (0 <= frame_index < n):
        raise ParameterError(f"frame index {frame_index} outside [0, {n})")
    idx = np.clip(np.arange(frame_index - radius, frame_index + radius + 1), 0, n - 1)
    return feats[idx].reshape(-1)


def window_duration_s(fps: int = FPS, radius: int = WINDOW_RADIUS) -> float:
    return (2 * radius + 1) / fps


def project_audio(window: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if window.shape[-1] != weight.shape[1]:
        raise DimensionError(f"audio window width {window.shape[-1]} != projection input {weight.shape[1]}")
    return numerics.linear(window, weight, bias)


class AudioProjection(nn.Module):
    """Learned affine map from the audio window to the hidden width (trained with the DiT)."""

    def __init__(self, hidden: int, window_dim: int = WINDOW_FRAMES * FEATURE_DIM):
        super().__init__()
        self.proj = nn.Linear(window_dim, hidden)

    def forward(self, window: Tensor) -> Tensor:
        return project_audio(window, self.proj.weight, self.proj.bias)


def timestep_embedding(t, hidden: int, max_period: float = 10_000.0) -> Tensor:
    """Sinusoidal embedding laid out as ``[sin(t w_k) ..., cos(t w_k) ...]``.

    ``t`` may be an int or a 1-d tensor; returns (hidden,) or (B, hidden).
    """
    if hidden % 2:
        raise ParameterError("timestep embedding width must be even")
    half = hidden // 2
    dtype = numerics.get_dtype()
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    tt = torch.as_tensor(t, dtype=torch.float64)
    if (tt < 0).any():
        raise ParameterError("timestep must be non-negative")
    args = tt[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1).to(dtype)


@dataclass
class ConditionBundle:
    audio_window: Tensor  # (B, 363)
    audio_hidden: Tensor  # (B, hidden)
    timestep_embed: Tensor  # (B, hidden)

    @property
    def kv_sequence(self) -> Tensor:
        """Two key/value tokens per sample: (B, 2, hidden)."""
        return torch.stack([self.audio_hidden, self.timestep_embed], dim=1)


# ---------------------------------------------------------------- geometry


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain), collinear points dropped."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError("points must be an (n, 2) array")
    if len(pts) < 3:
        raise GeometryError(f"need at least 3 points, got {len(pts)}")
    order = sorted(set(map(tuple, pts)))
    lower: list[np.ndarray] = []
    for p in order:
        p = np.asarray(p)
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in reversed(order):
        p = np.asarray(p)
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise GeometryError("points are collinear")
    return hull


def convex_hull_mask(landmarks, H: int, W: int) -> np.ndarray:
    """Binary (H, W) mask: 1 where the pixel centre lies inside or on the hull."""
    hull = convex_hull(landmarks)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    inside = np.ones((H, W), dtype=bool)
    # tolerance only absorbs rounding for centres exactly on an edge
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        ex, ey = b - a
        scale = math.hypot(ex, ey)
        side = ex * (ys - a[1]) - ey * (xs - a[0])
        inside &= side >= -1e-9 * scale
    return inside.astype(np.float64)


def gaussian_kernel1d(kernel_size: int, sigma: float) -> np.ndarray:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ParameterError(f"kernel size must be a positive odd integer, got {kernel_size}")
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    r = kernel_size // 2
    k = np.exp(-0.5 * (np.arange(-r, r + 1, dtype=np.float64) / sigma) ** 2)
    return k / k.sum()


def gaussian_kernel(kernel_size: int = 27, sigma: float = 5.0) -> np.ndarray:
    k = gaussian_kernel1d(kernel_size, sigma)
    return np.outer(k, k)


def gaussian_blend(mask: np.ndarray, kernel_size: int = 27, sigma: float = 5.0) -> np.ndarray:
    """Smooth a binary mask with a normalised Gaussian (reflective borders) into an alpha map."""
    k = gaussian_kernel1d(kernel_size, sigma)
    m = np.asarray(mask, dtype=np.float64)
    alpha = ndimage.correlate1d(m, k, axis=0, mode="reflect")
    alpha = ndimage.correlate1d(alpha, k, axis=1, mode="reflect")
    # snap rounding residue so fully covered / uncovered pixels are exactly 1 / 0
    alpha[np.abs(alpha - 1.0) < 1e-12] = 1.0
    alpha[alpha < 1e-12] = 0.0
    return np.clip(alpha, 0.0, 1.0)


@dataclass(frozen=True)
class MaskSpec:
    kernel_size: int = 27
    sigma: float = 5.0

    def alpha_map(self, landmarks, H: int, W: int) -> np.ndarray:
        return gaussian_blend(convex_hull_mask(landmarks, H, W), self.kernel_size, self.sigma)


def apply_mask(image, alpha_map, fill: float = MASK_FILL):
    """Blank the masked region: ``image * (1 - alpha) + fill * alpha``.

    Works for (H, W, C) images with an (H, W) alpha map; numpy or torch.
    """
    if tuple(image.shape[:2]) != tuple(alpha_map.shape[:2]):
        raise DimensionError(f"image {tuple(image.shape)} and alpha map {tuple(alpha_map.shape)} differ")
    a = alpha_map[..., None] if alpha_map.ndim == image.ndim - 1 else alpha_map
    return image * (1.0 - a) + fill * a


def jitter_landmarks(landmarks, max_shift: int, rng: np.random.Generator, H: int | None = None, W: int | None = None):
    """Shift all landmarks by one integer offset from [-max_shift, max_shift]^2, clamped to the frame."""
    if max_shift < 0:
        raise ParameterError("max_shift must be >= 0")
    pts = np.asarray(landmarks, dtype=np.float64)
    if max_shift == 0:
        return pts.copy()
    offset = rng.integers(-max_shift, max_shift + 1, size=2)
    out = pts + offset
    if W is not None:
        out[:, 0] = np.clip(out[:, 0], 0, W - 1)
    if H is not None:
        out[:, 1] = np.clip(out[:, 1], 0, H - 1)
    return out


def sample_reference(frame_index: int, num_frames: int, rng: np.random.Generator, min_gap: int = 60) -> int:
    """Uniform index ``j`` with ``|j - frame_index| >= min_gap``."""
    if num_frames <= min_gap:
        raise ParameterError(f"video of {num_frames} frames is too short for a {min_gap}-frame reference gap")
    if not (0 <= frame_index < num_frames):
        raise ParameterError(f"frame index {frame_index} outside [0, {num_frames})")
    below = frame_index - min_gap + 1  # j in [0, below)
    above = frame_index + min_gap  # j in [above, num_frames)
    n_below = max(below, 0)
    n_above = max(num_frames - above, 0)
    total = n_below + n_above
    if total == 0:
        raise ParameterError(f"no frame is {min_gap} frames away from {frame_index}")
    k = int(rng.integers(total))
    return k if k < n_below else above + (k - n_below)
