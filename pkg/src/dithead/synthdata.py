"""Procedural talking heads with a known audio -> mouth relation.

Each identity is a flat-shaded face (head ellipse, hair cap, eyes) whose mouth
is a dark ellipse with vertical opening ``e * max_opening``, where ``e`` is the
per-frame audio envelope.  Audio is a harmonic carrier gated by that envelope;
feature 0 of every frame is ``e`` itself and features 1..32 are band
amplitudes of the frame's waveform.

Images are float32 (H, W, 3) in [-1, 1], anti-aliased by 4x4 supersampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .conditioning import (
    FEATURE_DIM,
    FPS,
    SAMPLE_RATE,
    AudioTrack,
    MaskSpec,
    apply_mask,
    jitter_landmarks,
    sample_reference,
    window_audio,
)
from .errors import ParameterError

MOUTH_COLOR = np.array([-0.55, -0.85, -0.8])
NUM_LANDMARKS = 12
SUPERSAMPLE = 4


def luminance(image: np.ndarray) -> np.ndarray:
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


MOUTH_LUMA = float(luminance(MOUTH_COLOR))


@dataclass(frozen=True)
class IdentitySpec:
    seed: int
    height: int
    width: int
    face_color: tuple[float, float, float]
    background: tuple[float, float, float]
    hair_color: tuple[float, float, float]
    eye_color: tuple[float, float, float]
    head_center: tuple[float, float]
    head_axes: tuple[float, float]
    eye_positions: tuple[tuple[float, float], tuple[float, float]]
    eye_radius: float
    mouth_center: tuple[float, float]
    mouth_half_width: float
    max_opening: float
    hull_margin: float

    @property
    def scale(self) -> float:
        return self.height / 64.0


def make_identity(seed: int, height: int = 64, width: int = 64) -> IdentitySpec:
    rng = np.random.default_rng([seed, 0x1D])
    s = height / 64.0
    face = (rng.uniform(0.25, 0.85), rng.uniform(-0.05, 0.55), rng.uniform(-0.45, 0.3))
    bg_level = rng.uniform(-0.5, 0.4)
    background = tuple(np.clip(bg_level + rng.uniform(-0.35, 0.35, size=3), -1, 1))
    hair = tuple(rng.uniform(-0.95, 0.1, size=3))
    eye = tuple(rng.uniform(-0.95, -0.5, size=3))
    cx = width / 2.0 + float(rng.integers(-2, 3)) * s
    cy = height / 2.0 + rng.uniform(-2.0, 1.0) * s
    ax = rng.uniform(0.31, 0.36) * width
    ay = rng.uniform(0.39, 0.44) * height
    eye_dx = rng.uniform(0.34, 0.42) * ax
    eye_y = cy - rng.uniform(0.18, 0.26) * ay
    mouth = (cx, cy + rng.uniform(0.40, 0.45) * ay)
    return IdentitySpec(
        seed=seed,
        height=height,
        width=width,
        face_color=tuple(float(v) for v in face),
        background=tuple(float(v) for v in background),
        hair_color=tuple(float(v) for v in hair),
        eye_color=tuple(float(v) for v in eye),
        head_center=(float(cx), float(cy)),
        head_axes=(float(ax), float(ay)),
        eye_positions=((float(cx - eye_dx), float(eye_y)), (float(cx + eye_dx), float(eye_y))),
        eye_radius=float(rng.uniform(0.05, 0.065) * width),
        mouth_center=(float(mouth[0]), float(mouth[1])),
        mouth_half_width=float(rng.uniform(0.10, 0.14) * width),
        max_opening=float(rng.uniform(0.10, 0.14) * height),
        hull_margin=7.0 * s,
    )


def mouth_landmarks(identity: IdentitySpec) -> np.ndarray:
    """12 points on the jaw/mouth contour enclosing the fully open mouth.

    The contour does not move with the opening, so the mask carries no lip state.
    """
    mx, my = identity.mouth_center
    a = identity.mouth_half_width + identity.hull_margin
    b = identity.max_opening / 2.0 + identity.hull_margin
    theta = 2 * np.pi * (np.arange(NUM_LANDMARKS) + 0.5) / NUM_LANDMARKS
    pts = np.stack([mx + a * np.cos(theta), my + b * np.sin(theta)], axis=1)
    pts[:, 0] = np.clip(pts[:, 0], 0, identity.width - 1)
    pts[:, 1] = np.clip(pts[:, 1], 0, identity.height - 1)
    return pts


def _sample_grid(H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    offs = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    ys = (np.arange(H)[:, None] + offs[None, :]).reshape(-1)
    xs = (np.arange(W)[:, None] + offs[None, :]).reshape(-1)
    return np.meshgrid(ys, xs, indexing="ij")


def _in_ellipse(xx, yy, center, ax, ay):
    if ax <= 0 or ay <= 0:
        return np.zeros_like(xx, dtype=bool)
    # a vanishing axis overflows to inf, which correctly tests as outside
    with np.errstate(over="ignore"):
        return ((xx - center[0]) / ax) ** 2 + ((yy - center[1]) / ay) ** 2 <= 1.0


def render_frame(identity: IdentitySpec, envelope_value: float) -> tuple[np.ndarray, np.ndarray]:
    """Render one frame at mouth opening ``envelope_value * max_opening``; returns (image, landmarks)."""
    e = float(envelope_value)
    if not (0.0 <= e <= 1.0):
        raise ParameterError(f"envelope value must lie in [0, 1], got {e}")
    H, W = identity.height, identity.width
    yy, xx = _sample_grid(H, W)
    img = np.empty(yy.shape + (3,), dtype=np.float64)
    img[:] = identity.background
    head = _in_ellipse(xx, yy, identity.head_center, *identity.head_axes)
    img[head] = identity.face_color
    hair = head & (yy < identity.head_center[1] - 0.55 * identity.head_axes[1])
    img[hair] = identity.hair_color
    for eye in identity.eye_positions:
        img[_in_ellipse(xx, yy, eye, identity.eye_radius, identity.eye_radius)] = identity.eye_color
    opening = e * identity.max_opening
    img[_in_ellipse(xx, yy, identity.mouth_center, identity.mouth_half_width, opening / 2.0)] = MOUTH_COLOR
    img = img.reshape(H, SUPERSAMPLE, W, SUPERSAMPLE, 3).mean(axis=(1, 3))
    return img.astype(np.float32), mouth_landmarks(identity)


def mouth_opening(identity: IdentitySpec, envelope_value: float) -> float:
    return float(envelope_value) * identity.max_opening


def measure_mouth_opening(image: np.ndarray, mouth_center, search_half_height: float) -> float:
    """Pixel scan: summed darkness along the mouth's centre column.

    Each pixel contributes ``clip((skin - luma) / (skin - mouth_luma), 0, 1)``,
    where ``skin`` is the luma at the two ends of the search window.
    """
    img = np.asarray(image, dtype=np.float64)
    H = img.shape[0]
    col = int(round(mouth_center[0]))
    r0 = max(int(np.floor(mouth_center[1] - search_half_height)), 0)
    r1 = min(int(np.ceil(mouth_center[1] + search_half_height)), H - 1)
    luma = luminance(img[r0 : r1 + 1, col])
    skin = 0.5 * (luma[0] + luma[-1])
    span = skin - MOUTH_LUMA
    if span <= 1e-6:
        return 0.0
    return float(np.clip((skin - luma) / span, 0.0, 1.0).sum())


def measure_identity_opening(image: np.ndarray, identity: IdentitySpec) -> float:
    return measure_mouth_opening(image, identity.mouth_center, identity.max_opening / 2.0 + 2.0 * identity.scale)


# ------------------------------------------------------------------ audio


def synth_envelope(rng: np.random.Generator, num_frames: int) -> np.ndarray:
    pad = 16
    g = gaussian_filter1d(rng.standard_normal(num_frames + 2 * pad), sigma=1.5)[pad : pad + num_frames]
    g = g / (g.std() + 1e-12) if num_frames > 1 else g
    return np.clip(0.5 + 0.38 * g, 0.0, 1.0)


def synth_audio(
    seed: int,
    num_frames: int,
    envelope: np.ndarray | None = None,
    sample_rate: int = SAMPLE_RATE,
    fps: int = FPS,
    feature_dim: int = FEATURE_DIM,
) -> AudioTrack:
    """Envelope-gated harmonic waveform and its per-frame features.

    Within frame ``i`` the waveform is ``e(i) * carrier``; feature 0 is ``e(i)``
    and the remaining ``feature_dim - 1`` columns are band RMS amplitudes.
    """
    if num_frames < 1:
        raise ParameterError("num_frames must be >= 1")
    rng = np.random.default_rng([seed, 0xA0D10])
    env = synth_envelope(rng, num_frames) if envelope is None else np.asarray(envelope, dtype=np.float64)
    if env.shape != (num_frames,) or env.min() < 0 or env.max() > 1:
        raise ParameterError("envelope must have one value in [0, 1] per frame")
    spf = sample_rate // fps
    n = num_frames * spf
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(100.0, 220.0)
    vibrato = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(3, 6) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / sample_rate
    carrier = np.zeros(n)
    for k in range(1, 9):
        carrier += rng.uniform(0.3, 1.0) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    carrier /= np.abs(carrier).max()
    samples = np.repeat(env, spf) * carrier

    frames = samples.reshape(num_frames, spf)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    bands = np.array_split(np.arange(power.shape[1]), feature_dim - 1)
    feats = np.empty((num_frames, feature_dim))
    feats[:, 0] = env
    for j, b in enumerate(bands, start=1):
        feats[:, j] = np.sqrt(power[:, b].sum(axis=1) * 2.0) / spf
    return AudioTrack(samples=samples.astype(np.float32), sample_rate=sample_rate, features=feats.astype(np.float32), fps=fps)


# --------------------------------------------------------------- sequences


@dataclass
class FrameSample:
    x: np.ndarray
    x_m: np.ndarray
    x_r: np.ndarray
    landmarks: np.ndarray
    audio_window: np.ndarray
    frame_index: int
    reference_index: int
    envelope: float


@dataclass
class VideoClip:
    """A rendered identity driven by one audio track."""

    identity: IdentitySpec
    frames: np.ndarray  # (F, H, W, 3) float32
    landmarks: np.ndarray  # (F, 12, 2)
    audio: AudioTrack
    name: str = ""
    alpha_cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def envelope(self) -> np.ndarray:
        return self.audio.envelope


def render_clip(identity: IdentitySpec, audio: AudioTrack, name: str = "") -> VideoClip:
    frames, marks = [], []
    for e in audio.envelope:
        img, lm = render_frame(identity, float(e))
        frames.append(img)
        marks.append(lm)
    return VideoClip(identity, np.stack(frames), np.stack(marks), audio, name=name)


def generate_sequence(
    identity: IdentitySpec,
    num_frames: int,
    rng: np.random.Generator,
    audio: AudioTrack | None = None,
    mask: MaskSpec = MaskSpec(),
    jitter_px: int = 0,
    min_gap: int = 60,
) -> list[FrameSample]:
    """Render a clip and assemble one training tuple per frame."""
    if num_frames <= min_gap:
        raise ParameterError(f"need more than {min_gap} frames, got {num_frames}")
    if audio is None:
        audio = synth_audio(identity.seed, num_frames)
    if audio.num_frames != num_frames:
        raise ParameterError("audio frame count differs from requested frame count")
    clip = render_clip(identity, audio)
    H, W = identity.height, identity.width
    out = []
    for i in range(num_frames):
        lm = jitter_landmarks(clip.landmarks[i], jitter_px, rng, H, W)
        x = clip.frames[i]
        j = sample_reference(i, num_frames, rng, min_gap)
        out.append(
            FrameSample(
                x=x,
                x_m=apply_mask(x, mask.alpha_map(lm, H, W)).astype(np.float32),
                x_r=clip.frames[j],
                landmarks=lm,
                audio_window=window_audio(audio, i),
                frame_index=i,
                reference_index=j,
                envelope=float(audio.envelope[i]),
            )
        )
    return out
