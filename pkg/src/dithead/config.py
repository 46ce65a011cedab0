"""Run configuration: a sectioned key = value text file.

Keys carry their units (``_px``, ``_hz``, ``_steps``).  Every section maps to a
dataclass; unknown keys, unparsable values and cross-field divisibility
violations raise ``ValidationError`` naming the dotted field path.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError


@dataclass
class DatasetConfig:
    seed: int = 0
    num_train_identities: int = 8
    num_heldout_identities: int = 2
    frames_per_identity: int = 250
    image_height_px: int = 64
    image_width_px: int = 64
    fps: int = 25
    audio_sample_rate_hz: int = 16000


@dataclass
class MaskConfig:
    # 27 px / sigma 5 at 256 px, scaled to the 64 px desk resolution
    kernel_px: int = 7
    sigma_px: float = 1.25
    jitter_max_px: int = 2
    reference_min_gap_frames: int = 60


@dataclass
class VqaeSection:
    downsample_factor: int = 4
    codebook_size: int = 512
    channels: int = 48
    base_channels: int = 24
    commitment_beta: float = 0.25
    # random per-sample colour transforms in stage 1; 8 identities alone do not span colour space
    color_augment: bool = True


@dataclass
class DitSection:
    patch_size: int = 2
    depth: int = 6
    heads: int = 8
    hidden: int = 256
    mlp_ratio: int = 4
    # training-time corruption of z_r by a forward-process draw at a step in [0, this];
    # makes the denoiser tolerate the imperfect generated references of evolving inference
    reference_noise_steps: int = 200


@dataclass
class ScheduleConfig:
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class SamplerSection:
    kind: str = "ddim"
    steps: int = 250
    eta: float = 0.0
    evolving_reference: str = "final"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    steps: int = 20000
    checkpoint_every_steps: int = 1000
    reseed_every_steps: int = 500
    seed: int = 0


@dataclass
class PathsConfig:
    data_dir: str = "data"
    run_dir: str = "runs"


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    vqae: VqaeSection = field(default_factory=VqaeSection)
    dit: DitSection = field(default_factory=DitSection)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    train_vqae: TrainConfig = field(default_factory=TrainConfig)
    train_dit: TrainConfig = field(default_factory=lambda: TrainConfig(steps=40000))
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


def _positive(cfg: RunConfig, path: str) -> None:
    section, key = path.split(".")
    if getattr(getattr(cfg, section), key) <= 0:
        raise ValidationError(path, "must be positive")


def validate(cfg: RunConfig) -> RunConfig:
    for path in (
        "dataset.image_height_px",
        "dataset.image_width_px",
        "dataset.frames_per_identity",
        "dataset.fps",
        "dataset.audio_sample_rate_hz",
        "vqae.downsample_factor",
        "vqae.codebook_size",
        "vqae.channels",
        "vqae.base_channels",
        "dit.patch_size",
        "dit.depth",
        "dit.heads",
        "dit.hidden",
        "schedule.steps",
        "sampler.steps",
        "mask.kernel_px",
        "mask.sigma_px",
        "train_vqae.learning_rate",
        "train_vqae.batch_size",
        "train_dit.learning_rate",
        "train_dit.batch_size",
    ):
        _positive(cfg, path)
    d, v, t = cfg.dataset, cfg.vqae, cfg.dit
    f = v.downsample_factor
    if f & (f - 1):
        raise ValidationError("vqae.downsample_factor", f"must be a power of two, got {f}")
    if d.image_height_px % f:
        raise ValidationError("dataset.image_height_px", f"{d.image_height_px} not divisible by downsample factor {f}")
    if d.image_width_px % f:
        raise ValidationError("dataset.image_width_px", f"{d.image_width_px} not divisible by downsample factor {f}")
    h, w = d.image_height_px // f, d.image_width_px // f
    if h % t.patch_size or w % t.patch_size:
        raise ValidationError("dit.patch_size", f"latent grid {h}x{w} not divisible by patch size {t.patch_size}")
    if t.hidden % t.heads:
        raise ValidationError("dit.heads", f"hidden {t.hidden} not divisible by {t.heads} heads")
    if t.hidden % 4:
        raise ValidationError("dit.hidden", "must be divisible by 4")
    if cfg.mask.kernel_px % 2 == 0:
        raise ValidationError("mask.kernel_px", "must be odd")
    if t.reference_noise_steps < 0:
        raise ValidationError("dit.reference_noise_steps", "must be >= 0")
    if cfg.mask.jitter_max_px < 0:
        raise ValidationError("mask.jitter_max_px", "must be >= 0")
    if d.frames_per_identity <= cfg.mask.reference_min_gap_frames:
        raise ValidationError("dataset.frames_per_identity", "must exceed mask.reference_min_gap_frames")
    if d.audio_sample_rate_hz % d.fps:
        raise ValidationError("dataset.audio_sample_rate_hz", "must be a multiple of dataset.fps")
    s = cfg.schedule
    if not (0 < s.beta_start <= s.beta_end < 1):
        raise ValidationError("schedule.beta_start", "need 0 < beta_start <= beta_end < 1")
    if cfg.sampler.kind not in ("ddim", "ddpm"):
        raise ValidationError("sampler.kind", "must be ddim or ddpm")
    if cfg.sampler.steps > s.steps:
        raise ValidationError("sampler.steps", f"{cfg.sampler.steps} exceeds schedule.steps {s.steps}")
    if not (0.0 <= cfg.sampler.eta <= 1.0):
        raise ValidationError("sampler.eta", "must lie in [0, 1]")
    if cfg.sampler.evolving_reference not in ("final", "noisy"):
        raise ValidationError("sampler.evolving_reference", "must be final or noisy")
    return cfg


def _parse(value: str, typ, path: str):
    try:
        if typ is bool:
            return value.strip().lower() in ("1", "true", "yes", "on")
        return typ(value.strip())
    except ValueError as exc:
        raise ValidationError(path, f"cannot parse {value!r} as {typ.__name__}") from exc


def from_dict(data: dict) -> RunConfig:
    cfg = RunConfig()
    for section, values in data.items():
        if not hasattr(cfg, section):
            raise ValidationError(section, "unknown section")
        target = getattr(cfg, section)
        types = {f.name: f.type for f in dataclasses.fields(target)}
        for key, value in values.items():
            path = f"{section}.{key}"
            if key not in types:
                raise ValidationError(path, "unknown key")
            typ = {"int": int, "float": float, "str": str, "bool": bool}[types[key]]
            setattr(target, key, _parse(str(value), typ, path) if isinstance(value, str) else typ(value))
    return validate(cfg)


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError("<file>", str(exc)) from exc
    return from_dict({s: dict(parser.items(s)) for s in parser.sections()})


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def dumps(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in cfg.to_dict().items():
        parser[section] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
