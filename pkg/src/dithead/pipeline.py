"""Two-stage training and evolving-reference video synthesis.

Stage 1 trains two VQ autoencoders: one on clean frames (its encoder gives z
and z_r, its decoder produces the final output) and one on masked frames (its
encoder gives z_m).  Stage 2 freezes both and trains the transformer to predict
the noise added to z given (z_r, z_m, audio window, t).

Synthesis starts every frame from Gaussian noise, denoises with DDIM, decodes
through the clean decoder and pastes the result into the source frame through
the blended mask.  Frame 0 takes its reference latent from a real frame; every
later frame uses the latent generated for the frame before it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from . import checkpoint, numerics
from .conditioning import MaskSpec, apply_mask, jitter_landmarks, sample_reference, window_audio
from .config import RunConfig
from .diffusion import NoiseSchedule, SamplerConfig, ddim_step, ddpm_step, make_linear_schedule, q_sample
from .dit import DiT, DiTConfig
from .errors import ParameterError, StateError
from .synthdata import AudioTrack, VideoClip, make_identity, render_clip, synth_audio
from .vqae import VQAutoencoder, VqaeConfig, decode, encode, freeze, quantize, vqae_loss

log = logging.getLogger(__name__)

Tensor = torch.Tensor

STAGE1 = "vqae"
STAGE2 = "dit"


# ------------------------------------------------------------------ dataset


def identity_seed(dataset_seed: int, k: int) -> int:
    return dataset_seed * 1000 + k


@dataclass
class Dataset:
    train: list[VideoClip]
    heldout: list[VideoClip]
    mask: MaskSpec
    jitter_px: int = 0
    min_gap: int = 60
    _alpha_cache: dict = field(default_factory=dict, repr=False)

    def alpha(self, landmarks: np.ndarray, H: int, W: int) -> np.ndarray:
        key = (np.round(landmarks, 6).tobytes(), H, W)
        if key not in self._alpha_cache:
            self._alpha_cache[key] = self.mask.alpha_map(landmarks, H, W)
        return self._alpha_cache[key]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.train[0].frames.shape[1:3]


def build_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.dataset
    clips = []
    for k in range(d.num_train_identities + d.num_heldout_identities):
        seed = identity_seed(d.seed, k)
        ident = make_identity(seed, d.image_height_px, d.image_width_px)
        audio = synth_audio(seed, d.frames_per_identity, sample_rate=d.audio_sample_rate_hz, fps=d.fps)
        clips.append(render_clip(ident, audio, name=f"id_{k:02d}"))
    n = d.num_train_identities
    return Dataset(
        train=clips[:n],
        heldout=clips[n:],
        mask=MaskSpec(cfg.mask.kernel_px, cfg.mask.sigma_px),
        jitter_px=cfg.mask.jitter_max_px,
        min_gap=cfg.mask.reference_min_gap_frames,
    )


@dataclass
class DitBatch:
    x: Tensor  # (B, H, W, 3) ground truth
    x_m: Tensor  # masked ground truth
    x_r: Tensor  # reference frame
    audio: Tensor  # (B, 363)


def _pick_frames(clips: list[VideoClip], rng: np.random.Generator, batch: int) -> list[tuple[VideoClip, int]]:
    sizes = np.array([c.num_frames for c in clips])
    flat = rng.integers(sizes.sum(), size=batch)
    bounds = np.cumsum(sizes)
    out = []
    for g in flat:
        ci = int(np.searchsorted(bounds, g, side="right"))
        out.append((clips[ci], int(g - (bounds[ci] - sizes[ci]))))
    return out


def masked_frame(dataset: Dataset, clip: VideoClip, i: int, rng: np.random.Generator | None) -> np.ndarray:
    H, W = clip.frames.shape[1:3]
    lm = clip.landmarks[i]
    if rng is not None:
        lm = jitter_landmarks(lm, dataset.jitter_px, rng, H, W)
    return apply_mask(clip.frames[i], dataset.alpha(lm, H, W))


def sample_dit_batch(dataset: Dataset, rng: np.random.Generator, batch: int) -> DitBatch:
    xs, xms, xrs, auds = [], [], [], []
    for clip, i in _pick_frames(dataset.train, rng, batch):
        j = sample_reference(i, clip.num_frames, rng, dataset.min_gap)
        xs.append(clip.frames[i])
        xms.append(masked_frame(dataset, clip, i, rng))
        xrs.append(clip.frames[j])
        auds.append(window_audio(clip.audio, i))
    dt = numerics.get_dtype()
    return DitBatch(*(torch.as_tensor(np.stack(a), dtype=dt) for a in (xs, xms, xrs, auds)))


# ------------------------------------------------------------- train state


@dataclass
class TrainState:
    stage: str
    config: RunConfig
    modules: dict[str, nn.Module]
    optimizers: dict[str, torch.optim.Optimizer]
    rng: np.random.Generator
    torch_gen: torch.Generator
    step: int = 0
    loss_history: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def record(self, loss: float) -> None:
        self.step += 1
        self.loss_history.append(float(loss))


def _trainable_names(module: nn.Module) -> list[str]:
    return [n for n, p in module.named_parameters() if p.requires_grad]


def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, mod in state.modules.items():
        for k, v in mod.state_dict().items():
            arrays[f"{name}/{k}"] = v
    for name, opt in state.optimizers.items():
        names = _trainable_names(state.modules[name])
        for idx, st in opt.state_dict()["state"].items():
            for k, v in st.items():
                arrays[f"optim/{name}/{names[idx]}/{k}"] = torch.as_tensor(v)
    arrays["rng/torch"] = state.torch_gen.get_state()
    arrays["loss_history"] = np.asarray(state.loss_history, dtype=np.float64)
    return arrays


def save_state(state: TrainState, path) -> None:
    meta = {
        "stage": state.stage,
        "step": state.step,
        "config": state.config.to_dict(),
        "rng_numpy": state.rng.bit_generator.state,
        "extra": state.extra,
    }
    checkpoint.save(path, meta, state_arrays(state))


def _load_module(module: nn.Module, prefix: str, arrays: dict) -> None:
    sd = {k[len(prefix) + 1 :]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix + "/")}
    module.load_state_dict(sd)


def _load_optimizer(opt: torch.optim.Optimizer, module: nn.Module, prefix: str, arrays: dict) -> None:
    names = _trainable_names(module)
    sd = opt.state_dict()
    state = {}
    for idx, pname in enumerate(names):
        keys = {k.rsplit("/", 1)[1]: v for k, v in arrays.items() if k.startswith(f"optim/{prefix}/{pname}/")}
        if keys:
            state[idx] = {k: torch.from_numpy(v) for k, v in keys.items()}
    sd["state"] = state
    opt.load_state_dict(sd)


def _restore_common(state: TrainState, meta: dict, arrays: dict) -> TrainState:
    for name, mod in state.modules.items():
        _load_module(mod, name, arrays)
    for name, opt in state.optimizers.items():
        _load_optimizer(opt, state.modules[name], name, arrays)
    state.rng.bit_generator.state = meta["rng_numpy"]
    state.torch_gen.set_state(torch.from_numpy(arrays["rng/torch"]))
    state.step = int(meta["step"])
    state.loss_history = [float(v) for v in arrays["loss_history"]]
    state.extra = dict(meta.get("extra", {}))
    if len(state.loss_history) != state.step:
        raise StateError("checkpoint loss history does not match its step counter")
    return state


def vqae_config(cfg: RunConfig) -> VqaeConfig:
    v = cfg.vqae
    return VqaeConfig(v.downsample_factor, v.codebook_size, v.channels, v.base_channels, v.commitment_beta)


def dit_config(cfg: RunConfig) -> DiTConfig:
    d = cfg.dit
    return DiTConfig(patch_size=d.patch_size, depth=d.depth, heads=d.heads, hidden=d.hidden, mlp_ratio=d.mlp_ratio)


def schedule_from_config(cfg: RunConfig) -> NoiseSchedule:
    s = cfg.schedule
    return make_linear_schedule(s.steps, s.beta_start, s.beta_end)


def _adam(module: nn.Module, lr: float) -> torch.optim.Optimizer:
    return torch.optim.Adam([p for p in module.parameters() if p.requires_grad], lr=lr, betas=(0.9, 0.999))


class LossLog:
    """Appends one tab-separated line per training step."""

    def __init__(self, path, resume_step: int = 0):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if resume_step and self.path.exists():
            # keep the header and exactly one line per completed step
            lines = self.path.read_text().splitlines()[: resume_step + 1]
            self.path.write_text("".join(line + "\n" for line in lines))
        else:
            self.path.write_text("step\tloss\n")

    def __call__(self, step: int, loss: float) -> None:
        with open(self.path, "a") as fh:
            fh.write(f"{step}\t{loss:.8g}\n")


# ----------------------------------------------------------------- stage 1


def init_vqae_state(cfg: RunConfig) -> TrainState:
    tc = cfg.train_vqae
    torch.manual_seed(tc.seed)
    vc = vqae_config(cfg)
    modules = {"ae": VQAutoencoder(vc), "ae_m": VQAutoencoder(vc)}
    opts = {k: _adam(m, tc.learning_rate) for k, m in modules.items()}
    return TrainState(STAGE1, cfg, modules, opts, np.random.default_rng(tc.seed), torch.Generator().manual_seed(tc.seed))


def load_vqae_state(path, cfg: RunConfig | None = None) -> TrainState:
    meta, arrays = checkpoint.load(path)
    if meta.get("stage") != STAGE1:
        raise StateError(f"{path} is not a stage-1 checkpoint")
    from .config import from_dict

    state = init_vqae_state(cfg or from_dict(meta["config"]))
    return _restore_common(state, meta, arrays)


def augment_colors(image: np.ndarray, rng: np.random.Generator, keep_prob: float = 0.25) -> np.ndarray:
    """Random channel permutation plus per-channel gain and offset, clipped to [-1, 1]."""
    if rng.random() < keep_prob:
        return image
    perm = rng.permutation(3)
    gain = rng.uniform(0.6, 1.4, size=3)
    offset = rng.uniform(-0.5, 0.5, size=3)
    return np.clip(image[..., perm] * gain + offset, -1.0, 1.0).astype(image.dtype)


def train_step_vqae(dataset: Dataset, state: TrainState) -> float:
    tc = state.config.train_vqae
    picks = _pick_frames(dataset.train, state.rng, tc.batch_size)
    dt = numerics.get_dtype()
    xs, xms = [], []
    for c, i in picks:
        frame = c.frames[i]
        if state.config.vqae.color_augment:
            frame = augment_colors(frame, state.rng)
        H, W = frame.shape[:2]
        lm = jitter_landmarks(c.landmarks[i], dataset.jitter_px, state.rng, H, W)
        xs.append(frame)
        xms.append(apply_mask(frame, dataset.alpha(lm, H, W)))
    x = torch.as_tensor(np.stack(xs), dtype=dt)
    x_m = torch.as_tensor(np.stack(xms), dtype=dt)
    total = 0.0
    for name, images in (("ae", x), ("ae_m", x_m)):
        model, opt = state.modules[name], state.optimizers[name]
        model.train()
        rec, q = model(images)
        loss = vqae_loss(images, rec, q.pre_quant, model.codebook[q.indices], model.cfg.commitment)
        opt.zero_grad()
        loss.total.backward()
        opt.step()
        model.record_usage(q.indices)
        total += float(loss.total.detach())
        if tc.reseed_every_steps and (state.step + 1) % tc.reseed_every_steps == 0:
            n = model.reseed_dead_codes(q.pre_quant, state.torch_gen)
            if n:
                log.debug("%s: reseeded %d dead codes", name, n)
    state.record(total)
    return total


def _run_loop(
    state: TrainState,
    step_fn: Callable[[], float],
    total_steps: int,
    every: int,
    run_dir: Path | None,
    ckpt_name: str,
    stop_at: int | None,
    logger: LossLog | None,
) -> TrainState:
    end = total_steps if stop_at is None else min(stop_at, total_steps)
    while state.step < end:
        loss = step_fn()
        if logger is not None:
            logger(state.step, loss)
        if state.step % 100 == 0:
            log.info("%s step %d loss %.5f", state.stage, state.step, loss)
        if run_dir is not None and every and state.step % every == 0:
            save_state(state, run_dir / ckpt_name)
    if run_dir is not None:
        save_state(state, run_dir / ckpt_name)
    return state


def train_vqae(
    dataset: Dataset,
    cfg: RunConfig,
    run_dir=None,
    resume=None,
    stop_at: int | None = None,
) -> TrainState:
    """Stage 1. ``resume`` continues from a checkpoint; ``stop_at`` halts early (simulated interruption)."""
    state = load_vqae_state(resume, cfg) if resume else init_vqae_state(cfg)
    run_dir = Path(run_dir) if run_dir is not None else None
    logger = LossLog(run_dir / "vqae_loss.tsv", state.step) if run_dir is not None else None
    return _run_loop(
        state,
        lambda: train_step_vqae(dataset, state),
        cfg.train_vqae.steps,
        cfg.train_vqae.checkpoint_every_steps,
        run_dir,
        "vqae.ckpt",
        stop_at,
        logger,
    )


# ----------------------------------------------------------------- stage 2


@dataclass
class Models:
    ae: VQAutoencoder
    ae_m: VQAutoencoder
    dit: DiT
    schedule: NoiseSchedule
    latent_scale: float = 1.0


def frozen_autoencoders(stage1: TrainState | str | Path) -> tuple[VQAutoencoder, VQAutoencoder]:
    if isinstance(stage1, (str, Path)):
        if not Path(stage1).exists():
            raise StateError(f"stage-2 training needs a stage-1 checkpoint; {stage1} does not exist")
        stage1 = load_vqae_state(stage1)
    if stage1 is None or stage1.stage != STAGE1:
        raise StateError("stage-2 training needs a stage-1 checkpoint")
    return freeze(stage1.modules["ae"]), freeze(stage1.modules["ae_m"])


@torch.no_grad()
def estimate_latent_scale(ae: VQAutoencoder, dataset: Dataset, stride: int = 5) -> float:
    """1 / std of clean-frame latents, so the diffusion operates near unit variance."""
    frames = np.concatenate([c.frames[::stride] for c in dataset.train])
    z = encode(torch.as_tensor(frames, dtype=numerics.get_dtype()), ae).latent
    return float(1.0 / z.std())


def init_dit_state(cfg: RunConfig, ae: VQAutoencoder, ae_m: VQAutoencoder, latent_scale: float) -> TrainState:
    tc = cfg.train_dit
    torch.manual_seed(tc.seed)
    dit = DiT(dit_config(cfg))
    state = TrainState(
        STAGE2,
        cfg,
        {"dit": dit, "ae": ae, "ae_m": ae_m},
        {"dit": _adam(dit, tc.learning_rate)},
        np.random.default_rng(tc.seed),
        torch.Generator().manual_seed(tc.seed),
        extra={"latent_scale": latent_scale},
    )
    return state


def models_from_state(state: TrainState) -> Models:
    if state.stage != STAGE2:
        raise StateError("models are assembled from a stage-2 state")
    return Models(
        state.modules["ae"],
        state.modules["ae_m"],
        state.modules["dit"],
        schedule_from_config(state.config),
        float(state.extra["latent_scale"]),
    )


def load_dit_state(path, cfg: RunConfig | None = None) -> TrainState:
    meta, arrays = checkpoint.load(path)
    if meta.get("stage") != STAGE2:
        raise StateError(f"{path} is not a stage-2 checkpoint")
    from .config import from_dict

    cfg = cfg or from_dict(meta["config"])
    vc = vqae_config(cfg)
    ae, ae_m = VQAutoencoder(vc), VQAutoencoder(vc)
    _load_module(ae, "ae", arrays)
    _load_module(ae_m, "ae_m", arrays)
    state = init_dit_state(cfg, freeze(ae), freeze(ae_m), float(meta["extra"]["latent_scale"]))
    return _restore_common(state, meta, arrays)


def load_models(path) -> Models:
    return models_from_state(load_dit_state(path))


def assert_frozen(state: TrainState) -> None:
    for name in ("ae", "ae_m"):
        mod = state.modules[name]
        if any(p.requires_grad for p in mod.parameters()):
            raise StateError(f"{name} parameters must be frozen during stage 2")
        if name in state.optimizers:
            raise StateError(f"{name} must not be optimised during stage 2")
    trained = {id(p) for g in state.optimizers["dit"].param_groups for p in g["params"]}
    for name in ("ae", "ae_m"):
        if any(id(p) in trained for p in state.modules[name].parameters()):
            raise StateError(f"{name} parameters appear in the stage-2 optimiser")


@torch.no_grad()
def encode_latents(batch: DitBatch, ae: VQAutoencoder, ae_m: VQAutoencoder, scale: float):
    z0 = encode(batch.x, ae).latent * scale
    z_m = encode(batch.x_m, ae_m).latent * scale
    z_r = encode(batch.x_r, ae).latent * scale
    return z0, z_r, z_m


def train_step_dit(batch: DitBatch, state: TrainState, schedule: NoiseSchedule) -> float:
    """One noise-matching update of the transformer (and its audio projection)."""
    assert_frozen(state)
    if batch.x.shape[0] == 0:
        raise ParameterError("empty batch")
    dit = state.modules["dit"]
    dit.train()
    z0, z_r, z_m = encode_latents(batch, state.modules["ae"], state.modules["ae_m"], state.extra["latent_scale"])
    B = z0.shape[0]
    r = min(state.config.dit.reference_noise_steps, schedule.T)
    if r > 0:
        t_r = torch.randint(0, r + 1, (B,), generator=state.torch_gen)
        z_r = q_sample(z_r, t_r, torch.randn(z_r.shape, generator=state.torch_gen, dtype=z_r.dtype), schedule)
    t = torch.randint(1, schedule.T + 1, (B,), generator=state.torch_gen)
    eps = torch.randn(z0.shape, generator=state.torch_gen, dtype=z0.dtype)
    z_t = q_sample(z0, t, eps, schedule)
    pred = dit(z_t, z_r, z_m, batch.audio, t)
    loss = ((eps - pred) ** 2).mean()
    opt = state.optimizers["dit"]
    opt.zero_grad()
    loss.backward()
    opt.step()
    value = float(loss.detach())
    state.record(value)
    return value


def train_dit(
    dataset: Dataset,
    cfg: RunConfig,
    stage1=None,
    run_dir=None,
    resume=None,
    stop_at: int | None = None,
) -> TrainState:
    """Stage 2 on top of a stage-1 checkpoint (path or state); autoencoders stay frozen."""
    if resume:
        state = load_dit_state(resume, cfg)
    else:
        if stage1 is None:
            raise StateError("stage-2 training needs a stage-1 checkpoint")
        ae, ae_m = frozen_autoencoders(stage1)
        state = init_dit_state(cfg, ae, ae_m, estimate_latent_scale(ae, dataset))
    schedule = schedule_from_config(cfg)
    run_dir = Path(run_dir) if run_dir is not None else None
    logger = LossLog(run_dir / "dit_loss.tsv", state.step) if run_dir is not None else None
    tc = cfg.train_dit
    return _run_loop(
        state,
        lambda: train_step_dit(sample_dit_batch(dataset, state.rng, tc.batch_size), state, schedule),
        tc.steps,
        tc.checkpoint_every_steps,
        run_dir,
        "dit.ckpt",
        stop_at,
        logger,
    )


# ---------------------------------------------------------------- synthesis


@dataclass
class SynthesisJob:
    source_frames: np.ndarray  # (F, H, W, 3): frames whose mouth region is replaced
    landmarks: np.ndarray  # (F, 12, 2)
    reference_frame: np.ndarray  # (H, W, 3) real reference for frame 0
    audio: AudioTrack  # driving audio
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    mask: MaskSpec = field(default_factory=MaskSpec)
    seed: int = 0
    evolving_reference: str = "final"

    def __post_init__(self):
        if self.audio.num_frames != len(self.source_frames):
            raise ParameterError(f"audio has {self.audio.num_frames} frames, video has {len(self.source_frames)}")
        if len(self.landmarks) != len(self.source_frames):
            raise ParameterError("one landmark set per source frame is required")
        if self.evolving_reference not in ("final", "noisy"):
            raise ParameterError("evolving_reference must be 'final' or 'noisy'")

    @property
    def num_frames(self) -> int:
        return len(self.source_frames)

    def alpha(self, i: int) -> np.ndarray:
        H, W = self.source_frames.shape[1:3]
        return self.mask.alpha_map(self.landmarks[i], H, W)

    @classmethod
    def from_clip(cls, clip: VideoClip, audio: AudioTrack, reference_index: int, mask: MaskSpec, **kw) -> "SynthesisJob":
        return cls(clip.frames, clip.landmarks, clip.frames[reference_index], audio, mask=mask, **kw)


@dataclass
class FrameResult:
    image: np.ndarray  # decoded face, (H, W, 3)
    latent: Tensor  # final generated latent (scaled), (h, w, 3)
    reference_latent: Tensor  # z_r used at the first denoising step
    trajectory: list[Tensor] = field(default_factory=list, repr=False)


def frame_generator(seed: int, frame_index: int) -> torch.Generator:
    state = np.random.SeedSequence([seed, frame_index]).generate_state(1, dtype=np.uint64)[0]
    return torch.Generator().manual_seed(int(state) & ((1 << 63) - 1))


@torch.no_grad()
def synthesize_frame(
    job: SynthesisJob,
    frame_index: int,
    z_prev_ref: Tensor | None,
    models: Models,
    prev_trajectory: list[Tensor] | None = None,
) -> FrameResult:
    """Denoise one frame from pure noise; returns the decoded face and its latent."""
    s = models.latent_scale
    dt = numerics.get_dtype()
    if frame_index == 0:
        z_r = encode(torch.as_tensor(job.reference_frame, dtype=dt), models.ae).latent * s
    elif z_prev_ref is None:
        raise ParameterError(f"frame {frame_index} needs the previous frame's latent as reference")
    else:
        z_r = z_prev_ref
    x_m = apply_mask(job.source_frames[frame_index], job.alpha(frame_index))
    z_m = encode(torch.as_tensor(x_m, dtype=dt), models.ae_m).latent * s
    window = torch.as_tensor(window_audio(job.audio, frame_index), dtype=dt)[None]
    gen = frame_generator(job.seed, frame_index)
    z = torch.randn((1,) + tuple(z_m.shape), generator=gen, dtype=dt)
    steps = job.sampler.timesteps(models.schedule)
    noisy_refs = job.evolving_reference == "noisy" and frame_index > 0 and prev_trajectory is not None
    trajectory = []
    first_ref = z_r
    for k, t in enumerate(steps):
        ref = prev_trajectory[k] if noisy_refs else z_r
        if k == 0:
            first_ref = ref
        trajectory.append(z[0].clone())
        eps = models.dit(z, ref[None], z_m[None], window, t)
        if job.sampler.kind == "ddim":
            t_prev = steps[k + 1] if k + 1 < len(steps) else 0
            z = ddim_step(z, eps, t, t_prev, models.schedule, job.sampler.eta, generator=gen)
        else:
            noise = torch.randn(z.shape, generator=gen, dtype=dt) if t > 1 else None
            z = ddpm_step(z, eps, t, models.schedule, noise)
    # snap onto the codebook: the decoder and the next frame's reference slot only ever saw codebook vectors
    latent = quantize(z[0] / s, models.ae.codebook)[1] * s
    image = decode(latent / s, models.ae).numpy()
    return FrameResult(image, latent, first_ref, trajectory)


def composite(generated: np.ndarray, source: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Generated pixels where alpha > 0 (blended), source pixels untouched elsewhere."""
    a = alpha[..., None]
    blended = (generated * a + source * (1.0 - a)).astype(source.dtype)
    return np.where(a > 0, blended, source)


@dataclass
class SynthesisResult:
    frames: list[np.ndarray]
    faces: list[np.ndarray]
    latents: list[Tensor]
    reference_latents: list[Tensor]


def synthesize_video(job: SynthesisJob, models: Models, progress: Callable[[int], None] | None = None) -> SynthesisResult:
    """Frames are strictly sequential: frame i is conditioned on frame i-1's latent."""
    res = SynthesisResult([], [], [], [])
    prev, prev_traj = None, None
    for i in range(job.num_frames):
        fr = synthesize_frame(job, i, prev, models, prev_traj)
        res.faces.append(fr.image)
        res.latents.append(fr.latent)
        res.reference_latents.append(fr.reference_latent)
        res.frames.append(composite(fr.image, job.source_frames[i], job.alpha(i)))
        prev, prev_traj = fr.latent, fr.trajectory
        if progress is not None:
            progress(i)
    return res


def interpolate_2x(frames) -> list[np.ndarray]:
    """Insert the midpoint image between consecutive frames (2n - 1 outputs)."""
    frames = list(frames)
    if len(frames) < 2:
        raise ParameterError("interpolation needs at least 2 frames")
    out = [frames[0]]
    for a, b in zip(frames[:-1], frames[1:]):
        if np.issubdtype(np.asarray(a).dtype, np.integer):
            a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
        out.append(0.5 * (a + b))
        out.append(b)
    return out
