"""Command-line entry point: ``dithead <command> [options]``.

Exit codes: 0 success, 1 other library error, 2 invalid configuration or
inputs, 3 filesystem error, 4 stage-order error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import media, metrics, numerics, pipeline
from .conditioning import MaskSpec
from .diffusion import SamplerConfig
from .errors import DitHeadError, StateError, ValidationError

log = logging.getLogger("dithead")


def _config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    return config_mod.validate(cfg)


def _mask(cfg) -> MaskSpec:
    return MaskSpec(cfg.mask.kernel_px, cfg.mask.sigma_px)


def _load_dataset(cfg, data_dir) -> pipeline.Dataset:
    m = cfg.mask
    return media.read_dataset(data_dir, _mask(cfg), m.jitter_max_px, m.reference_min_gap_frames)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg.dataset.seed = args.seed
    out = Path(args.out or cfg.paths.data_dir)
    ds = pipeline.build_dataset(cfg)
    path = media.write_dataset(out, ds.train, ds.heldout, cfg.dataset.seed, cfg.to_dict())
    print(f"wrote {len(ds.train)} train + {len(ds.heldout)} held-out identities, manifest {path}")
    return 0


def _training_setup(args, section: str):
    cfg = _config(args)
    tc = getattr(cfg, section)
    if args.seed is not None:
        tc.seed = args.seed
    if args.steps is not None:
        tc.steps = args.steps
    config_mod.validate(cfg)
    run_dir = Path(args.out or cfg.paths.run_dir)
    data_dir = args.data or cfg.paths.data_dir
    return cfg, run_dir, data_dir


def cmd_train_vqae(args) -> int:
    cfg, run_dir, data_dir = _training_setup(args, "train_vqae")
    ckpt = run_dir / "vqae.ckpt"
    resume = ckpt if args.resume and ckpt.exists() else None
    ds = _load_dataset(cfg, data_dir)
    state = pipeline.train_vqae(ds, cfg, run_dir=run_dir, resume=resume)
    print(f"stage 1 finished at step {state.step}; checkpoint {ckpt}")
    return 0


def cmd_train_dit(args) -> int:
    cfg, run_dir, data_dir = _training_setup(args, "train_dit")
    stage1 = Path(args.vqae) if args.vqae else run_dir / "vqae.ckpt"
    ckpt = run_dir / "dit.ckpt"
    resume = ckpt if args.resume and ckpt.exists() else None
    if resume is None and not stage1.exists():
        raise StateError(f"train-dit needs a stage-1 checkpoint; {stage1} does not exist (run train-vqae first)")
    ds = _load_dataset(cfg, data_dir)
    state = pipeline.train_dit(ds, cfg, stage1=stage1, run_dir=run_dir, resume=resume)
    print(f"stage 2 finished at step {state.step}; checkpoint {ckpt}")
    return 0


def cmd_synthesize(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    st = pipeline.load_dit_state(ckpt)
    cfg = config_mod.load(args.config) if args.config else st.config
    models = pipeline.models_from_state(st)
    clip = media.read_clip(args.identity)
    audio = media.read_audio(args.audio) if args.audio else clip.audio
    n = args.frames or clip.num_frames
    if clip.num_frames < n or audio.num_frames < n:
        raise ValidationError("--frames", f"need {n} frames; video has {clip.num_frames}, audio has {audio.num_frames}")
    audio = type(audio)(audio.samples, audio.sample_rate, audio.features[:n], audio.fps)
    steps = args.steps if args.steps is not None else cfg.sampler.steps
    eta = args.eta if args.eta is not None else cfg.sampler.eta
    if steps > models.schedule.T:
        raise ValidationError("--steps", f"{steps} exceeds the {models.schedule.T}-step schedule")
    sampler = SamplerConfig(cfg.sampler.kind, steps, eta)
    seed = args.seed if args.seed is not None else 0
    job = pipeline.SynthesisJob(
        clip.frames[:n],
        clip.landmarks[:n],
        clip.frames[args.reference_index],
        audio,
        sampler=sampler,
        mask=_mask(cfg),
        seed=seed,
        evolving_reference=cfg.sampler.evolving_reference,
    )
    res = pipeline.synthesize_video(job, models, progress=lambda i: log.info("frame %d/%d", i + 1, n))
    out = Path(args.out or "synthesis")
    media.write_frames(out / "frames", res.frames)
    written = {"frames": len(res.frames)}
    if args.interp2x:
        media.write_frames(out / "interp2x", pipeline.interpolate_2x(res.frames))
        written["interp2x"] = 2 * len(res.frames) - 1
    manifest = {
        "seed": seed,
        "steps": steps,
        "eta": eta,
        "sampler": sampler.kind,
        "evolving_reference": cfg.sampler.evolving_reference,
        "reference_index": args.reference_index,
        "checkpoint": str(ckpt),
        "identity": str(args.identity),
        "audio": str(args.audio or args.identity),
        "outputs": written,
        "fps": audio.fps,
    }
    (out / "synthesis.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(res.frames)} frames to {out / 'frames'}")
    return 0


def _read_envelope(path) -> np.ndarray:
    p = Path(path)
    if p.is_dir():
        p = p / "audio_features.csv"
    first = p.read_text().splitlines()[0]
    if first.startswith("frame"):
        return media.read_table(p)[:, 0]
    return np.loadtxt(p, delimiter=",", ndmin=1)


def _find_identity(args) -> dict | None:
    if args.identity:
        return json.loads(Path(args.identity).read_text())
    ref = Path(args.reference)
    for cand in (ref / "identity.json", ref.parent / "identity.json"):
        if cand.exists():
            return json.loads(cand.read_text())
    return None


def cmd_eval(args) -> int:
    gen = media.read_frames(args.generated)
    ref = media.read_frames(args.reference)
    if len(gen) != len(ref):
        raise ValidationError("generated", f"{len(gen)} generated frames vs {len(ref)} reference frames")
    report = metrics.evaluate_frames(media.from_uint8(gen), media.from_uint8(ref))
    if args.envelope:
        env = _read_envelope(args.envelope)[: len(gen)]
        meta = _find_identity(args)
        if meta is None:
            raise ValidationError("--identity", "lip-sync scoring needs identity.json for the mouth location")
        ident = media.identity_from_dict(meta.get("identity", meta))
        half = ident.max_opening / 2.0 + 2.0 * ident.scale
        report.lip_sync = metrics.lip_sync_score(media.from_uint8(gen), env, ident.mouth_center, half)
    out = Path(args.out or args.generated)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.txt", out / "frames.csv")
    print((out / "report.txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dithead", description="Audio-driven talking-head synthesis with a latent diffusion transformer.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="run configuration file")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("gen-data", help="render the synthetic dataset")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    for name, func, extra in (("train-vqae", cmd_train_vqae, False), ("train-dit", cmd_train_dit, True)):
        sp = sub.add_parser(name, help=f"{'stage-2 transformer' if extra else 'stage-1 autoencoder'} training")
        common(sp)
        sp.add_argument("--data", metavar="DIR", help="dataset directory (default: paths.data_dir)")
        sp.add_argument("--steps", type=int, metavar="N", help="total training steps")
        sp.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
        if extra:
            sp.add_argument("--vqae", metavar="PATH", help="stage-1 checkpoint (default: <out>/vqae.ckpt)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("synthesize", help="generate a video for an identity and audio track")
    common(sp)
    sp.add_argument("--checkpoint", required=True, metavar="PATH")
    sp.add_argument("--identity", required=True, metavar="DIR", help="identity directory from gen-data")
    sp.add_argument("--audio", metavar="DIR|CSV", help="driving audio (default: the identity's own)")
    sp.add_argument("--reference-index", type=int, default=0, metavar="K")
    sp.add_argument("--frames", type=int, metavar="N", help="synthesize only the first N frames")
    sp.add_argument("--steps", type=int, metavar="N", help="sampler steps (default from config)")
    sp.add_argument("--eta", type=float, metavar="F")
    sp.add_argument("--interp2x", action="store_true", help="also write the 2x cross-faded frame set")
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("eval", help="score generated frames against references")
    common(sp)
    sp.add_argument("generated", metavar="GENERATED_DIR")
    sp.add_argument("reference", metavar="REFERENCE_DIR")
    sp.add_argument("--envelope", metavar="FILE", help="audio features CSV or one value per line")
    sp.add_argument("--identity", metavar="FILE", help="identity.json (default: found next to the references)")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    log.debug("numerics precision %s", numerics.get_dtype())
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: invalid {exc}", file=sys.stderr)
        return 2
    except StateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DitHeadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
