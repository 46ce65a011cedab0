"""Cached desk-scale training runs shared by the acceptance suite.

Training is resumable: an interrupted run continues from its last checkpoint,
and a finished run is simply loaded.  Wall-clock training time is accumulated
in ``timing.json`` next to the checkpoints.

Pre-train from the repository root with::

    python tests/acceptance_runs.py
"""

from __future__ import annotations

import json
import logging
import os
import time
from functools import lru_cache
from pathlib import Path

from dithead import checkpoint, config, pipeline

ROOT = Path(__file__).resolve().parents[1]
RUN_DIR = Path(os.environ.get("DITHEAD_ACCEPTANCE_DIR", ROOT / "runs" / "acceptance"))
CONFIG = ROOT / "configs" / "acceptance.ini"


@lru_cache(maxsize=None)
def run_config() -> config.RunConfig:
    return config.load(CONFIG)


@lru_cache(maxsize=None)
def dataset() -> pipeline.Dataset:
    return pipeline.build_dataset(run_config())


def timing() -> dict:
    p = RUN_DIR / "timing.json"
    return json.loads(p.read_text()) if p.exists() else {}


def _add_time(stage: str, seconds: float) -> None:
    t = timing()
    t[stage] = t.get(stage, 0.0) + seconds
    RUN_DIR.mkdir(parents=True, exist_ok=True)
    (RUN_DIR / "timing.json").write_text(json.dumps(t, indent=2, sort_keys=True) + "\n")


def _step(ckpt: Path) -> int:
    return int(checkpoint.load(ckpt)[0]["step"]) if ckpt.exists() else 0


def _timed(stage: str, fn, start_step: int):
    """Run ``fn``; wall time is charged to ``stage`` only if training steps were taken."""
    t0 = time.perf_counter()
    state = fn()
    if state.step > start_step:
        _add_time(stage, time.perf_counter() - t0)
    return state


@lru_cache(maxsize=None)
def stage1() -> pipeline.TrainState:
    ckpt = RUN_DIR / "vqae.ckpt"
    resume = ckpt if ckpt.exists() else None
    return _timed("vqae", lambda: pipeline.train_vqae(dataset(), run_config(), run_dir=RUN_DIR, resume=resume), _step(ckpt))


@lru_cache(maxsize=None)
def stage2() -> pipeline.TrainState:
    ckpt = RUN_DIR / "dit.ckpt"
    if ckpt.exists():
        fn = lambda: pipeline.train_dit(dataset(), run_config(), run_dir=RUN_DIR, resume=ckpt)
    else:
        stage1()
        fn = lambda: pipeline.train_dit(dataset(), run_config(), stage1=RUN_DIR / "vqae.ckpt", run_dir=RUN_DIR)
    return _timed("dit", fn, _step(ckpt))


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    stage1()
    stage2()
    print(json.dumps(timing(), indent=2))
