"""On-disk dataset and frame formats.

A dataset directory holds ``manifest.json`` and one subdirectory per identity::

    <identity>/frames/00000.ppm    binary P6, 8-bit RGB
    <identity>/landmarks.csv       frame, x0, y0, ..., x11, y11
    <identity>/audio_features.csv  frame, f0 (envelope), f1 .. f32
    <identity>/audio.wav           16-bit mono PCM
    <identity>/identity.json       rendering parameters (mouth location for lip-sync scans)

Frames are exported as PPM so that outputs can be diffed byte for byte.  To
assemble a video, feed the numbered frames to any external encoder, e.g.
``ffmpeg -framerate 25 -i frames/%05d.ppm out.mp4``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import wave
from pathlib import Path

import numpy as np

from .conditioning import AudioTrack, MaskSpec
from .errors import DimensionError, ValidationError
from .synthdata import IdentitySpec, VideoClip

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def to_uint8(image) -> np.ndarray:
    """[-1, 1] float image -> 8-bit; integer input passes through."""
    arr = np.asarray(image)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.uint8)
    return np.clip(np.rint((arr.astype(np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(image: np.ndarray) -> np.ndarray:
    return (np.asarray(image, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def write_ppm(path, image) -> None:
    img = to_uint8(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"PPM export needs an (H, W, 3) image, got {img.shape}")
    H, W, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (W, H) + img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    # header: magic, width, height, maxval separated by whitespace; '#' comments allowed
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValidationError(str(path), "only 8-bit binary PPM (P6) is supported")
    W, H = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=H * W * 3, offset=pos)
    return pixels.reshape(H, W, 3).copy()


def frame_paths(directory) -> list[Path]:
    d = Path(directory)
    if (d / "frames").is_dir():
        d = d / "frames"
    return sorted(d.glob("*.ppm"))


def write_frames(directory, frames) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = d / f"{i:05d}.ppm"
        write_ppm(p, f)
        paths.append(p)
    return paths


def read_frames(directory) -> np.ndarray:
    paths = frame_paths(directory)
    if not paths:
        raise FileNotFoundError(f"no .ppm frames in {directory}")
    return np.stack([read_ppm(p) for p in paths])


def write_table(path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(np.asarray(rows, dtype=np.float64)):
            w.writerow([i] + [repr(float(v)) for v in row])


def read_table(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.rint(np.asarray(samples, dtype=np.float64) * 32767), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        rate, n = w.getframerate(), w.getnframes()
        pcm = np.frombuffer(w.readframes(n), dtype="<i2")
    return pcm.astype(np.float32) / 32767.0, rate


def identity_to_dict(identity: IdentitySpec) -> dict:
    return dataclasses.asdict(identity)


def identity_from_dict(data: dict) -> IdentitySpec:
    def tup(v):
        return tuple(tup(x) for x in v) if isinstance(v, list) else v

    return IdentitySpec(**{k: tup(v) for k, v in data.items()})


def write_clip(directory, clip: VideoClip) -> None:
    d = Path(directory)
    write_frames(d / "frames", clip.frames)
    n = clip.landmarks.shape[1]
    write_table(d / "landmarks.csv", ["frame"] + [f"{a}{k}" for k in range(n) for a in "xy"], clip.landmarks.reshape(len(clip.landmarks), -1))
    feats = clip.audio.features
    write_table(d / "audio_features.csv", ["frame"] + [f"f{k}" for k in range(feats.shape[1])], feats)
    write_wav(d / "audio.wav", clip.audio.samples, clip.audio.sample_rate)
    meta = {"identity": identity_to_dict(clip.identity), "fps": clip.audio.fps, "name": clip.name}
    (d / "identity.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_audio(directory) -> AudioTrack:
    """Audio track from an identity directory (or a bare features CSV)."""
    p = Path(directory)
    if p.is_file():
        return AudioTrack(np.zeros(0, np.float32), 16_000, read_table(p).astype(np.float32))
    meta = json.loads((p / "identity.json").read_text())
    samples, rate = read_wav(p / "audio.wav") if (p / "audio.wav").exists() else (np.zeros(0, np.float32), 16_000)
    feats = read_table(p / "audio_features.csv").astype(np.float32)
    return AudioTrack(samples, rate, feats, fps=meta.get("fps", 25))


def read_clip(directory) -> VideoClip:
    d = Path(directory)
    meta = json.loads((d / "identity.json").read_text())
    frames = from_uint8(read_frames(d))
    lm = read_table(d / "landmarks.csv")
    audio = read_audio(d)
    if not (len(frames) == len(lm) == audio.num_frames):
        raise ValidationError(str(d), f"{len(frames)} frames, {len(lm)} landmark rows, {audio.num_frames} audio rows")
    return VideoClip(identity_from_dict(meta["identity"]), frames, lm.reshape(len(lm), -1, 2), audio, name=meta.get("name", d.name))


def write_dataset(directory, train: list[VideoClip], heldout: list[VideoClip], seed: int, config: dict) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = {"train": [], "heldout": []}
    for split, clips in (("train", train), ("heldout", heldout)):
        for clip in clips:
            write_clip(d / clip.name, clip)
            entries[split].append({"name": clip.name, "seed": clip.identity.seed, "frames": clip.num_frames})
    manifest = {"format_version": FORMAT_VERSION, "dataset_seed": seed, "config": config, **entries}
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d / MANIFEST


def read_manifest(directory) -> dict:
    p = Path(directory) / MANIFEST
    if not p.exists():
        raise FileNotFoundError(f"{p} not found; run gen-data first")
    return json.loads(p.read_text())


def read_dataset(directory, mask: MaskSpec, jitter_px: int, min_gap: int):
    from .pipeline import Dataset

    manifest = read_manifest(directory)
    d = Path(directory)
    train = [read_clip(d / e["name"]) for e in manifest["train"]]
    heldout = [read_clip(d / e["name"]) for e in manifest["heldout"]]
    return Dataset(train, heldout, mask, jitter_px, min_gap)
