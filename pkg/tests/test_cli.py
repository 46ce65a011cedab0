import json

import numpy as np
import pytest

from dithead import cli, media

TINY = """
[dataset]
num_train_identities = 2
num_heldout_identities = 1
frames_per_identity = 12
image_height_px = 32
image_width_px = 32

[mask]
reference_min_gap_frames = 4

[vqae]
codebook_size = 16
channels = 8
base_channels = 4

[dit]
depth = 1
heads = 2
hidden = 16

[schedule]
steps = 40

[sampler]
steps = 8

[train_vqae]
batch_size = 2
steps = 3
checkpoint_every_steps = 2

[train_dit]
batch_size = 2
steps = 3
checkpoint_every_steps = 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    cfg = str(root / "tiny.ini")
    assert cli.main(["gen-data", "--config", cfg, "--out", str(root / "data")]) == 0
    assert cli.main(["train-vqae", "--config", cfg, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    assert cli.main(["train-dit", "--config", cfg, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root, cfg


def test_gen_data_layout_and_determinism(workspace, tmp_path):
    root, cfg = workspace
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    assert len(manifest["train"]) == 2 and len(manifest["heldout"]) == 1
    ident = root / "data" / manifest["train"][0]["name"]
    frames = media.read_frames(ident)
    assert frames.shape == (12, 32, 32, 3) and frames.dtype == np.uint8
    assert cli.main(["gen-data", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    for p in (root / "data").rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "again" / p.relative_to(root / "data")).read_bytes(), p


def test_default_manifest_counts(tmp_path, monkeypatch):
    from dithead import config

    cfg = config.RunConfig()
    assert (cfg.dataset.num_train_identities, cfg.dataset.num_heldout_identities) == (8, 2)
    assert cfg.sampler.steps == 250


def test_loss_logs_one_line_per_step(workspace):
    root, _ = workspace
    for name in ("vqae_loss.tsv", "dit_loss.tsv"):
        lines = (root / "run" / name).read_text().splitlines()
        assert lines[0] == "step\tloss" and [int(l.split("\t")[0]) for l in lines[1:]] == [1, 2, 3]


def test_train_dit_requires_stage_one(workspace, tmp_path, capsys):
    root, cfg = workspace
    code = cli.main(["train-dit", "--config", cfg, "--data", str(root / "data"), "--out", str(tmp_path)])
    assert code == 4
    assert "stage-1" in capsys.readouterr().err


def test_invalid_config_reports_field(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[dit]\nheads = 3\n")
    assert cli.main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert "dit.heads" in capsys.readouterr().err


def test_synthesize_deterministic_with_interp(workspace, tmp_path):
    root, cfg = workspace
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    ident = str(root / "data" / manifest["heldout"][0]["name"])
    args = ["synthesize", "--checkpoint", str(root / "run" / "dit.ckpt"), "--identity", ident, "--frames", "4", "--seed", "3"]
    assert cli.main(args + ["--out", str(tmp_path / "a"), "--interp2x"]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = media.frame_paths(tmp_path / "a"), media.frame_paths(tmp_path / "b")
    assert len(a) == 4 and [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    assert len(list((tmp_path / "a" / "interp2x").glob("*.ppm"))) == 7
    meta = json.loads((tmp_path / "a" / "synthesis.json").read_text())
    assert meta["seed"] == 3 and meta["steps"] == 8 and meta["eta"] == 0.0
    assert meta["evolving_reference"] == "final"


def test_synthesize_missing_checkpoint(workspace, tmp_path):
    root, _ = workspace
    code = cli.main(["synthesize", "--checkpoint", str(tmp_path / "none.ckpt"), "--identity", str(root / "data"), "--out", str(tmp_path)])
    assert code == 3


def test_eval_self_and_lip_sync(workspace, tmp_path):
    root, _ = workspace
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    ident = root / "data" / manifest["train"][0]["name"]
    out = tmp_path / "ev"
    assert cli.main(["eval", str(ident), str(ident), "--envelope", str(ident / "audio_features.csv"), "--out", str(out)]) == 0
    report = dict(line.split(": ") for line in (out / "report.txt").read_text().splitlines())
    assert report["frame_count"] == "12"
    assert float(report["mean_psnr_db"]) == 100.0
    assert float(report["mean_ssim"]) == pytest.approx(1.0)
    assert float(report["lip_sync_r"]) > 0.99
    assert len((out / "frames.csv").read_text().splitlines()) == 13


def test_eval_count_mismatch(workspace, tmp_path):
    root, _ = workspace
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    ident = root / "data" / manifest["train"][0]["name"]
    short = tmp_path / "short"
    media.write_frames(short, media.read_frames(ident)[:5])
    assert cli.main(["eval", str(short), str(ident), "--out", str(tmp_path / "o")]) == 2


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    media.write_ppm(tmp_path / "x.ppm", img)
    assert np.array_equal(media.read_ppm(tmp_path / "x.ppm"), img)
    f = np.linspace(-1, 1, 5 * 7 * 3).reshape(5, 7, 3)
    assert np.abs(media.from_uint8(media.to_uint8(f)) - f).max() <= 1 / 127.5
