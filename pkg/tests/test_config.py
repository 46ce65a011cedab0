import pytest

from dithead import config
from dithead.errors import ValidationError


def test_defaults_validate_and_round_trip():
    cfg = config.validate(config.RunConfig())
    again = config.loads(config.dumps(cfg))
    assert again == cfg


def test_load_overrides_with_units_and_comments(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(
        "[dataset]\nimage_height_px = 32  # small\nimage_width_px = 32\n"
        "[sampler]\nsteps = 50\neta = 0.5\n"
    )
    cfg = config.load(p)
    assert cfg.dataset.image_height_px == 32
    assert cfg.sampler.steps == 50 and cfg.sampler.eta == 0.5
    assert cfg.dit.hidden == 256


@pytest.mark.parametrize(
    "text, field",
    [
        ("[dataset]\nimage_height_px = 66\n", "dataset.image_height_px"),
        ("[dataset]\nimage_width_px = 36\n", "dit.patch_size"),
        ("[dit]\nheads = 7\n", "dit.heads"),
        ("[sampler]\nsteps = 2000\n", "sampler.steps"),
        ("[dataset]\nbogus_px = 3\n", "dataset.bogus_px"),
        ("[nosuch]\na = 1\n", "nosuch"),
        ("[dit]\ndepth = six\n", "dit.depth"),
        ("[mask]\nkernel_px = 8\n", "mask.kernel_px"),
        ("[train_dit]\nbatch_size = 0\n", "train_dit.batch_size"),
        ("[sampler]\neta = 1.5\n", "sampler.eta"),
        ("[dit]\nreference_noise_steps = -1\n", "dit.reference_noise_steps"),
    ],
)
def test_validation_names_field(text, field):
    with pytest.raises(ValidationError) as info:
        config.loads(text)
    assert info.value.field == field
    assert field in str(info.value)
