import pytest

from roadcount.config import DESK_PROFILE, ConfigError, default_config, load_config


def _write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


def test_defaults_carry_method_constants():
    cfg = default_config()
    rules = cfg.shape_rules()
    assert (rules.min_area, rules.max_area, rules.max_length, rules.max_width) == (2, 200, 28, 9)
    assert (rules.max_elongation, rules.min_hull_fill, rules.min_box_fill) == (8, 0.9, 0.55)
    a = cfg.anchor_config()
    assert a.zoom_length == (1, 1.5, 2) and a.zoom_width == (1, 1.25, 1.5)
    t = cfg.train_config()
    assert (t.batch_size, t.epochs, t.warmup_epochs, t.decay) == (200, 100, 20, 0.8)
    assert (t.lr_start, t.lr_max, t.joint_lr_start, t.joint_lr_max) == (1e-4, 1e-3, 1e-5, 1e-4)
    assert cfg.number("roads", "buffer") == 20 and cfg.number("roads", "main_buffer") == 40
    assert cfg.number("stats", "block_size") == 300
    assert cfg.number("thresholds", "classifier") == 0.5
    arch = cfg.architecture(4)
    assert arch.conv_widths == (64, 128, 256) and arch.joint_fc == 4096


def test_unset_thresholds_are_errors():
    with pytest.raises(ConfigError):
        default_config().detect_config()


def test_otsu_and_numbers(tmp_path):
    cfg = load_config(_write(tmp_path, "[thresholds]\ntophat = otsu\nbottomhat = 0.1\n"
                                       "ndvi = OTSU\nshadow = 1.3\n"))
    d = cfg.detect_config()
    assert d.tophat_threshold == "otsu" and d.bottomhat_threshold == 0.1
    assert cfg.threshold("shadow", allow_otsu=False) == 1.3


@pytest.mark.parametrize("text", ["[nosuch]\nx = 1\n", "[train]\nbogus = 1\n",
                                  "[train]\nepochs\n"])
def test_unknown_or_malformed(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


@pytest.mark.parametrize("key,value", [("epochs", "many"), ("lr_max", "inf"),
                                       ("warmup_epochs", "100")])
def test_bad_values(tmp_path, key, value):
    cfg = load_config(_write(tmp_path, f"[train]\n{key} = {value}\n"))
    with pytest.raises(ConfigError):
        cfg.train_config()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.ini")


def test_paths_relative_to_config(tmp_path):
    cfg = load_config(_write(tmp_path, "[paths]\nmanifest = run/manifest.json\n"))
    assert cfg.path("manifest") == tmp_path / "run" / "manifest.json"
    with pytest.raises(ConfigError):
        cfg.path("weights")


def test_digest_tracks_content(tmp_path):
    a = load_config(_write(tmp_path, "[run]\nseed = 1\n"))
    b = load_config(_write(tmp_path, "[run]\nseed = 1\n"))
    assert a.digest() == b.digest()
    b.set("run", "seed", 2)
    assert a.digest() != b.digest()


def test_profile_respects_user_keys(tmp_path):
    cfg = load_config(_write(tmp_path, "[train]\nepochs = 7\n"))
    cfg.apply_profile(DESK_PROFILE)
    assert cfg.integer("train", "epochs") == 7
    assert cfg.get("train", "conv_widths") == "8, 16, 32"
    assert cfg.threshold("shadow", allow_otsu=False) == 1.3
