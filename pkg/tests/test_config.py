import json

import pytest

from segquant import config
from segquant.errors import ArtifactIOError, ConfigError, ConfigParseError


def test_defaults():
    cfg = config.load_config()
    assert cfg.weights.kind == "int_sym" and cfg.weights.bits == 8
    assert cfg.seglinear and cfg.dualscale
    assert cfg.calibration.method == "amax"
    assert cfg.optimizer_order == ("smooth", "svd")
    assert cfg.smooth.grid == config.ALPHA_GRID
    flat = cfg.as_flat()
    assert list(flat) == [entry.key for entry in config.CONFIG_KEYS]
    assert flat["smooth.grid"] == [entry.default for entry in config.CONFIG_KEYS if entry.key == "smooth.grid"][0]


def test_file_then_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(
        json.dumps({"weights": {"bits": 4, "granularity": "per_channel"}, "calibration": {"method": "gptq"}}),
        encoding="utf-8",
    )
    cfg = config.load_config(path, ["calibration.method=amax", "layers=b0.*,final_proj", "smooth.grid=[0.25, 0.75]"])
    assert cfg.weights.bits == 4
    assert cfg.weights.granularity == "per_channel"
    assert cfg.calibration.method == "amax"
    assert cfg.layers == ("b0.*", "final_proj")
    assert cfg.smooth.grid == (0.25, 0.75)


def test_last_override_wins():
    cfg = config.load_config(overrides=["workers=2", "workers=4"])
    assert cfg.workers == 4


@pytest.mark.parametrize(
    "override",
    [
        "weights.bits=4",
        "weights.bits=3",
        "seglinear=1",
        "workers=2.5",
        "workers=0",
        "optimizer_order=[\"svd\",\"svd\"]",
        "optimizer_order=[\"prune\"]",
        "calibration.damping=true",
        "demo.steps=0",
        "lowrank.precision=\"float16\"",
        "no.such.key=1",
    ],
)
def test_invalid_settings_are_config_errors(override):
    with pytest.raises(ConfigError):
        config.load_config(overrides=[override])


def test_parse_override():
    assert config.parse_override("seed=3") == ("seed", 3)
    assert config.parse_override("weights.kind=int_asym") == ("weights.kind", "int_asym")
    assert config.parse_override(" layers =[\"a\"]") == ("layers", ["a"])
    with pytest.raises(ConfigError):
        config.parse_override("seed")
    with pytest.raises(ConfigError):
        config.parse_override("=3")


def test_file_errors(tmp_path):
    with pytest.raises(ArtifactIOError):
        config.load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{\"seed\": ", encoding="utf-8")
    with pytest.raises(ConfigParseError):
        config.load_config(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigParseError):
        config.load_config(listing)


def test_shipped_configs_load(config_dir):
    for path in sorted(config_dir.glob("*.json")):
        assert isinstance(config.load_config(path), config.EngineConfig)


def test_describe_keys_mentions_defaults():
    text = config.describe_keys()
    assert "calibration.damping (float, default 0.01)" in text
    assert text.splitlines()[0].startswith("config keys")
