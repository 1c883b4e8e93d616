import csv
import json

import numpy as np
import pytest

from segquant import cli
from segquant.bundle import BUNDLE_FILES, REPORT_FILE, validate_report
from segquant.config import CONFIG_KEYS, EngineConfig, dataclass_leaves
from segquant.container import write_container
from segquant.errors import MissingStatsError
from tools.build_fixtures import write_fixtures


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    target = tmp_path_factory.mktemp("toy_dit")
    write_fixtures(target)
    return target


def _model_args(fixture_dir):
    return [
        "--graph",
        str(fixture_dir / "graph.json"),
        "--weights",
        str(fixture_dir / "weights.bin"),
        "--calib",
        str(fixture_dir / "calib.bin"),
    ]


def test_quantize_writes_bundle(tmp_path, fixture_dir, config_dir, capsys):
    out = tmp_path / "bundle"
    argv = ["quantize", *_model_args(fixture_dir), "--config", str(config_dir / "int8.json")]
    code = cli.main([*argv, "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out.split()
    assert printed == [str(out / name) for name in BUNDLE_FILES]
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["config"]["dualscale"] is True


def test_quantize_override_is_echoed(tmp_path, fixture_dir):
    out = tmp_path / "bundle"
    argv = ["quantize", *_model_args(fixture_dir), "--set", "dualscale=false", "--set", "seglinear=false"]
    assert cli.main([*argv, "--out", str(out)]) == 0
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["config"]["dualscale"] is False
    assert report["config"]["seglinear"] is False
    assert all(entry["activations"]["kind"] != "dual_scale" for entry in report["layers"])


def test_missing_calibration_is_an_io_error(tmp_path, fixture_dir, capsys):
    missing = tmp_path / "nope.bin"
    argv = ["quantize", "--graph", str(fixture_dir / "graph.json"), "--weights", str(fixture_dir / "weights.bin")]
    code = cli.main([*argv, "--calib", str(missing), "--out", str(tmp_path / "out")])
    assert code == 5
    err = capsys.readouterr().err
    assert any(line.startswith("segquant quantize: error [io.missing]") for line in err.splitlines())
    assert str(missing) in err
    assert not (tmp_path / "out").exists()


def test_bad_override_exits_with_validation_code(tmp_path, fixture_dir, capsys):
    argv = ["quantize", *_model_args(fixture_dir), "--set", "weights.bits=3", "--out", str(tmp_path)]
    assert cli.main(argv) == 3
    assert "[config.invalid]" in capsys.readouterr().err


def test_analyze_writes_stats(tmp_path, fixture_dir, capsys):
    assert cli.main(["analyze", *_model_args(fixture_dir), "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("point | channels, neg / pos | dualscale")
    payload = json.loads((tmp_path / cli.STATS_FILE).read_text(encoding="utf-8"))
    assert payload["samples"] == 8
    time_act = next(row for row in payload["activations"] if row["point"] == "time_act")
    assert time_act["dualscale"] is True
    assert "b0.adanorm" in payload["linear_inputs"]


def test_demo_writes_curves_and_report(tmp_path, config_dir, capsys):
    argv = ["demo-ddpm", "--config", str(config_dir / "demo.json"), "--set", "demo.steps=4", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    printed = capsys.readouterr().out.split()
    assert printed[-1] == str(tmp_path / REPORT_FILE)
    for name in ("curve", "curve_time", "curve_latent"):
        with (tmp_path / f"{name}.csv").open(encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["t", "frobenius"]
        assert [int(row[0]) for row in rows[1:]] == [4, 3, 2, 1]
    report = json.loads((tmp_path / REPORT_FILE).read_text(encoding="utf-8"))
    assert validate_report(report) == []


def test_demo_refuses_an_invalid_report(tmp_path, config_dir, monkeypatch, capsys):
    real_run_demo = cli.run_demo

    def broken_run_demo(cfg, **kwargs):
        run = real_run_demo(cfg, **kwargs)
        run.report.skipped += 1
        return run

    monkeypatch.setattr(cli, "run_demo", broken_run_demo)
    argv = ["demo-ddpm", "--config", str(config_dir / "demo.json"), "--set", "demo.steps=2", "--out", str(tmp_path)]
    assert cli.main(argv) == 3
    assert not (tmp_path / REPORT_FILE).exists()
    errors = capsys.readouterr().err.splitlines()
    assert any(line.startswith("segquant demo-ddpm: error [validation]") for line in errors)


def test_reruns_are_byte_identical(tmp_path, fixture_dir, config_dir):
    for name in ("a", "b"):
        argv = ["quantize", *_model_args(fixture_dir), "--config", str(config_dir / "int8_gptq.json")]
        assert cli.main([*argv, "--out", str(tmp_path / name)]) == 0
    for name in BUNDLE_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_help_lists_every_config_key(capsys):
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["--help"])
    assert excinfo.value.code == 0
    text = capsys.readouterr().out
    for entry in CONFIG_KEYS:
        assert entry.key in text


def test_config_keys_cover_the_dataclass():
    assert {entry.key for entry in CONFIG_KEYS} == set(dataclass_leaves(EngineConfig()))


def test_load_calibration_groups_samples(fixture_dir):
    samples = cli.load_calibration(fixture_dir / "calib.bin")
    assert len(samples) == 8
    assert set(samples[0]) == {"x", "t_emb", "ctx"}


def test_load_calibration_rejects_flat_names(tmp_path):
    path = tmp_path / "calib.bin"
    write_container(path, {"x": np.zeros((2, 3), dtype=np.float32)})
    with pytest.raises(MissingStatsError):
        cli.load_calibration(path)
