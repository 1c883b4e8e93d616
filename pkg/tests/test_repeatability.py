import json

import pytest

from tools import repeatability_check


def test_digest_tree_and_compare(tmp_path):
    (tmp_path / "a" / "sub").mkdir(parents=True)
    (tmp_path / "a" / "x.txt").write_text("one", encoding="utf-8")
    (tmp_path / "a" / "sub" / "y.txt").write_text("two", encoding="utf-8")
    digests = repeatability_check.digest_tree(tmp_path / "a")
    assert sorted(digests) == ["sub/y.txt", "x.txt"]

    changed = dict(digests, **{"x.txt": "0" * 64})
    assert repeatability_check.compare_runs([digests, dict(digests)]) == {"sub/y.txt": True, "x.txt": True}
    assert repeatability_check.compare_runs([digests, changed])["x.txt"] is False
    assert repeatability_check.compare_runs([digests, {"x.txt": digests["x.txt"]}])["sub/y.txt"] is False


def test_quantize_runs_match(tmp_path, capsys):
    output = tmp_path / "digests.json"
    assert repeatability_check.run(["--repeat", "2", "--fail-on-drift", "--output", str(output)]) == 0
    payload = json.loads(output.read_text(encoding="utf-8"))
    assert payload["command"] == "quantize"
    assert all(payload["matches"].values())
    assert set(payload["files"]) == {"qmodel.json", "qweights.bin", "report.json"}
    assert all(line.startswith("PASS") for line in capsys.readouterr().out.splitlines())


def test_repeat_must_be_at_least_two():
    with pytest.raises(SystemExit):
        repeatability_check.run(["--repeat", "1"])
