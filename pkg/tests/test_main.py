import json

import yaml

from main import main


def _config(tmp_path, **executor):
    payload = {"experiment": {"perception": "ground_truth"}}
    if executor:
        payload["executor"] = executor
    path = tmp_path / "settings.yaml"
    path.write_text(yaml.safe_dump(payload))
    return str(path)


def test_stats_published(capsys):
    assert main(["stats", "--published"]) == 0
    assert "0.869 (205/236)" in capsys.readouterr().out


def test_stats_without_source_is_a_config_error():
    assert main(["stats"]) == 2


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--config", _config(tmp_path), "--episodes", "1", "--seed", "4",
                 "--out", str(out)])
    assert code == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["episodes"] == 1
    assert main(["stats", "--csv", str(out / "attempts.csv")]) == 0


def test_zero_episodes_is_a_config_error(tmp_path):
    assert main(["run", "--config", _config(tmp_path), "--episodes", "0",
                 "--out", str(tmp_path / "out")]) == 2


def test_unsafe_jaw_height_exits_with_safety_code(tmp_path):
    config = _config(tmp_path, clearance_mm=10.0, jaw_open_offset_mm=5.0)
    assert main(["run", "--config", config, "--episodes", "1", "--out", str(tmp_path / "out")]) == 3
