import pytest
import yaml

from src.pegtransfer.errors import ConfigurationError
from src.pegtransfer.settings import (
    DEFAULT_PATH,
    DEFAULT_SETTINGS,
    apply_overrides,
    build_experiment,
    load_settings,
)


def _write(tmp_path, payload, name="settings.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload) if not isinstance(payload, str) else payload)
    return path


def test_missing_file_gives_defaults(tmp_path):
    assert load_settings(tmp_path / "nope.yaml") == DEFAULT_SETTINGS


def test_repository_settings_build():
    experiment = build_experiment(load_settings(DEFAULT_PATH))
    assert experiment.mode in ("single", "bilateral")


def test_partial_section_is_merged(tmp_path):
    settings = load_settings(_write(tmp_path, {"error": {"e_sys_mm": 2.0}}))
    assert settings["error"]["e_sys_mm"] == 2.0
    assert settings["error"]["seed"] == DEFAULT_SETTINGS["error"]["seed"]


def test_unknown_section_is_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        load_settings(_write(tmp_path, {"aws": {"region": "us-east-1"}}))


def test_invalid_yaml_is_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        load_settings(_write(tmp_path, "error: [unclosed"))
    with pytest.raises(ConfigurationError):
        load_settings(_write(tmp_path, "- a\n- b\n", name="list.yaml"))


def test_overrides_map_flags_to_sections():
    settings = apply_overrides(DEFAULT_SETTINGS, {
        "mode": "bilateral", "error_mm": 6.0, "grid_mm": 8.0, "noise_sd": None, "verbose": True,
    })
    assert settings["experiment"]["mode"] == "bilateral"
    assert settings["error"]["e_sys_mm"] == 6.0
    assert settings["calibration"]["cell_mm"] == 8.0
    assert settings["camera"]["noise_sd_mm"] == DEFAULT_SETTINGS["camera"]["noise_sd_mm"]
    assert DEFAULT_SETTINGS["experiment"]["mode"] == "single"


def test_default_experiment():
    experiment = build_experiment(DEFAULT_SETTINGS)
    assert experiment.camera.image_size == (1001, 651)
    assert experiment.workspace.peg_positions[0] == (30.0, 25.0)
    assert experiment.workspace.peg_positions[11] == (170.0, 105.0)
    assert experiment.executor.perception == "depth"
    assert experiment.timing.attempt_s == pytest.approx(10.0)


@pytest.mark.parametrize("section,key,value", [
    ("experiment", "mode", "trilateral"),
    ("experiment", "episodes", 0),
    ("experiment", "perception", "lidar"),
    ("workspace", "peg_pitch_mm", 25.0),
    ("calibration", "region", "top"),
    ("calibration", "cell_mm", 0.0),
    ("error", "release_tumble_prob", 1.5),
])
def test_invalid_values_are_rejected(section, key, value):
    settings = apply_overrides(DEFAULT_SETTINGS, {})
    settings[section][key] = value
    with pytest.raises(ConfigurationError):
        build_experiment(settings)


def test_unknown_key_is_rejected():
    settings = apply_overrides(DEFAULT_SETTINGS, {})
    settings["error"]["amplitude"] = 1.0
    with pytest.raises(ConfigurationError):
        build_experiment(settings)


def test_missing_key_is_rejected():
    settings = apply_overrides(DEFAULT_SETTINGS, {})
    del settings["camera"]["pixels_per_mm"]
    with pytest.raises(ConfigurationError):
        build_experiment(settings)
