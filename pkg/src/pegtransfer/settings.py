"""
Settings - Carga de config/settings.yaml y construcción de la configuración tipada

Flujo:
    settings = load_settings()                       # YAML + valores por defecto
    settings = apply_overrides(settings, vars(args)) # flags de la CLI
    experiment = build_experiment(settings)          # ExperimentConfig validado
"""
import copy
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from src.pegtransfer.errors import ConfigurationError
from src.pegtransfer.executor import ExecutorConfig, MotionTimingConfig
from src.pegtransfer.harness import CalibrationSettings, ErrorSettings, ExperimentConfig
from src.pegtransfer.render import CameraConfig
from src.pegtransfer.scene import WorkspaceConfig, default_peg_layout

logger = logging.getLogger(__name__)

DEFAULT_PATH = Path(__file__).resolve().parents[2] / "config" / "settings.yaml"

DEFAULT_SETTINGS: Dict[str, Any] = {
    "workspace": {
        "board_size_mm": [200.0, 130.0],
        "peg_pitch_mm": 40.0,
        "peg_height_mm": 10.0,
        "peg_radius_mm": 2.0,
        "block_edge_mm": 18.0,
        "block_height_mm": 15.0,
        "hole_span_mm": [5.0, 10.0],
        "height_jitter_sd_mm": 0.5,
    },
    "camera": {
        "pixels_per_mm": 5.0,
        "margin_mm": 0.0,
        "board_depth_mm": 500.0,
        "noise_sd_mm": 0.5,
        "dropout_prob": 0.0,
    },
    "error": {
        "e_sys_mm": 4.5,
        "jitter_sd_mm": 0.3,
        "roll_offset_mm": 3.0,
        "release_sd_mm": 2.0,
        "release_tumble_prob": 0.08,
        "release_tumble_range_mm": [3.0, 15.0],
        "seed": 2020,
    },
    "calibration": {
        "enabled": True,
        "cell_mm": 16.0,
        "margin_mm": 8.0,
        "region": "full",
        "reach_margin_mm": 40.0,
    },
    "timing": {
        "approach_s": 2.0,
        "descend_s": 1.0,
        "grip_s": 1.0,
        "lift_s": 1.2,
        "transfer_s": 3.0,
        "release_s": 1.8,
        "bilateral_overlap": True,
        "bilateral_sync_s": 1.3,
    },
    "executor": {
        "clearance_mm": 5.0,
        "safe_height_mm": 30.0,
        "release_height_mm": 2.0,
        "grip_depth_mm": 3.0,
        "jaw_open_offset_mm": 3.0,
        "grasp_window_mm": 4.0,
        "release_window_mm": 4.0,
        "capture_radius_mm": 3.0,
        "match_radius_mm": 6.0,
        "band_epsilon_mm": 3.0,
        "max_attempts": 2,
        "max_detections": 12,
        "single_arm": "right",
        "bilateral_yaw_deg": 15.0,
        "nudge_prob": 0.25,
        "n_orientations": 30,
        "activation_floor": 0.5,
    },
    "experiment": {
        "mode": "single",
        "episodes": 20,
        "seed": 0,
        "workers": 1,
        "out_dir": "results",
        "perception": "depth",
        "record_traces": False,
        "write_parquet": False,
    },
}

# flag de la CLI -> (sección, clave)
FLAG_KEYS = {
    "mode": ("experiment", "mode"),
    "episodes": ("experiment", "episodes"),
    "seed": ("experiment", "seed"),
    "error_mm": ("error", "e_sys_mm"),
    "noise_sd": ("camera", "noise_sd_mm"),
    "dropout": ("camera", "dropout_prob"),
    "grid_mm": ("calibration", "cell_mm"),
    "out": ("experiment", "out_dir"),
    "workers": ("experiment", "workers"),
    "perception": ("experiment", "perception"),
}


def _deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(path: Optional[Path] = None) -> Dict[str, Any]:
    """
    Lee el YAML de configuración y lo combina con los valores por defecto

    Args:
        path (Path): ruta del YAML (por defecto config/settings.yaml)

    Raises:
        ConfigurationError: YAML inválido o secciones desconocidas
    """
    path = Path(path) if path is not None else DEFAULT_PATH
    if not path.exists():
        logger.warning(f"⚠️ {path} no existe, usando valores por defecto")
        return copy.deepcopy(DEFAULT_SETTINGS)
    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"YAML inválido en {path}: {e}") from e
    if not isinstance(loaded, Mapping):
        raise ConfigurationError(f"{path} debe contener un mapeo de secciones")
    unknown = sorted(set(loaded) - set(DEFAULT_SETTINGS))
    if unknown:
        raise ConfigurationError(f"Secciones desconocidas en {path}: {unknown}")
    for section, values in loaded.items():
        if values is not None and not isinstance(values, Mapping):
            raise ConfigurationError(f"La sección '{section}' debe ser un mapeo")
    logger.info(f"📄 Configuración cargada desde {path}")
    return _deep_merge(DEFAULT_SETTINGS, {k: v for k, v in loaded.items() if v is not None})


def apply_overrides(settings: Mapping[str, Any], flags: Mapping[str, Any]) -> Dict[str, Any]:
    """Los flags con valor distinto de None reemplazan la clave correspondiente"""
    merged = copy.deepcopy(dict(settings))
    for flag, (section, key) in FLAG_KEYS.items():
        value = flags.get(flag)
        if value is not None:
            merged.setdefault(section, {})[key] = value
            logger.debug(f"Override {section}.{key} = {value}")
    return merged


def _pair(value: Any, name: str):
    try:
        first, second = value
        return float(first), float(second)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"{name} debe ser una pareja de números") from e


def build_experiment(settings: Mapping[str, Any]) -> ExperimentConfig:
    """
    Construye y valida un ExperimentConfig

    Raises:
        ConfigurationError: si falta una clave, sobra una clave o se viola un invariante
    """
    try:
        ws = settings["workspace"]
        board = _pair(ws["board_size_mm"], "board_size_mm")
        workspace = WorkspaceConfig(
            board_size=board,
            peg_positions=default_peg_layout(board, float(ws["peg_pitch_mm"])),
            peg_height=float(ws["peg_height_mm"]),
            peg_radius=float(ws["peg_radius_mm"]),
            block_edge=float(ws["block_edge_mm"]),
            block_height=float(ws["block_height_mm"]),
            hole_span=_pair(ws["hole_span_mm"], "hole_span_mm"),
            height_jitter_sd=float(ws["height_jitter_sd_mm"]),
        )

        cam = settings["camera"]
        camera = CameraConfig.for_board(
            board,
            pixels_per_mm=float(cam["pixels_per_mm"]),
            margin_mm=float(cam["margin_mm"]),
            board_depth=float(cam["board_depth_mm"]),
            noise_sd=float(cam["noise_sd_mm"]),
            dropout_prob=float(cam["dropout_prob"]),
        )

        err = dict(settings["error"])
        err["release_tumble_range_mm"] = _pair(err["release_tumble_range_mm"], "release_tumble_range_mm")
        error = ErrorSettings(**err)

        calibration = CalibrationSettings(**settings["calibration"])
        if calibration.region not in ("full", "left", "right", "half"):
            raise ConfigurationError(f"Región de calibración desconocida: {calibration.region}")
        if calibration.cell_mm <= 0:
            raise ConfigurationError("calibration.cell_mm debe ser positivo")

        timing = MotionTimingConfig(**settings["timing"])

        exp = dict(settings["experiment"])
        perception = exp.pop("perception")
        executor = ExecutorConfig(perception=perception, **settings["executor"])

        experiment = ExperimentConfig(
            workspace=workspace,
            camera=camera,
            timing=timing,
            executor=executor,
            error=error,
            calibration=calibration,
            mode=str(exp["mode"]),
            episodes=int(exp["episodes"]),
            seed=int(exp["seed"]),
            workers=int(exp["workers"]),
            out_dir=str(exp["out_dir"]),
            record_traces=bool(exp.get("record_traces", False)),
            write_parquet=bool(exp.get("write_parquet", False)),
        )
    except KeyError as e:
        raise ConfigurationError(f"Clave de configuración faltante: {e}") from e
    except TypeError as e:
        raise ConfigurationError(f"Clave de configuración desconocida: {e}") from e
    return experiment.validate()
