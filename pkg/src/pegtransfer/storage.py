"""
Storage - Lectura y escritura de artefactos del simulador

Formatos soportados:
- Imagen de profundidad: raster float32 little-endian (.f32) + sidecar JSON
- PGM de 16 bits (profundidad x 100, saturada; píxeles perdidos -> 0) para inspección visual
- Escena y tablas de calibración como JSON (sin pérdida)
- Registros de intentos como CSV (pandas, orden de columnas fijo, 3 decimales)
  y opcionalmente Parquet (pyarrow) para análisis posterior

Uso típico:
    write_depth_image(image, Path("results/depth.f32"))
    write_attempts_csv(records, Path("results/attempts.csv"))
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

from src.pegtransfer.calibration import CalibrationTable
from src.pegtransfer.executor import AttemptRecord
from src.pegtransfer.render import DepthImage
from src.pegtransfer.scene import Scene

logger = logging.getLogger(__name__)

ATTEMPT_COLUMNS = [
    "episode_id", "mode", "arm", "block_id", "direction",
    "result", "duration_s", "is_recovery", "corrected_later",
]


def _ensure_parent(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(obj: Any, path: Path) -> Path:
    """Escribe un objeto como JSON con sangría y claves ordenadas"""
    path = _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    logger.debug(f"JSON escrito en {path}")
    return path


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _sidecar(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def write_depth_image(image: DepthImage, path: Path) -> Path:
    """
    Guarda la imagen como float32 little-endian más un sidecar JSON

    Args:
        image (DepthImage): imagen a guardar
        path (Path): ruta del raster (.f32); el sidecar usa la misma ruta con .json
    """
    path = _ensure_parent(path)
    try:
        np.ascontiguousarray(image.data, dtype="<f4").tofile(path)
        write_json({
            "width": image.width,
            "height": image.height,
            "pixel_pitch_mm": image.pixel_pitch,
            "dropout_sentinel": "NaN",
        }, _sidecar(path))
        logger.info(f"✅ Imagen de profundidad {image.width}x{image.height} guardada en {path}")
        return path
    except OSError as e:
        logger.error(f"❌ Error guardando imagen de profundidad: {e}")
        raise


def read_depth_image(path: Path) -> DepthImage:
    meta = read_json(_sidecar(path))
    data = np.fromfile(path, dtype="<f4").reshape(meta["height"], meta["width"])
    return DepthImage(data=data.astype(np.float32), pixel_pitch=float(meta["pixel_pitch_mm"]))


def write_pgm(image: DepthImage, path: Path) -> Path:
    """PGM binario de 16 bits; valor = profundidad·100 saturado a [0, 65535]"""
    path = _ensure_parent(path)
    data = np.asarray(image.data, dtype=float)
    scaled = np.clip(np.rint(np.nan_to_num(data * 100.0, nan=0.0)), 0, 65535).astype(">u2")
    header = f"P5\n{image.width} {image.height}\n65535\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(scaled.tobytes())
    logger.info(f"✅ PGM guardado en {path}")
    return path


def write_scene_json(scene: Scene, path: Path) -> Path:
    return write_json(scene.to_dict(), path)


def read_scene_json(path: Path) -> Scene:
    return Scene.from_dict(read_json(path))


def write_tables_json(tables: Mapping[str, Mapping[float, CalibrationTable]], path: Path) -> Path:
    """Tablas de calibración de todos los brazos como lista JSON"""
    payload = [table.to_dict() for arm in sorted(tables) for _, table in sorted(tables[arm].items())]
    return write_json(payload, path)


def read_tables_json(path: Path) -> Dict[str, Dict[float, CalibrationTable]]:
    tables: Dict[str, Dict[float, CalibrationTable]] = {}
    for item in read_json(path):
        table = CalibrationTable.from_dict(item)
        tables.setdefault(table.arm, {})[table.roll] = table
    return tables


def attempts_frame(records: Sequence[AttemptRecord]) -> pd.DataFrame:
    """DataFrame de intentos ordenado por episodio e índice de intento"""
    ordered = sorted(records, key=lambda r: (r.episode_id, r.attempt_index))
    return pd.DataFrame([r.to_row() for r in ordered], columns=ATTEMPT_COLUMNS)


def write_attempts_csv(records: Sequence[AttemptRecord], path: Path) -> Path:
    """CSV estable byte a byte para entradas idénticas"""
    path = _ensure_parent(path)
    attempts_frame(records).to_csv(path, index=False, float_format="%.3f")
    logger.info(f"✅ {len(records)} intentos guardados en {path}")
    return path


def write_attempts_parquet(records: Sequence[AttemptRecord], path: Path) -> Path:
    path = _ensure_parent(path)
    try:
        attempts_frame(records).to_parquet(path, engine="pyarrow", index=False)
        logger.info(f"✅ Parquet guardado en {path}")
        return path
    except ImportError as e:
        logger.error(f"❌ pyarrow no disponible: {e}")
        raise


def read_attempts_csv(path: Path) -> List[AttemptRecord]:
    """Lee un CSV de intentos; el índice de intento se reconstruye por episodio"""
    frame = pd.read_csv(path)
    missing = [c for c in ATTEMPT_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"Columnas faltantes en {path}: {missing}")
    records: List[AttemptRecord] = []
    counters: Dict[int, int] = {}
    for row in frame.itertuples(index=False):
        episode = int(row.episode_id)
        records.append(AttemptRecord(
            episode_id=episode,
            arm=str(row.arm),
            block_id=int(row.block_id),
            direction=row.direction,
            result=row.result,
            duration_s=float(row.duration_s),
            is_recovery_attempt=bool(row.is_recovery),
            corrected_later=bool(row.corrected_later),
            mode=str(row.mode),
            attempt_index=counters.get(episode, 0),
        ))
        counters[episode] = counters.get(episode, 0) + 1
    return records
