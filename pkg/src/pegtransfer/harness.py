"""
Harness - Experimentos por lotes y estadísticas de tablas

1. Configuración completa de un experimento (ExperimentConfig)
2. Ejecución de n episodios con semillas base..base+n-1, en serie o en
   un pool de procesos; el resultado no depende del número de workers
3. Agregación exacta con fracciones (éxito, pick, stuck, fall, "corregidos")
4. Formato de tabla con redondeo half-up a 3 decimales

Uso típico:
    experiment = ExperimentConfig()
    batch = run_batch(20, "single", experiment, base_seed=0, out_dir="results")
    print(render_tables([batch.stats]))
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from scipy import stats as sp_stats

from src.pegtransfer.calibration import (
    CalibrationTable,
    ErrorField,
    generate_calibration,
    grid_for_board,
)
from src.pegtransfer.errors import ConfigurationError
from src.pegtransfer.executor import (
    AttemptRecord,
    AttemptResult,
    Direction,
    EpisodeReport,
    ExecutorConfig,
    Mode,
    MotionTimingConfig,
    run_episode,
)
from src.pegtransfer.render import CameraConfig, MaskSet, make_masks
from src.pegtransfer.scene import WorkspaceConfig

logger = logging.getLogger(__name__)

PUBLISHED_TABLES = Path(__file__).resolve().parents[2] / "data" / "published_tables.yaml"


@dataclass(frozen=True)
class ErrorSettings:
    """Parámetros del campo de error de actuación (un campo por brazo)"""
    e_sys_mm: float = 4.5
    jitter_sd_mm: float = 0.3
    roll_offset_mm: float = 3.0
    release_sd_mm: float = 2.0
    release_tumble_prob: float = 0.08
    release_tumble_range_mm: Tuple[float, float] = (3.0, 15.0)
    seed: int = 2020

    def validate(self) -> "ErrorSettings":
        if min(self.e_sys_mm, self.jitter_sd_mm, self.roll_offset_mm, self.release_sd_mm) < 0:
            raise ConfigurationError("Los parámetros de error no pueden ser negativos")
        if not 0.0 <= self.release_tumble_prob <= 1.0:
            raise ConfigurationError("release_tumble_prob debe estar en [0, 1]")
        return self


@dataclass(frozen=True)
class CalibrationSettings:
    enabled: bool = True
    cell_mm: float = 16.0
    margin_mm: float = 8.0
    region: str = "full"
    reach_margin_mm: float = 40.0


@dataclass(frozen=True)
class ExperimentConfig:
    workspace: WorkspaceConfig = field(default_factory=WorkspaceConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    timing: MotionTimingConfig = field(default_factory=MotionTimingConfig)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    error: ErrorSettings = field(default_factory=ErrorSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    mode: str = Mode.SINGLE.value
    episodes: int = 20
    seed: int = 0
    workers: int = 1
    out_dir: str = "results"
    record_traces: bool = False
    write_parquet: bool = False

    def validate(self) -> "ExperimentConfig":
        self.workspace.validate()
        self.camera.validate()
        self.timing.validate()
        self.executor.validate()
        self.error.validate()
        if self.mode not in (Mode.SINGLE.value, Mode.BILATERAL.value):
            raise ConfigurationError(f"Modo desconocido: {self.mode}")
        if self.episodes < 1:
            raise ConfigurationError("Se requiere al menos un episodio")
        if self.workers < 1:
            raise ConfigurationError("workers debe ser al menos 1")
        if self.seed < 0:
            raise ConfigurationError("La semilla debe ser no negativa")
        return self


def build_fields(settings: ErrorSettings, board_size: Sequence[float]) -> Dict[str, ErrorField]:
    """Un campo de error independiente por brazo"""
    return {
        arm: ErrorField.build(
            e_sys=settings.e_sys_mm,
            seed=settings.seed + index,
            board_size=board_size,
            jitter_sd=settings.jitter_sd_mm,
            roll_offset_mm=settings.roll_offset_mm,
            release_sd=settings.release_sd_mm,
            release_tumble_prob=settings.release_tumble_prob,
            release_tumble_range=tuple(settings.release_tumble_range_mm),
        )
        for index, arm in enumerate(("left", "right"))
    }


def build_calibration(fields: Mapping[str, ErrorField], settings: CalibrationSettings,
                      board_size: Sequence[float], cell_mm: Optional[float] = None,
                      ) -> Optional[Dict[str, Dict[float, CalibrationTable]]]:
    """Tablas de calibración por brazo y rol, o None si la calibración está desactivada"""
    if not settings.enabled:
        return None
    cell = cell_mm or settings.cell_mm
    tables: Dict[str, Dict[float, CalibrationTable]] = {}
    for arm, arm_field in fields.items():
        region = settings.region
        if region == "half":
            region = arm
        grid = grid_for_board(board_size, cell, settings.margin_mm, region)
        tables[arm] = generate_calibration(arm, arm_field, grid, board_size=board_size,
                                           reach_margin=settings.reach_margin_mm)
    return tables


@dataclass(frozen=True)
class StatsTable:
    """Estadísticas de una tabla de resultados; todas las fracciones son exactas"""
    mode: str
    attempts: int
    successes: int
    success_rate: Fraction
    mean_attempt_s: float
    pick: Fraction
    stuck: Fraction
    fall: Fraction
    corrected_success_rate: Fraction
    episodes: int
    episode_time_mean: float
    episode_time_sd: float
    seconds_per_attempt: float

    def __post_init__(self):
        if self.success_rate + self.pick + self.stuck + self.fall != 1:
            raise ValueError("Las fracciones no suman 1")
        if self.corrected_success_rate < self.success_rate:
            raise ValueError("La tasa corregida no puede ser menor que la tasa de éxito")

    def as_row(self, label: Optional[str] = None) -> Dict[str, str]:
        """Fila con el formato de la tabla publicada"""
        row = {"Task": label or self.mode.capitalize()}
        row["Success Rate"] = (f"{format_rate(self.success_rate)} "
                               f"({self.successes}/{self.attempts})")
        row["Time (s)"] = format_decimal(self.seconds_per_attempt, 2)
        row["Pick"] = format_rate(self.pick)
        row["Stuck"] = format_rate(self.stuck)
        row["Fall"] = format_rate(self.fall)
        row["Corrected"] = format_rate(self.corrected_success_rate)
        row["Episode (s)"] = (f"{format_decimal(self.episode_time_mean, 1)} ± "
                              f"{format_decimal(self.episode_time_sd, 1)}")
        return row

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "attempts": self.attempts,
            "successes": self.successes,
            "success_rate": format_rate(self.success_rate),
            "pick": format_rate(self.pick),
            "stuck": format_rate(self.stuck),
            "fall": format_rate(self.fall),
            "corrected_success_rate": format_rate(self.corrected_success_rate),
            "mean_attempt_s": round(self.mean_attempt_s, 3),
            "seconds_per_attempt": round(self.seconds_per_attempt, 3),
            "episodes": self.episodes,
            "episode_time_mean_s": round(self.episode_time_mean, 3),
            "episode_time_sd_s": round(self.episode_time_sd, 3),
        }


def format_rate(value: Fraction, places: int = 3) -> str:
    """Redondeo half-up de una fracción exacta"""
    quantum = Decimal(1).scaleb(-places)
    exact = Decimal(value.numerator) / Decimal(value.denominator)
    return str(exact.quantize(quantum, rounding=ROUND_HALF_UP))


def format_decimal(value: float, places: int) -> str:
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def aggregate(records: Sequence[AttemptRecord],
              episode_times: Optional[Mapping[int, float]] = None) -> StatsTable:
    """
    Agrega registros de intentos de un mismo modo en una StatsTable

    Args:
        records: registros de intentos (cualquier orden)
        episode_times: tiempo de reloj por episodio; si falta se usa la suma de
            duraciones de los intentos de cada episodio

    Raises:
        ValueError: si no hay registros o se mezclan modos
    """
    if not records:
        raise ValueError("No hay registros para agregar")
    modes = {r.mode for r in records}
    if len(modes) != 1:
        raise ValueError(f"Registros de modos distintos: {sorted(modes)}")
    ordered = sorted(records, key=lambda r: (r.episode_id, r.attempt_index))
    n = len(ordered)
    counts = {result: 0 for result in AttemptResult}
    corrected = 0
    for record in ordered:
        counts[record.result] += 1
        if record.result == AttemptResult.PLACE_STUCK and record.corrected_later:
            corrected += 1

    if episode_times is None:
        totals: Dict[int, List[float]] = {}
        for record in ordered:
            totals.setdefault(record.episode_id, []).append(record.duration_s)
        episode_times = {eid: math.fsum(d) for eid, d in totals.items()}
    times = np.array([episode_times[eid] for eid in sorted(episode_times)], dtype=float)
    sd = float(np.std(times, ddof=1)) if len(times) > 1 else 0.0

    successes = counts[AttemptResult.SUCCESS]
    return StatsTable(
        mode=ordered[0].mode,
        attempts=n,
        successes=successes,
        success_rate=Fraction(successes, n),
        mean_attempt_s=math.fsum(r.duration_s for r in ordered) / n,
        pick=Fraction(counts[AttemptResult.PICK_FAIL], n),
        stuck=Fraction(counts[AttemptResult.PLACE_STUCK], n),
        fall=Fraction(counts[AttemptResult.PLACE_FALL], n),
        corrected_success_rate=Fraction(successes + corrected, n),
        episodes=len(times),
        episode_time_mean=math.fsum(times) / len(times),
        episode_time_sd=sd,
        seconds_per_attempt=math.fsum(times) / n,
    )


def records_from_counts(mode: str, attempts: int, pick: int, stuck: int, fall: int,
                        corrected: int = 0, episodes: int = 1,
                        attempt_s: float = 10.0) -> List[AttemptRecord]:
    """Reconstruye registros de intentos a partir de conteos publicados"""
    results = ([AttemptResult.PICK_FAIL] * pick + [AttemptResult.PLACE_STUCK] * stuck
               + [AttemptResult.PLACE_FALL] * fall)
    results += [AttemptResult.SUCCESS] * (attempts - len(results))
    if len(results) != attempts or corrected > stuck:
        raise ValueError("Conteos inconsistentes")
    records: List[AttemptRecord] = []
    remaining_corrected = corrected
    for index, result in enumerate(results):
        flag = result == AttemptResult.PLACE_STUCK and remaining_corrected > 0
        if flag:
            remaining_corrected -= 1
        records.append(AttemptRecord(
            episode_id=index % episodes,
            arm="right" if mode == Mode.SINGLE.value or index % 2 else "left",
            block_id=index % 6,
            direction=Direction.LEFT_TO_RIGHT,
            result=result,
            duration_s=attempt_s,
            corrected_later=flag,
            mode=mode,
            attempt_index=index // episodes,
        ))
    return records


def load_published_tables(path: Path = PUBLISHED_TABLES) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)["tables"]


def published_stats(entry: Mapping[str, Any]) -> StatsTable:
    """StatsTable de una tabla publicada; el tiempo total sale de la media por episodio"""
    records = records_from_counts(entry["mode"], entry["attempts"], entry["pick"], entry["stuck"],
                                  entry["fall"], entry.get("corrected", 0), entry["episodes"])
    mean = float(entry["episode_time_mean_s"])
    table = aggregate(records, {eid: mean for eid in range(entry["episodes"])})
    return replace(table, episode_time_sd=float(entry["episode_time_sd_s"]))


def render_tables(tables: Sequence[StatsTable], labels: Optional[Sequence[str]] = None) -> str:
    """Tabla de texto con pandas"""
    labels = labels or [None] * len(tables)
    frame = pd.DataFrame([t.as_row(label) for t, label in zip(tables, labels)])
    return frame.to_string(index=False)


@dataclass
class BatchResult:
    stats: StatsTable
    reports: List[EpisodeReport]
    records: List[AttemptRecord]
    csv_path: Optional[Path] = None


def _episode_task(args) -> EpisodeReport:
    """Un episodio; función de módulo para poder enviarla al pool de procesos"""
    experiment, mode, calib, fields, masks, seed, episode_id = args
    report = run_episode(
        experiment.workspace, mode, calib, fields, experiment.timing, seed,
        settings=experiment.executor, camera=experiment.camera, episode_id=episode_id,
        record_traces=experiment.record_traces, masks=masks,
    )
    report.final_scene = None
    return report


def run_batch(n_episodes: int, mode: str, experiment: ExperimentConfig, base_seed: int,
              out_dir: Optional[str] = None, workers: Optional[int] = None) -> BatchResult:
    """
    Ejecuta n episodios con semillas base_seed .. base_seed + n - 1

    Args:
        n_episodes (int): número de episodios
        mode (str): "single" o "bilateral"
        experiment (ExperimentConfig): configuración completa
        base_seed (int): semilla del primer episodio
        out_dir (str): carpeta de salida para CSV/JSON; None para no escribir
        workers (int): procesos en paralelo (por defecto experiment.workers)

    Returns:
        BatchResult: estadísticas, reportes ordenados por episodio y registros
    """
    if n_episodes < 1:
        raise ConfigurationError("Se requiere al menos un episodio")
    experiment.validate()
    workers = workers or experiment.workers
    board = experiment.workspace.board_size
    fields = build_fields(experiment.error, board)
    calib = build_calibration(fields, experiment.calibration, board)
    masks: Optional[MaskSet] = None
    if experiment.executor.perception == "depth":
        masks = make_masks(experiment.workspace, experiment.camera, experiment.executor.n_orientations)

    tasks = [(experiment, mode, calib, fields, masks, base_seed + i, i) for i in range(n_episodes)]
    logger.info(f"🚀 Lote de {n_episodes} episodios ({mode}), semilla base {base_seed}, "
                f"{workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_episode_task, tasks))
    else:
        reports = [_episode_task(task) for task in tasks]
    reports.sort(key=lambda r: r.episode_id)

    records = [record for report in reports for record in report.records]
    stats = aggregate(records, {r.episode_id: r.episode_time_s for r in reports})
    logger.info(f"📊 Éxito {format_rate(stats.success_rate)} "
                f"({stats.successes}/{stats.attempts}) en {len(reports)} episodios")

    csv_path = None
    if out_dir is not None:
        csv_path = write_batch_outputs(Path(out_dir), reports, records, stats, experiment)
    return BatchResult(stats=stats, reports=reports, records=records, csv_path=csv_path)


def write_batch_outputs(out: Path, reports: Sequence[EpisodeReport], records: Sequence[AttemptRecord],
                        stats: StatsTable, experiment: ExperimentConfig) -> Path:
    from src.pegtransfer import storage

    out.mkdir(parents=True, exist_ok=True)
    csv_path = storage.write_attempts_csv(records, out / "attempts.csv")
    storage.write_json([r.summary() for r in reports], out / "episodes.json")
    storage.write_json(stats.to_dict(), out / "stats.json")
    if experiment.write_parquet:
        storage.write_attempts_parquet(records, out / "attempts.parquet")
    if experiment.record_traces:
        storage.write_json({r.episode_id: r.traces for r in reports}, out / "traces.json")
    logger.info(f"✅ Resultados guardados en {out}")
    return csv_path


def error_sweep(levels: Sequence[float], n_episodes: int, experiment: ExperimentConfig,
                base_seed: int = 0, workers: int = 1) -> Tuple[pd.DataFrame, float, float]:
    """
    Curva de degradación: tasa de éxito por nivel de e_sys

    Returns:
        (DataFrame por nivel, rho de Spearman, p-valor)
    """
    rows = []
    for level in levels:
        variant = replace(experiment, error=replace(experiment.error, e_sys_mm=float(level)))
        batch = run_batch(n_episodes, experiment.mode, variant, base_seed, workers=workers)
        rows.append({
            "e_sys_mm": float(level),
            "attempts": batch.stats.attempts,
            "success_rate": float(batch.stats.success_rate),
            "pick": float(batch.stats.pick),
            "stuck": float(batch.stats.stuck),
            "fall": float(batch.stats.fall),
        })
    frame = pd.DataFrame(rows)
    if len(frame) > 1 and frame["success_rate"].nunique() > 1:
        rho, p_value = sp_stats.spearmanr(frame["e_sys_mm"], frame["success_rate"])
    else:
        rho, p_value = 0.0, 1.0
    return frame, float(rho), float(p_value)
