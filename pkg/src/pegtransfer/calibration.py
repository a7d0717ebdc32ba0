"""
Calibración - Modelo de error de actuación y tablas de corrección

Un brazo accionado por cables no llega exactamente a la posición comandada:
- Error sistemático suave sobre el tablero (suma de 3-5 modos sinusoidales,
  normalizada para que su máximo muestreado sea e_sys), más términos afín y
  bilineal opcionales para pruebas
- Desplazamiento constante que depende del rol de la pinza (0° y 90°)
- Ruido aleatorio por comando (jitter)
- Perturbación del bloque en la pinza al soltarlo (gaussiana + volteo ocasional)

La calibración recorre las esquinas de un tablero de ajedrez con rol 0° y 90°,
guarda las posiciones alcanzadas y corrige cada comando con interpolación
bilineal. Las consultas fuera de la malla lanzan ExtrapolationError.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.pegtransfer.errors import ConfigurationError, ExtrapolationError

logger = logging.getLogger(__name__)

ROLLS = (0.0, 90.0)
ARM_INDEX = {"left": 0, "right": 1}
EDGE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ErrorField:
    """
    Campo de error de un brazo

    systematic(x) = scale·Σ a_m·sin(k_m·x + φ_m) + A·x + b + q·(x·y)
    """
    e_sys: float = 0.0
    jitter_sd: float = 0.0
    roll_offsets: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))
    seed: int = 0
    wavevectors: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: float = 0.0
    linear: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    offset: Tuple[float, float] = (0.0, 0.0)
    bilinear_term: Tuple[float, float] = (0.0, 0.0)
    release_sd: float = 0.0
    release_tumble_prob: float = 0.0
    release_tumble_range: Tuple[float, float] = (3.0, 15.0)

    @classmethod
    def zero(cls) -> "ErrorField":
        return cls()

    @classmethod
    def constant(cls, offset: Sequence[float], **kwargs) -> "ErrorField":
        return cls(offset=(float(offset[0]), float(offset[1])), **kwargs)

    @classmethod
    def affine(cls, matrix, offset: Sequence[float] = (0.0, 0.0),
               bilinear_term: Sequence[float] = (0.0, 0.0), **kwargs) -> "ErrorField":
        return cls(linear=np.asarray(matrix, dtype=float),
                   offset=(float(offset[0]), float(offset[1])),
                   bilinear_term=(float(bilinear_term[0]), float(bilinear_term[1])), **kwargs)

    @classmethod
    def build(cls, e_sys: float, seed: int, board_size: Sequence[float] = (200.0, 130.0),
              jitter_sd: float = 0.3, roll_offset_mm: float = 3.0,
              wavelength_range: Tuple[float, float] = (120.0, 300.0),
              release_sd: float = 0.0, release_tumble_prob: float = 0.0,
              release_tumble_range: Tuple[float, float] = (3.0, 15.0)) -> "ErrorField":
        """
        Campo sinusoidal de banda limitada normalizado a e_sys

        El máximo de la magnitud se mide sobre una malla de 1 mm que cubre el tablero.
        El desplazamiento por rol es cero a 0° y de roll_offset_mm en una dirección
        aleatoria a 90°.
        """
        rng = np.random.default_rng(seed)
        n_modes = int(rng.integers(3, 6))
        wavelengths = rng.uniform(wavelength_range[0], wavelength_range[1], n_modes)
        directions = rng.uniform(0.0, 2.0 * math.pi, n_modes)
        wavevectors = (2.0 * math.pi / wavelengths)[:, None] * np.stack(
            [np.cos(directions), np.sin(directions)], axis=1)
        amplitudes = rng.normal(0.0, 1.0, (n_modes, 2))
        phases = rng.uniform(0.0, 2.0 * math.pi, n_modes)
        roll_angle = rng.uniform(0.0, 2.0 * math.pi)

        unit = cls(wavevectors=wavevectors, amplitudes=amplitudes, phases=phases, scale=1.0)
        xs = np.arange(0.0, board_size[0] + 1.0, 1.0)
        ys = np.arange(0.0, board_size[1] + 1.0, 1.0)
        grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
        peak = float(np.linalg.norm(unit.systematic(grid), axis=-1).max())
        scale = e_sys / peak if peak > 0 else 0.0

        return cls(
            e_sys=float(e_sys),
            jitter_sd=float(jitter_sd),
            roll_offsets=((0.0, 0.0), (roll_offset_mm * math.cos(roll_angle),
                                       roll_offset_mm * math.sin(roll_angle))),
            seed=int(seed),
            wavevectors=wavevectors,
            amplitudes=amplitudes,
            phases=phases,
            scale=scale,
            release_sd=float(release_sd),
            release_tumble_prob=float(release_tumble_prob),
            release_tumble_range=tuple(release_tumble_range),
        )

    def systematic(self, points) -> np.ndarray:
        """Error sistemático (..., 2) en los puntos dados"""
        pts = np.asarray(points, dtype=float)
        result = pts @ np.asarray(self.linear).T + np.asarray(self.offset)
        result = result + (pts[..., 0] * pts[..., 1])[..., None] * np.asarray(self.bilinear_term)
        if len(self.phases) and self.scale != 0.0:
            args = pts @ np.asarray(self.wavevectors).T + self.phases
            result = result + self.scale * (np.sin(args) @ np.asarray(self.amplitudes))
        return result

    def roll_coupling(self, roll: float) -> np.ndarray:
        """Mezcla lineal de los desplazamientos a 0° y 90°"""
        w = min(max(float(roll) / 90.0, 0.0), 1.0)
        o0, o90 = np.asarray(self.roll_offsets[0]), np.asarray(self.roll_offsets[1])
        return (1.0 - w) * o0 + w * o90

    def jitter(self, rng: np.random.Generator) -> np.ndarray:
        if self.jitter_sd == 0:
            return np.zeros(2)
        return rng.normal(0.0, self.jitter_sd, 2)

    def release_offset(self, rng: np.random.Generator) -> np.ndarray:
        """Desplazamiento del bloque en la pinza al soltarlo"""
        offset = np.zeros(2)
        if self.release_sd > 0:
            offset += rng.normal(0.0, self.release_sd, 2)
        if self.release_tumble_prob > 0 and rng.random() < self.release_tumble_prob:
            radius = rng.uniform(*self.release_tumble_range)
            angle = rng.uniform(0.0, 2.0 * math.pi)
            offset += radius * np.array([math.cos(angle), math.sin(angle)])
        return offset

    def achieved(self, command, roll: float, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Posición alcanzada para un comando dado"""
        cmd = np.asarray(command, dtype=float)
        result = cmd + self.systematic(cmd) + self.roll_coupling(roll)
        if rng is not None:
            result = result + self.jitter(rng)
        return result


@dataclass(frozen=True)
class GridSpec:
    origin: Tuple[float, float]
    cell: float
    rows: int
    cols: int

    def corners(self) -> np.ndarray:
        """Esquinas (rows, cols, 2); x crece por columna, y por fila"""
        xs = self.origin[0] + self.cell * np.arange(self.cols)
        ys = self.origin[1] + self.cell * np.arange(self.rows)
        return np.stack(np.meshgrid(xs, ys), axis=-1)

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        return (self.origin[0], self.origin[1],
                self.origin[0] + self.cell * (self.cols - 1),
                self.origin[1] + self.cell * (self.rows - 1))


def grid_for_board(board_size: Sequence[float], cell: float = 16.0, margin: float = 8.0,
                   region: str = "full") -> GridSpec:
    """
    Malla de calibración centrada sobre el tablero (o una mitad) con margen mínimo

    Args:
        region: "full", "left" o "right"
    """
    if cell <= 0:
        raise ConfigurationError("El tamaño de celda debe ser positivo")
    width, height = board_size
    if region == "full":
        x_lo, x_hi = 0.0, width
    elif region == "left":
        x_lo, x_hi = 0.0, width / 2.0
    elif region == "right":
        x_lo, x_hi = width / 2.0, width
    else:
        raise ConfigurationError(f"Región de calibración desconocida: {region}")
    cols = int(math.ceil((x_hi - x_lo + 2.0 * margin) / cell)) + 1
    rows = int(math.ceil((height + 2.0 * margin) / cell)) + 1
    span_x = cell * (cols - 1)
    span_y = cell * (rows - 1)
    origin = ((x_lo + x_hi - span_x) / 2.0, (height - span_y) / 2.0)
    return GridSpec(origin=origin, cell=float(cell), rows=rows, cols=cols)


@dataclass(frozen=True)
class CalibrationTable:
    """Posiciones alcanzadas (rows, cols, 2) en las esquinas de la malla"""
    arm: str
    roll: float
    grid_origin: Tuple[float, float]
    cell: float
    rows: int
    cols: int
    entries: np.ndarray

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_origin, self.cell, self.rows, self.cols)

    def corrections(self) -> np.ndarray:
        return self.entries - self.grid.corners()

    def same_grid(self, other: "CalibrationTable") -> bool:
        return (self.grid_origin == other.grid_origin and self.cell == other.cell
                and self.rows == other.rows and self.cols == other.cols)

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "roll_deg": self.roll,
            "grid_origin_mm": list(self.grid_origin),
            "cell_mm": self.cell,
            "rows": self.rows,
            "cols": self.cols,
            "entries": self.entries.reshape(-1, 2).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationTable":
        rows, cols = int(data["rows"]), int(data["cols"])
        return cls(
            arm=data["arm"],
            roll=float(data["roll_deg"]),
            grid_origin=(float(data["grid_origin_mm"][0]), float(data["grid_origin_mm"][1])),
            cell=float(data["cell_mm"]),
            rows=rows,
            cols=cols,
            entries=np.asarray(data["entries"], dtype=float).reshape(rows, cols, 2),
        )


def generate_calibration(arm: str, field: ErrorField, grid: GridSpec,
                         rolls: Iterable[float] = ROLLS, seed: int = 0,
                         board_size: Sequence[float] = (200.0, 130.0),
                         reach_margin: float = 40.0) -> Dict[float, CalibrationTable]:
    """
    Recorre las esquinas de la malla con cada rol y registra la posición alcanzada

    Returns:
        Dict[float, CalibrationTable]: una tabla por rol

    Raises:
        ConfigurationError: si la malla sale del área alcanzable (tablero ± reach_margin)
    """
    if grid.rows < 2 or grid.cols < 2:
        raise ConfigurationError("La malla necesita al menos 2x2 esquinas")
    x0, y0, x1, y1 = grid.extent
    if (x0 < -reach_margin or y0 < -reach_margin
            or x1 > board_size[0] + reach_margin or y1 > board_size[1] + reach_margin):
        raise ConfigurationError(
            f"Malla ({x0:.1f}, {y0:.1f})-({x1:.1f}, {y1:.1f}) fuera del área alcanzable"
        )
    corners = grid.corners()
    tables: Dict[float, CalibrationTable] = {}
    for roll in rolls:
        rng = np.random.default_rng([field.seed, seed, ARM_INDEX.get(arm, 2), int(round(roll))])
        entries = corners + field.systematic(corners) + field.roll_coupling(roll)
        if field.jitter_sd > 0:
            entries = entries + rng.normal(0.0, field.jitter_sd, corners.shape)
        tables[float(roll)] = CalibrationTable(
            arm=arm, roll=float(roll), grid_origin=tuple(grid.origin), cell=grid.cell,
            rows=grid.rows, cols=grid.cols, entries=entries,
        )
    logger.info(f"✅ Calibración del brazo {arm}: {grid.rows}x{grid.cols} esquinas, roles {list(tables)}")
    return tables


def interpolate_correction(table: CalibrationTable, target: Sequence[float]) -> np.ndarray:
    """Corrección bilineal (error registrado) en el punto objetivo"""
    x, y = float(target[0]), float(target[1])
    gx = (x - table.grid_origin[0]) / table.cell
    gy = (y - table.grid_origin[1]) / table.cell
    if not (-EDGE_TOLERANCE <= gx <= table.cols - 1 + EDGE_TOLERANCE
            and -EDGE_TOLERANCE <= gy <= table.rows - 1 + EDGE_TOLERANCE):
        raise ExtrapolationError((x, y))
    gx = min(max(gx, 0.0), table.cols - 1.0)
    gy = min(max(gy, 0.0), table.rows - 1.0)
    c0 = min(int(math.floor(gx)), table.cols - 2)
    r0 = min(int(math.floor(gy)), table.rows - 2)
    tx, ty = gx - c0, gy - r0
    corr = table.corrections()
    return ((1.0 - tx) * (1.0 - ty) * corr[r0, c0] + tx * (1.0 - ty) * corr[r0, c0 + 1]
            + (1.0 - tx) * ty * corr[r0 + 1, c0] + tx * ty * corr[r0 + 1, c0 + 1])


def bilinear(table: CalibrationTable, target: Sequence[float]) -> np.ndarray:
    """Comando corregido de primer orden: objetivo menos la corrección interpolada"""
    return np.asarray(target, dtype=float) - interpolate_correction(table, target)


def roll_interp(tables: Mapping[float, CalibrationTable], roll: float) -> CalibrationTable:
    """Mezcla lineal entrada a entrada de las tablas de 0° y 90° con peso roll/90"""
    if not 0.0 <= roll <= 90.0:
        raise ValueError(f"Rol fuera de [0, 90]: {roll}")
    t0, t90 = tables[0.0], tables[90.0]
    if not t0.same_grid(t90):
        raise ConfigurationError("Las tablas de 0° y 90° no comparten la malla")
    if roll == 0.0:
        return t0
    if roll == 90.0:
        return t90
    w = roll / 90.0
    return replace(t0, roll=float(roll), entries=(1.0 - w) * t0.entries + w * t90.entries)


def solve_command(table: CalibrationTable, target: Sequence[float],
                  max_iter: int = 50, tol: float = 1e-12) -> np.ndarray:
    """Resuelve c + e_tab(c) = objetivo por iteración de punto fijo"""
    goal = np.asarray(target, dtype=float)
    command = goal - interpolate_correction(table, goal)
    for _ in range(max_iter):
        updated = goal - interpolate_correction(table, command)
        if float(np.max(np.abs(updated - command))) < tol:
            return updated
        command = updated
    return command


def command_position(target: Sequence[float], roll: float,
                     calib: Optional[Mapping[float, CalibrationTable]],
                     field: ErrorField, seed=0) -> np.ndarray:
    """
    Posición alcanzada al comandar un objetivo

    Sin calibración: objetivo + sistemático + rol + jitter. Con calibración
    el comando se corrige antes con la inversa de la tabla interpolada al rol.
    El jitter se toma de la semilla dada, así que el resultado es determinista.

    Raises:
        ExtrapolationError: si el objetivo cae fuera de la malla
    """
    roll = min(max(float(roll), 0.0), 90.0)
    if calib is None:
        command = np.asarray(target, dtype=float)
    else:
        command = solve_command(roll_interp(calib, roll), target)
    rng = np.random.default_rng(seed) if field.jitter_sd > 0 else None
    return field.achieved(command, roll, rng)


def residual_report(field: ErrorField, tables: Optional[Mapping[float, CalibrationTable]],
                    board_size: Sequence[float] = (200.0, 130.0), n: int = 1000,
                    seed: int = 0, roll: float = 0.0) -> Dict[str, float]:
    """
    Percentiles del error alcanzado sobre objetivos aleatorios del tablero

    Returns:
        Dict[str, float]: p50, p95 y max en mm
    """
    rng = np.random.default_rng(seed)
    targets = rng.uniform((0.0, 0.0), board_size, (n, 2))
    seeds = np.random.SeedSequence(seed).spawn(n)
    errors = np.array([
        np.linalg.norm(command_position(t, roll, tables, field, s) - t)
        for t, s in zip(targets, seeds)
    ])
    return {
        "p50": float(np.percentile(errors, 50)),
        "p95": float(np.percentile(errors, 95)),
        "max": float(errors.max()),
    }
