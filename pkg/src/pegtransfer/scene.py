"""
Escena - Modelo geométrico del tablero de pegs

Contiene el estado "verdadero" del episodio:
1. Configuración del tablero (pegs, dimensiones de los bloques)
2. Seis bloques triangulares con pose y estado (en peg, atascado, caído, sujeto)
3. Oráculos geométricos que deciden qué pasa al tomar o soltar un bloque

La física es cuasi-estática: cada caída se resuelve al instante con pruebas
de polígonos (agujero vs eje del peg, huella vs tope del peg).

Uso típico:
    scene = init_episode(WorkspaceConfig(), seed=7)
    outcome = resolve_pick(scene, 0, grasp_point, capture_radius=3.0, arm="right")
"""
import copy
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.pegtransfer.errors import ConfigurationError
from src.pegtransfer.geometry import (
    circumradius,
    convex_polygons_overlap,
    distance_to_polygon,
    distance_to_polyline,
    point_in_convex_polygon,
    regular_polygon,
    triangle_vertices,
    wrap_yaw,
)

logger = logging.getLogger(__name__)

Point = Tuple[float, float]
N_BLOCKS = 6
N_PEGS = 12


def default_peg_layout(board_size: Point = (200.0, 130.0), pitch: float = 40.0) -> Tuple[Point, ...]:
    """
    Dos mallas espejo de 3 filas x 2 columnas, centradas en cada mitad del tablero

    Orden: mitad izquierda y luego derecha, cada una por filas (y, luego x).
    """
    width, height = board_size
    pegs: List[Point] = []
    for cx in (width / 4.0, 3.0 * width / 4.0):
        for row in (-1, 0, 1):
            for col in (-0.5, 0.5):
                pegs.append((cx + col * pitch, height / 2.0 + row * pitch))
    return tuple(pegs)


@dataclass(frozen=True)
class WorkspaceConfig:
    """Geometría del tablero, pegs y bloques (todo en mm)"""
    board_size: Point = (200.0, 130.0)
    peg_positions: Tuple[Point, ...] = field(default_factory=default_peg_layout)
    peg_height: float = 10.0
    peg_radius: float = 2.0
    block_edge: float = 18.0
    block_height: float = 15.0
    hole_span: Point = (5.0, 10.0)
    height_jitter_sd: float = 0.5
    peg_seat_height: float = 0.0

    def validate(self) -> "WorkspaceConfig":
        """Verifica los invariantes del tablero; lanza ConfigurationError si alguno falla"""
        if len(self.peg_positions) != N_PEGS:
            raise ConfigurationError(f"Se requieren {N_PEGS} pegs, hay {len(self.peg_positions)}")
        if len(self.left_peg_ids) != 6 or len(self.right_peg_ids) != 6:
            raise ConfigurationError("Cada mitad del tablero debe tener exactamente 6 pegs")
        pegs = np.asarray(self.peg_positions, dtype=float)
        gaps = np.linalg.norm(pegs[:, None, :] - pegs[None, :, :], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() < 2.0 * self.block_edge:
            raise ConfigurationError(
                f"Pegs demasiado cercanos: {gaps.min():.2f} mm < {2.0 * self.block_edge:.2f} mm"
            )
        low, high = self.hole_span
        if low <= 2.0 * self.peg_radius:
            raise ConfigurationError(
                f"Agujero mínimo {low} mm no admite un peg de radio {self.peg_radius} mm"
            )
        if high < low:
            raise ConfigurationError("hole_span debe ser (mínimo, máximo)")
        if min(self.peg_height, self.peg_radius, self.block_edge, self.block_height) <= 0:
            raise ConfigurationError("Las dimensiones de pegs y bloques deben ser positivas")
        if self.height_jitter_sd < 0:
            raise ConfigurationError("height_jitter_sd no puede ser negativo")
        return self

    def _half_ids(self, left: bool) -> List[int]:
        mid = self.board_size[0] / 2.0
        ids = [i for i, (x, _) in enumerate(self.peg_positions) if (x < mid) == left]
        return sorted(ids, key=lambda i: (self.peg_positions[i][1], self.peg_positions[i][0]))

    @property
    def left_peg_ids(self) -> List[int]:
        return self._half_ids(left=True)

    @property
    def right_peg_ids(self) -> List[int]:
        return self._half_ids(left=False)

    def peg(self, peg_id: int) -> np.ndarray:
        if not 0 <= peg_id < len(self.peg_positions):
            raise KeyError(f"Peg desconocido: {peg_id}")
        return np.asarray(self.peg_positions[peg_id], dtype=float)

    def is_left(self, point: Sequence[float]) -> bool:
        return float(point[0]) < self.board_size[0] / 2.0

    @property
    def top_hole_radius(self) -> float:
        return self.hole_span[0] / 2.0

    @property
    def bottom_hole_radius(self) -> float:
        return self.hole_span[1] / 2.0

    def hole_radius_at(self, z: float) -> float:
        """Radio del agujero cónico a la altura z sobre la base del bloque"""
        t = min(max(z / self.block_height, 0.0), 1.0)
        return self.bottom_hole_radius + (self.top_hole_radius - self.bottom_hole_radius) * t

    @property
    def insertion_clearance(self) -> float:
        """Holgura radial del bloque insertado, medida a la altura del tope del peg"""
        return max(self.hole_radius_at(self.peg_height - self.peg_seat_height) - self.peg_radius, 0.0)

    @property
    def peg_top(self) -> float:
        return self.peg_height


class StatusKind(str, Enum):
    ON_PEG = "OnPeg"
    STUCK_ON = "StuckOn"
    FALLEN = "Fallen"
    HELD = "Held"


@dataclass(frozen=True)
class BlockStatus:
    kind: StatusKind
    peg: Optional[int] = None
    point: Optional[Point] = None
    arm: Optional[str] = None

    @classmethod
    def on_peg(cls, peg: int) -> "BlockStatus":
        return cls(StatusKind.ON_PEG, peg=int(peg))

    @classmethod
    def stuck_on(cls, peg: int) -> "BlockStatus":
        return cls(StatusKind.STUCK_ON, peg=int(peg))

    @classmethod
    def fallen(cls, point: Sequence[float]) -> "BlockStatus":
        return cls(StatusKind.FALLEN, point=(float(point[0]), float(point[1])))

    @classmethod
    def held(cls, arm: str) -> "BlockStatus":
        return cls(StatusKind.HELD, arm=str(arm))

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value}
        if self.peg is not None:
            data["peg"] = self.peg
        if self.point is not None:
            data["point"] = list(self.point)
        if self.arm is not None:
            data["arm"] = self.arm
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BlockStatus":
        point = data.get("point")
        return cls(
            StatusKind(data["kind"]),
            peg=data.get("peg"),
            point=(float(point[0]), float(point[1])) if point is not None else None,
            arm=data.get("arm"),
        )


@dataclass
class BlockState:
    """Pose y estado de un bloque; base_height es la altura de su cara inferior"""
    id: int
    center: Point
    yaw: float
    status: BlockStatus
    vertex_heights: Tuple[float, float, float]
    base_height: float = 0.0
    support: Optional[int] = None

    def vertices(self, edge: float) -> np.ndarray:
        return triangle_vertices(self.center, self.yaw, edge)

    @property
    def top_height(self) -> float:
        return self.base_height + float(np.mean(self.vertex_heights))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "center_mm": [float(self.center[0]), float(self.center[1])],
            "yaw_deg": float(self.yaw),
            "status": self.status.to_dict(),
            "vertex_heights_mm": [float(h) for h in self.vertex_heights],
            "base_mm": float(self.base_height),
            "support": self.support,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BlockState":
        heights = data["vertex_heights_mm"]
        return cls(
            id=int(data["id"]),
            center=(float(data["center_mm"][0]), float(data["center_mm"][1])),
            yaw=float(data["yaw_deg"]),
            status=BlockStatus.from_dict(data["status"]),
            vertex_heights=(float(heights[0]), float(heights[1]), float(heights[2])),
            base_height=float(data.get("base_mm", 0.0)),
            support=data.get("support"),
        )


class Pose(NamedTuple):
    point: Point
    yaw: float


@dataclass
class Scene:
    config: WorkspaceConfig
    blocks: List[BlockState]
    rng_seed: int = 0

    def block(self, block_id: int) -> BlockState:
        for block in self.blocks:
            if block.id == block_id:
                return block
        raise KeyError(f"Bloque desconocido: {block_id}")

    def occupants(self, peg_id: int, exclude: Optional[int] = None) -> List[BlockState]:
        """Bloques sobre un peg (insertados o atascados), de abajo hacia arriba"""
        found = [
            b for b in self.blocks
            if b.status.peg == peg_id
            and b.status.kind in (StatusKind.ON_PEG, StatusKind.STUCK_ON)
            and b.id != exclude
        ]
        return sorted(found, key=lambda b: (b.base_height, b.id))

    def top_occupant(self, peg_id: int, exclude: Optional[int] = None) -> Optional[BlockState]:
        stack = self.occupants(peg_id, exclude=exclude)
        return stack[-1] if stack else None

    def is_covered(self, block_id: int) -> bool:
        """True si otro bloque descansa encima de éste"""
        return any(b.support == block_id for b in self.blocks if b.id != block_id)

    def validate(self) -> None:
        if len(self.blocks) != N_BLOCKS:
            raise ConfigurationError(f"La escena debe tener {N_BLOCKS} bloques, tiene {len(self.blocks)}")
        inserted: Dict[int, int] = {}
        for block in self.blocks:
            if block.status.kind == StatusKind.ON_PEG:
                if block.status.peg in inserted:
                    raise ConfigurationError(f"Dos bloques insertados en el peg {block.status.peg}")
                inserted[block.status.peg] = block.id

    def copy(self) -> "Scene":
        return copy.deepcopy(self)

    def to_dict(self) -> Dict[str, Any]:
        cfg = self.config
        return {
            "config": {
                "board_size_mm": list(cfg.board_size),
                "peg_positions_mm": [list(p) for p in cfg.peg_positions],
                "peg_height_mm": cfg.peg_height,
                "peg_radius_mm": cfg.peg_radius,
                "block_edge_mm": cfg.block_edge,
                "block_height_mm": cfg.block_height,
                "hole_span_mm": list(cfg.hole_span),
                "height_jitter_sd_mm": cfg.height_jitter_sd,
                "peg_seat_height_mm": cfg.peg_seat_height,
            },
            "rng_seed": self.rng_seed,
            "blocks": [b.to_dict() for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scene":
        raw = data["config"]
        config = WorkspaceConfig(
            board_size=tuple(raw["board_size_mm"]),
            peg_positions=tuple(tuple(p) for p in raw["peg_positions_mm"]),
            peg_height=raw["peg_height_mm"],
            peg_radius=raw["peg_radius_mm"],
            block_edge=raw["block_edge_mm"],
            block_height=raw["block_height_mm"],
            hole_span=tuple(raw["hole_span_mm"]),
            height_jitter_sd=raw["height_jitter_sd_mm"],
            peg_seat_height=raw["peg_seat_height_mm"],
        )
        return cls(config=config, blocks=[BlockState.from_dict(b) for b in data["blocks"]],
                    rng_seed=int(data["rng_seed"]))


def _jittered_heights(config: WorkspaceConfig, rng: np.random.Generator) -> Tuple[float, float, float]:
    sd = config.height_jitter_sd
    if sd == 0:
        return (config.block_height,) * 3
    noise = np.clip(rng.normal(0.0, sd, 3), -3.0 * sd, 3.0 * sd)
    heights = config.block_height + noise
    return (float(heights[0]), float(heights[1]), float(heights[2]))


def init_episode(config: WorkspaceConfig, seed: int) -> Scene:
    """
    Coloca los seis bloques sobre los pegs de la mitad izquierda

    El bloque i queda insertado en el i-ésimo peg izquierdo (orden por filas),
    con yaw uniforme en [0, 120), centro desplazado dentro de la holgura del
    agujero y alturas de vértice con ruido gaussiano truncado a ±3 sd.

    Args:
        config (WorkspaceConfig): geometría del tablero
        seed (int): semilla del episodio

    Returns:
        Scene: escena inicial, determinista para una semilla fija
    """
    config.validate()
    rng = np.random.default_rng(seed)
    clearance = config.insertion_clearance
    blocks: List[BlockState] = []
    for block_id, peg_id in enumerate(config.left_peg_ids):
        yaw = wrap_yaw(rng.uniform(0.0, 120.0))
        radius = clearance * math.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * math.pi)
        peg = config.peg(peg_id)
        center = (float(peg[0] + radius * math.cos(angle)), float(peg[1] + radius * math.sin(angle)))
        blocks.append(BlockState(
            id=block_id,
            center=center,
            yaw=yaw,
            status=BlockStatus.on_peg(peg_id),
            vertex_heights=_jittered_heights(config, rng),
            base_height=config.peg_seat_height,
        ))
    logger.debug(f"Episodio inicializado con semilla {seed}")
    return Scene(config=config, blocks=blocks, rng_seed=int(seed))


class PlaceResult(str, Enum):
    INSERTED = "Inserted"
    STUCK = "Stuck"
    FELL = "Fell"


@dataclass(frozen=True)
class PlaceOutcome:
    result: PlaceResult
    point: Point


class PickResult(str, Enum):
    LIFTED = "Lifted"
    MISSED = "Missed"


def _bottom_hole(config: WorkspaceConfig, center: Sequence[float]) -> np.ndarray:
    return regular_polygon(center, config.bottom_hole_radius)


def _snap_into_clearance(config: WorkspaceConfig, peg: np.ndarray, center: Sequence[float]) -> Point:
    offset = np.asarray(center, dtype=float) - peg
    dist = float(np.linalg.norm(offset))
    limit = config.insertion_clearance
    if dist > limit > 0:
        offset = offset * (limit / dist)
    elif limit == 0:
        offset = np.zeros(2)
    snapped = peg + offset
    return (float(snapped[0]), float(snapped[1]))


def _insert(block: BlockState, config: WorkspaceConfig, peg_id: int, center: Sequence[float]) -> None:
    block.center = _snap_into_clearance(config, config.peg(peg_id), center)
    block.status = BlockStatus.on_peg(peg_id)
    block.base_height = config.peg_seat_height
    block.support = None


def _rest_on(scene: Scene, block: BlockState, pose: Pose, peg_id: int) -> Optional[PlaceResult]:
    """
    Resuelve un bloque apoyado en pose sobre el peg sin caída aleatoria

    Returns:
        PlaceResult o None si el bloque no toca ni el peg ni el bloque de abajo
    """
    config = scene.config
    peg = config.peg(peg_id)
    occupant = scene.top_occupant(peg_id, exclude=block.id)
    footprint = triangle_vertices(pose.point, pose.yaw, config.block_edge)
    axis_in_hole = point_in_convex_polygon(peg, _bottom_hole(config, pose.point))

    block.center = (float(pose.point[0]), float(pose.point[1]))
    block.yaw = wrap_yaw(pose.yaw)

    if axis_in_hole and occupant is None:
        _insert(block, config, peg_id, pose.point)
        return PlaceResult.INSERTED

    touches_peg = distance_to_polygon(peg, footprint) <= config.peg_radius
    touches_occupant = occupant is not None and convex_polygons_overlap(
        footprint, occupant.vertices(config.block_edge)
    )
    if occupant is not None and (axis_in_hole or touches_occupant or touches_peg):
        block.status = BlockStatus.stuck_on(peg_id)
        block.base_height = max(occupant.top_height, config.peg_height)
        block.support = occupant.id
        return PlaceResult.STUCK
    if touches_peg:
        block.status = BlockStatus.stuck_on(peg_id)
        block.base_height = config.peg_height
        block.support = None
        return PlaceResult.STUCK
    return None


def _clamp_to_board(config: WorkspaceConfig, point: np.ndarray) -> Point:
    margin = circumradius(config.block_edge)
    width, height = config.board_size
    x = min(max(float(point[0]), margin), width - margin)
    y = min(max(float(point[1]), margin), height - margin)
    return (x, y)


def resolve_place(scene: Scene, block_id: int, drop_pose: Pose, target_peg: int, seed: int) -> PlaceOutcome:
    """
    Decide qué ocurre al soltar un bloque sujeto sobre un peg

    - Inserted: el eje del peg cae dentro del agujero inferior y no hay bloque debajo
    - Stuck: el agujero no alcanza el eje pero la huella toca el tope del peg,
      o el bloque descansa sobre otro bloque del mismo peg
    - Fell: en otro caso; el bloque rueda un desplazamiento gaussiano
      de sd = block_edge/2 (semilla fija) y queda sobre el tablero

    Args:
        scene (Scene): escena que se modifica en el lugar
        block_id (int): bloque sujeto que se suelta
        drop_pose (Pose): centro y yaw del bloque al soltarlo
        target_peg (int): peg objetivo
        seed (int): semilla de la caída

    Returns:
        PlaceOutcome: resultado y punto donde quedó el centro del bloque
    """
    block = scene.block(block_id)
    config = scene.config
    config.peg(target_peg)
    if block.status.kind != StatusKind.HELD:
        raise ValueError(f"El bloque {block_id} no está sujeto por ningún brazo")

    pose = Pose((float(drop_pose.point[0]), float(drop_pose.point[1])), float(drop_pose.yaw))
    result = _rest_on(scene, block, pose, target_peg)
    if result is not None:
        logger.debug(f"Bloque {block_id} -> {result.value} en peg {target_peg}")
        return PlaceOutcome(result, block.center)

    rng = np.random.default_rng(seed)
    tumble = rng.normal(0.0, config.block_edge / 2.0, 2)
    landing = _clamp_to_board(config, np.asarray(pose.point) + tumble)
    block.center = landing
    block.yaw = wrap_yaw(pose.yaw + rng.uniform(0.0, 120.0))
    block.status = BlockStatus.fallen(landing)
    block.base_height = 0.0
    block.support = None
    logger.debug(f"Bloque {block_id} cayó en ({landing[0]:.1f}, {landing[1]:.1f})")
    return PlaceOutcome(PlaceResult.FELL, landing)


def settle_supported(scene: Scene, removed_id: int) -> List[int]:
    """
    Reacomoda los bloques que descansaban sobre un bloque retirado

    Returns:
        List[int]: ids de bloques que quedaron insertados al reacomodarse
    """
    inserted: List[int] = []
    for block in scene.blocks:
        if block.support != removed_id or block.status.kind != StatusKind.STUCK_ON:
            continue
        peg_id = block.status.peg
        block.support = None
        result = _rest_on(scene, block, Pose(block.center, block.yaw), peg_id)
        if result is None:
            block.status = BlockStatus.fallen(block.center)
            block.base_height = 0.0
        elif result == PlaceResult.INSERTED:
            inserted.append(block.id)
    return inserted


def nudge_into_peg(scene: Scene, block_id: int) -> bool:
    """
    Empuja un bloque atascado sobre el tope de un peg libre hasta insertarlo

    Returns:
        bool: True si el bloque quedó insertado
    """
    block = scene.block(block_id)
    if block.status.kind != StatusKind.STUCK_ON or block.support is not None:
        return False
    peg_id = block.status.peg
    if scene.occupants(peg_id, exclude=block_id) or scene.is_covered(block_id):
        return False
    _insert(block, scene.config, peg_id, block.center)
    return True


def resolve_pick(scene: Scene, block_id: int, grasp_point: Sequence[float],
                 capture_radius: float, arm: str = "right") -> PickResult:
    """
    Decide si la pinza levanta el bloque

    El bloque se levanta si el punto de agarre alcanzado está a menos de
    capture_radius de la polilínea de sus aristas; en ese caso pasa a Held(arm)
    y los bloques apoyados sobre él se reacomodan.
    """
    block = scene.block(block_id)
    if block.status.kind == StatusKind.HELD:
        raise ValueError(f"El bloque {block_id} ya está sujeto por el brazo {block.status.arm}")
    distance = distance_to_polyline(grasp_point, block.vertices(scene.config.block_edge))
    if distance > capture_radius:
        logger.debug(f"Bloque {block_id}: agarre a {distance:.2f} mm del borde, fallo")
        return PickResult.MISSED
    block.status = BlockStatus.held(arm)
    block.support = None
    settle_supported(scene, block_id)
    return PickResult.LIFTED
