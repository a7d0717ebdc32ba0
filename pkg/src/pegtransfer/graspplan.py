"""
Planificador de agarre y de colocación

- Cada arista del bloque aporta dos candidatos (a 1/3 y 2/3 de su longitud): 6 en total
- Solo se consideran las dos aristas cuyo punto medio está más cerca de la
  posición de reposo del brazo (así el brazo no alcanza "detrás" del peg)
- Entre los 4 candidatos elegibles se elige el más lejano al peg
- La colocación apunta al eje del peg; en modo bilateral cada brazo gira
  un ángulo fijo para que las muñecas no choquen
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.pegtransfer.geometry import triangle_vertices
from src.pegtransfer.scene import Pose, WorkspaceConfig

logger = logging.getLogger(__name__)

CALIBRATED_ROLLS = (0.0, 90.0)
DISTANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ArmId:
    value: str
    home_position: Tuple[float, float]

    def __post_init__(self):
        if self.value not in ("left", "right"):
            raise ValueError(f"Brazo desconocido: {self.value}")


def default_arms(config: WorkspaceConfig, standoff_mm: float = 50.0) -> Dict[str, ArmId]:
    """Brazos con posición de reposo en lados opuestos del tablero"""
    width, height = config.board_size
    return {
        "left": ArmId("left", (-standoff_mm, height / 2.0)),
        "right": ArmId("right", (width + standoff_mm, height / 2.0)),
    }


@dataclass(frozen=True)
class GraspCandidate:
    point: Tuple[float, float]
    side_index: int
    dist_to_peg: float
    approach_yaw: float
    order: int = 0


def snap_roll(angle_deg: float) -> float:
    """Ajusta una orientación de pinza (módulo 180°) al rol calibrado más cercano"""
    a = float(angle_deg) % 180.0
    to_zero = min(a, 180.0 - a)
    to_ninety = abs(a - 90.0)
    return 0.0 if to_zero <= to_ninety else 90.0


def enumerate_grasps(p_block: Sequence[float], theta: float, edge: float = 18.0,
                     p_peg: Optional[Sequence[float]] = None) -> List[GraspCandidate]:
    """
    Los 6 candidatos de agarre de un bloque

    Args:
        p_block: centro del bloque (mm)
        theta: yaw del bloque (grados)
        edge: longitud de la arista
        p_peg: eje del peg; por defecto el centro del bloque

    Returns:
        List[GraspCandidate]: lado s contribuye los puntos a 1/3 y 2/3 de v_s -> v_{s+1}
    """
    vertices = triangle_vertices(p_block, theta, edge)
    peg = np.asarray(p_block if p_peg is None else p_peg, dtype=float)
    candidates: List[GraspCandidate] = []
    for side in range(3):
        a, b = vertices[side], vertices[(side + 1) % 3]
        direction = b - a
        edge_angle = math.degrees(math.atan2(direction[1], direction[0]))
        roll = snap_roll(edge_angle + 90.0)
        for j, t in enumerate((1.0 / 3.0, 2.0 / 3.0)):
            point = a + t * direction
            candidates.append(GraspCandidate(
                point=(float(point[0]), float(point[1])),
                side_index=side,
                dist_to_peg=float(np.linalg.norm(point - peg)),
                approach_yaw=roll,
                order=2 * side + j,
            ))
    return candidates


def eligible_sides(p_block: Sequence[float], theta: float, edge: float,
                   home_position: Sequence[float]) -> List[int]:
    """Las dos aristas cuyo punto medio está más cerca de la posición de reposo"""
    vertices = triangle_vertices(p_block, theta, edge)
    home = np.asarray(home_position, dtype=float)
    distances = []
    for side in range(3):
        midpoint = 0.5 * (vertices[side] + vertices[(side + 1) % 3])
        distances.append((float(np.linalg.norm(midpoint - home)), side))
    return sorted(side for _, side in sorted(distances)[:2])


def plan_grasp(p_block: Sequence[float], theta: float, arm: ArmId, p_peg: Sequence[float],
               edge: float = 18.0) -> GraspCandidate:
    """
    Elige el candidato más lejano al peg entre las dos aristas cercanas al brazo

    Empates (dentro de 1e-9 mm) se resuelven por side_index y luego por orden del candidato.
    """
    sides = eligible_sides(p_block, theta, edge, arm.home_position)
    eligible = [c for c in enumerate_grasps(p_block, theta, edge, p_peg) if c.side_index in sides]
    best = eligible[0]
    for candidate in eligible[1:]:
        if candidate.dist_to_peg > best.dist_to_peg + DISTANCE_TOLERANCE:
            best = candidate
    logger.debug(f"Agarre {arm.value}: lado {best.side_index}, {best.dist_to_peg:.2f} mm del peg")
    return best


def plan_place(target_peg: Sequence[float], arm: ArmId, bilateral: bool,
               yaw_offsets: Tuple[float, float] = (-15.0, 15.0)) -> Pose:
    """
    Pose de colocación: eje del peg; yaw 0 en un brazo, ±offset en modo bilateral

    yaw_offsets es (brazo izquierdo, brazo derecho).
    """
    point = (float(target_peg[0]), float(target_peg[1]))
    if not bilateral:
        return Pose(point, 0.0)
    yaw = yaw_offsets[0] if arm.value == "left" else yaw_offsets[1]
    return Pose(point, float(yaw))
