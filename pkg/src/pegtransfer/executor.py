"""
Ejecutor - Máquina de estados de un intento y bucle del episodio

Cada intento recorre las fases:
    APPROACH -> DESCEND -> GRIP -> LIFT -> TRANSFER -> RELEASE -> DONE

La pinza baja cerrada y solo se abre cuando la punta está dentro de la ventana
de agarre o de liberación; abrirla por debajo de peg_top + clearance fuera de
esas ventanas lanza SafetyFault. Todo se ejecuta en lazo abierto: la
percepción corre una vez por dirección más un re-escaneo de recuperación.

El episodio mueve los seis bloques de izquierda a derecha y luego de vuelta.
En modo bilateral los dos brazos trabajan en pegs vecinos sin cruzarse; la
simultaneidad es tiempo lógico, intercalando las fases de ambos intentos.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum, auto
from typing import Any, Collection, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.pegtransfer.calibration import CalibrationTable, ErrorField, command_position
from src.pegtransfer.errors import ConfigurationError, NotEnoughBlocks, PegsNotFound, SafetyFault
from src.pegtransfer.geometry import rotation
from src.pegtransfer.graspplan import ArmId, GraspCandidate, default_arms, plan_grasp, plan_place
from src.pegtransfer.perception import block_band, detect_blocks, detect_pegs
from src.pegtransfer.render import CameraConfig, MaskSet, make_masks, render_depth
from src.pegtransfer.scene import (
    PickResult,
    PlaceResult,
    Pose,
    Scene,
    StatusKind,
    WorkspaceConfig,
    init_episode,
    nudge_into_peg,
    resolve_pick,
    resolve_place,
)

logger = logging.getLogger(__name__)

ArmTables = Mapping[str, Mapping[float, CalibrationTable]]
ArmFields = Union[ErrorField, Mapping[str, ErrorField]]


class Direction(str, Enum):
    LEFT_TO_RIGHT = "LeftToRight"
    RIGHT_TO_LEFT = "RightToLeft"


class AttemptResult(str, Enum):
    SUCCESS = "Success"
    PICK_FAIL = "PickFail"
    PLACE_STUCK = "PlaceStuck"
    PLACE_FALL = "PlaceFall"


class Mode(str, Enum):
    SINGLE = "single"
    BILATERAL = "bilateral"


class Jaw(str, Enum):
    OPEN = "Open"
    CLOSED = "Closed"


class AttemptPhase(Enum):
    APPROACH = auto()
    DESCEND = auto()
    GRIP = auto()
    LIFT = auto()
    TRANSFER = auto()
    RELEASE = auto()
    DONE = auto()


PHASE_ORDER = [
    AttemptPhase.APPROACH, AttemptPhase.DESCEND, AttemptPhase.GRIP,
    AttemptPhase.LIFT, AttemptPhase.TRANSFER, AttemptPhase.RELEASE, AttemptPhase.DONE,
]

PLACE_RESULTS = {
    PlaceResult.INSERTED: AttemptResult.SUCCESS,
    PlaceResult.STUCK: AttemptResult.PLACE_STUCK,
    PlaceResult.FELL: AttemptResult.PLACE_FALL,
}


@dataclass
class AttemptRecord:
    episode_id: int
    arm: str
    block_id: int
    direction: Direction
    result: AttemptResult
    duration_s: float
    is_recovery_attempt: bool = False
    corrected_later: bool = False
    mode: str = Mode.SINGLE.value
    attempt_index: int = 0

    def __post_init__(self):
        self.direction = Direction(self.direction)
        self.result = AttemptResult(self.result)
        if not self.duration_s > 0:
            raise ValueError(f"duration_s debe ser positiva: {self.duration_s}")

    def to_row(self) -> Dict[str, Any]:
        return {
            "episode_id": self.episode_id,
            "mode": self.mode,
            "arm": self.arm,
            "block_id": self.block_id,
            "direction": self.direction.value,
            "result": self.result.value,
            "duration_s": self.duration_s,
            "is_recovery": self.is_recovery_attempt,
            "corrected_later": self.corrected_later,
        }


@dataclass(frozen=True)
class MotionTimingConfig:
    """Duración de cada fase en segundos; la suma por defecto es 10.0 s"""
    approach_s: float = 2.0
    descend_s: float = 1.0
    grip_s: float = 1.0
    lift_s: float = 1.2
    transfer_s: float = 3.0
    release_s: float = 1.8
    bilateral_overlap: bool = True
    bilateral_sync_s: float = 1.3

    def validate(self) -> "MotionTimingConfig":
        phases = (self.approach_s, self.descend_s, self.grip_s,
                  self.lift_s, self.transfer_s, self.release_s)
        if min(phases) <= 0:
            raise ConfigurationError("Todas las duraciones de fase deben ser positivas")
        if self.bilateral_sync_s < 0:
            raise ConfigurationError("bilateral_sync_s no puede ser negativo")
        return self

    def phase_duration(self, phase: AttemptPhase) -> float:
        return {
            AttemptPhase.APPROACH: self.approach_s,
            AttemptPhase.DESCEND: self.descend_s,
            AttemptPhase.GRIP: self.grip_s,
            AttemptPhase.LIFT: self.lift_s,
            AttemptPhase.TRANSFER: self.transfer_s,
            AttemptPhase.RELEASE: self.release_s,
        }.get(phase, 0.0)

    @property
    def attempt_s(self) -> float:
        return math.fsum(self.phase_duration(p) for p in PHASE_ORDER)


@dataclass(frozen=True)
class ExecutorConfig:
    """Márgenes geométricos y parámetros del bucle del episodio (mm salvo indicación)"""
    clearance_mm: float = 5.0
    safe_height_mm: float = 30.0
    release_height_mm: float = 2.0
    grip_depth_mm: float = 3.0
    jaw_open_offset_mm: float = 3.0
    grasp_window_mm: float = 4.0
    release_window_mm: float = 4.0
    capture_radius_mm: float = 3.0
    match_radius_mm: float = 6.0
    band_epsilon_mm: float = 3.0
    max_attempts: int = 2
    max_detections: int = 12
    single_arm: str = "right"
    bilateral_yaw_deg: float = 15.0
    nudge_prob: float = 0.25
    perception: str = "depth"
    n_orientations: int = 30
    activation_floor: float = 0.5

    def validate(self) -> "ExecutorConfig":
        if self.perception not in ("depth", "ground_truth"):
            raise ConfigurationError(f"Modo de percepción desconocido: {self.perception}")
        if self.single_arm not in ("left", "right"):
            raise ConfigurationError(f"Brazo desconocido: {self.single_arm}")
        if self.max_attempts < 1:
            raise ConfigurationError("max_attempts debe ser al menos 1")
        if not 0.0 <= self.nudge_prob <= 1.0:
            raise ConfigurationError("nudge_prob debe estar en [0, 1]")
        if self.capture_radius_mm <= 0 or self.clearance_mm < 0:
            raise ConfigurationError("capture_radius_mm y clearance_mm deben ser positivos")
        return self


@dataclass
class GripperState:
    position: Tuple[float, float]
    height: float
    jaw: Jaw
    roll: float


@dataclass(frozen=True)
class Waypoint:
    name: str
    phase: str
    commanded: Tuple[float, float]
    achieved: Tuple[float, float]
    height: float
    jaw: Jaw
    roll: float
    window: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "phase": self.phase,
            "commanded_mm": list(self.commanded),
            "achieved_mm": list(self.achieved),
            "height_mm": self.height,
            "jaw": self.jaw.value,
            "roll_deg": self.roll,
            "window": self.window,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Waypoint":
        return cls(
            name=data["name"],
            phase=data["phase"],
            commanded=(float(data["commanded_mm"][0]), float(data["commanded_mm"][1])),
            achieved=(float(data["achieved_mm"][0]), float(data["achieved_mm"][1])),
            height=float(data["height_mm"]),
            jaw=Jaw(data["jaw"]),
            roll=float(data["roll_deg"]),
            window=bool(data["window"]),
        )


def audit_trace(trace: Sequence[Waypoint], peg_top: float, clearance: float) -> List[Waypoint]:
    """Waypoints con la pinza abierta por debajo de peg_top + clearance fuera de ventana"""
    limit = peg_top + clearance
    return [w for w in trace if w.jaw == Jaw.OPEN and w.height < limit and not w.window]


def _field_for(fields: ArmFields, arm: str) -> ErrorField:
    if isinstance(fields, ErrorField):
        return fields
    return fields[arm]


def _tables_for(calib: Optional[ArmTables], arm: str) -> Optional[Mapping[float, CalibrationTable]]:
    if calib is None:
        return None
    if 0.0 in calib or 90.0 in calib:
        return calib
    return calib[arm]


class PickPlaceAttempt:
    """
    Máquina de estados de un intento de transferencia

    step() ejecuta una fase completa y avanza; run() llega hasta DONE.
    """

    def __init__(self, scene: Scene, arm: ArmId, block_id: int, grasp: GraspCandidate,
                 place: Pose, detected: Pose, target_peg: int,
                 calib: Optional[Mapping[float, CalibrationTable]], field: ErrorField,
                 timing: MotionTimingConfig, settings: ExecutorConfig, seed: int,
                 episode_id: int = 0, direction: Direction = Direction.LEFT_TO_RIGHT,
                 is_recovery: bool = False, force_pick_fail: bool = False,
                 mode: str = Mode.SINGLE.value):
        self.scene = scene
        self.arm = arm
        self.block_id = block_id
        self.grasp = grasp
        self.place = place
        self.detected = detected
        self.target_peg = target_peg
        self.calib = calib
        self.field = field
        self.timing = timing
        self.settings = settings
        self.episode_id = episode_id
        self.direction = direction
        self.is_recovery = is_recovery
        self.force_pick_fail = force_pick_fail
        self.mode = mode

        config = scene.config
        self.peg_top = config.peg_height
        self.grasp_z = config.peg_seat_height + config.block_height - settings.grip_depth_mm
        self.release_z = (config.peg_height + settings.release_height_mm
                          + config.block_height - settings.grip_depth_mm)
        self.safe_z = max(settings.safe_height_mm, self.peg_top + settings.clearance_mm)
        self.place_roll = min(max(grasp.approach_yaw + place.yaw, 0.0), 90.0)

        self._rng = np.random.default_rng(seed)
        self.phase = AttemptPhase.APPROACH
        self.elapsed = 0.0
        self.trace: List[Waypoint] = []
        self.gripper = GripperState(arm.home_position, self.safe_z, Jaw.CLOSED, grasp.approach_yaw)
        self.result: Optional[AttemptResult] = None
        self._held_offset: Optional[np.ndarray] = None
        self._held_yaw = 0.0
        self._release_command = self._release_target()

    @property
    def done(self) -> bool:
        return self.phase == AttemptPhase.DONE

    def _seed(self) -> int:
        return int(self._rng.integers(2 ** 63))

    def _release_target(self) -> np.ndarray:
        """Comando sobre el peg que compensa la posición del agarre respecto al centro detectado"""
        lever = np.asarray(self.grasp.point) - np.asarray(self.detected.point)
        return np.asarray(self.place.point, dtype=float) + rotation(self.place.yaw) @ lever

    def _in_window(self, height: float) -> bool:
        if self.phase in (AttemptPhase.DESCEND, AttemptPhase.GRIP):
            return self.grasp_z - 1e-9 <= height <= self.grasp_z + self.settings.grasp_window_mm
        if self.phase == AttemptPhase.RELEASE:
            return self.release_z - 1e-9 <= height <= self.release_z + self.settings.release_window_mm
        return False

    def _record(self, name: str, commanded, achieved, height: float, jaw: Jaw, roll: float) -> Waypoint:
        waypoint = Waypoint(
            name=name,
            phase=self.phase.name,
            commanded=(float(commanded[0]), float(commanded[1])),
            achieved=(float(achieved[0]), float(achieved[1])),
            height=float(height),
            jaw=jaw,
            roll=float(roll),
            window=self._in_window(height),
        )
        if audit_trace([waypoint], self.peg_top, self.settings.clearance_mm):
            logger.error(f"❌ Falla de seguridad en '{name}' a {height:.2f} mm")
            raise SafetyFault(waypoint)
        self.trace.append(waypoint)
        self.gripper = GripperState(waypoint.achieved, waypoint.height, jaw, roll)
        return waypoint

    def _move(self, name: str, target, height: float, roll: float) -> np.ndarray:
        achieved = command_position(target, roll, self.calib, self.field, self._seed())
        self._record(name, target, achieved, height, self.gripper.jaw, roll)
        return achieved

    def _set_jaw(self, name: str, jaw: Jaw) -> None:
        g = self.gripper
        self._record(name, g.position, g.position, g.height, jaw, g.roll)

    def step(self) -> AttemptPhase:
        """Ejecuta la fase actual y avanza a la siguiente"""
        handler = {
            AttemptPhase.APPROACH: self._approach,
            AttemptPhase.DESCEND: self._descend,
            AttemptPhase.GRIP: self._grip,
            AttemptPhase.LIFT: self._lift,
            AttemptPhase.TRANSFER: self._transfer,
            AttemptPhase.RELEASE: self._release,
        }.get(self.phase)
        if handler is None:
            return self.phase
        handler()
        self.elapsed += self.timing.phase_duration(self.phase)
        self.phase = PHASE_ORDER[PHASE_ORDER.index(self.phase) + 1]
        return self.phase

    def _approach(self) -> None:
        self._move("approach", self.grasp.point, self.safe_z, self.grasp.approach_yaw)

    def _descend(self) -> None:
        roll = self.grasp.approach_yaw
        self._move("pregrasp", self.grasp.point, self.grasp_z + self.settings.jaw_open_offset_mm, roll)
        self._set_jaw("open_jaw", Jaw.OPEN)
        self._achieved_grasp = self._move("grasp", self.grasp.point, self.grasp_z, roll)

    def _grip(self) -> None:
        self._set_jaw("close_jaw", Jaw.CLOSED)
        block = self.scene.block(self.block_id)
        grasp_point = np.asarray(self._achieved_grasp, dtype=float)
        if self.force_pick_fail:
            radial = grasp_point - np.asarray(block.center)
            norm = float(np.linalg.norm(radial)) or 1.0
            reach = self.settings.capture_radius_mm + self.scene.config.block_edge
            grasp_point = grasp_point + radial / norm * reach
        outcome = resolve_pick(self.scene, self.block_id, grasp_point,
                               self.settings.capture_radius_mm, arm=self.arm.value)
        if outcome == PickResult.LIFTED:
            self._held_offset = np.asarray(block.center) - grasp_point
            self._held_yaw = block.yaw
        else:
            self.result = AttemptResult.PICK_FAIL

    def _lift(self) -> None:
        self._move("lift", self.grasp.point, self.safe_z, self.grasp.approach_yaw)

    def _transfer(self) -> None:
        self._move("transfer", self._release_command, self.safe_z, self.place_roll)

    def _release(self) -> None:
        achieved = self._move("release", self._release_command, self.release_z, self.place_roll)
        self._set_jaw("open_jaw", Jaw.OPEN)
        if self._held_offset is not None:
            center = (achieved + rotation(self.place.yaw) @ self._held_offset
                      + self.field.release_offset(self._rng))
            drop = Pose((float(center[0]), float(center[1])), self._held_yaw + self.place.yaw)
            outcome = resolve_place(self.scene, self.block_id, drop, self.target_peg, self._seed())
            self.result = PLACE_RESULTS[outcome.result]
        self._move("retreat", self._release_command, self.safe_z, self.place_roll)
        self._set_jaw("close_jaw", Jaw.CLOSED)

    def run(self) -> AttemptRecord:
        while not self.done:
            self.step()
        return self.record()

    def record(self, attempt_index: int = 0) -> AttemptRecord:
        if not self.done or self.result is None:
            raise RuntimeError("El intento no ha terminado")
        return AttemptRecord(
            episode_id=self.episode_id,
            arm=self.arm.value,
            block_id=self.block_id,
            direction=self.direction,
            result=self.result,
            duration_s=self.elapsed,
            is_recovery_attempt=self.is_recovery,
            mode=self.mode,
            attempt_index=attempt_index,
        )


def execute_attempt(scene: Scene, arm: ArmId, block_id: int, grasp: GraspCandidate, place: Pose,
                    calib: Optional[Mapping[float, CalibrationTable]], field: ErrorField,
                    timing: MotionTimingConfig, seed: int, target_peg: Optional[int] = None,
                    detected: Optional[Pose] = None, settings: Optional[ExecutorConfig] = None,
                    **kwargs) -> AttemptRecord:
    """
    Ejecuta un intento completo de tomar y colocar un bloque

    Args:
        scene (Scene): escena que se modifica en el lugar
        arm (ArmId): brazo que ejecuta
        block_id (int): bloque a mover
        grasp (GraspCandidate): agarre planificado
        place (Pose): pose de colocación (eje del peg y yaw)
        calib: tablas por rol del brazo o None
        field (ErrorField): error de actuación del brazo
        timing (MotionTimingConfig): duraciones de fase
        seed (int): semilla del intento
        target_peg (int): peg objetivo; por defecto el más cercano a place.point
        detected (Pose): pose detectada del bloque; por defecto la pose real

    Returns:
        AttemptRecord: resultado clasificado y duración

    Raises:
        SafetyFault: si la pinza se abre por debajo de la altura segura fuera de ventana
    """
    block = scene.block(block_id)
    if block.status.kind == StatusKind.HELD and block.status.arm != arm.value:
        raise ValueError(f"El bloque {block_id} está sujeto por el brazo {block.status.arm}")
    if target_peg is None:
        pegs = np.asarray(scene.config.peg_positions)
        target_peg = int(np.argmin(np.linalg.norm(pegs - np.asarray(place.point), axis=1)))
    if detected is None:
        detected = Pose(block.center, block.yaw)
    attempt = PickPlaceAttempt(scene, arm, block_id, grasp, place, detected, target_peg,
                               calib, field, timing, settings or ExecutorConfig(), seed, **kwargs)
    record = attempt.run()
    logger.debug(f"Bloque {block_id} ({arm.value}): {record.result.value} en {record.duration_s:.1f} s")
    return record


@dataclass(frozen=True)
class TransferJob:
    """Un bloque detectado sobre un peg de origen con su peg de destino"""
    slot: int
    block_id: int
    source_peg: int
    target_peg: int
    pose: Pose
    arm: Optional[str] = None


def no_crossing(round_jobs: Sequence[TransferJob], pegs) -> bool:
    """En una ronda de dos, el brazo izquierdo agarra y coloca estrictamente a la izquierda"""
    if len(round_jobs) < 2:
        return True
    by_arm = {job.arm: job for job in round_jobs}
    left, right = by_arm.get("left"), by_arm.get("right")
    if left is None or right is None:
        return False
    pegs = np.asarray(pegs, dtype=float)
    return (left.pose.point[0] < right.pose.point[0]
            and pegs[left.target_peg][0] < pegs[right.target_peg][0])


def bilateral_schedule(jobs: Sequence[TransferJob], pegs) -> List[List[TransferJob]]:
    """
    Agrupa los trabajos en rondas de pegs vecinos (misma fila) para los dos brazos

    En cada ronda el brazo izquierdo toma el bloque de menor x y el destino de
    menor x; el derecho, los otros. Un trabajo sin pareja va al brazo de su lado
    dentro de la fila.
    """
    pegs = np.asarray(pegs, dtype=float)
    rounds: Dict[int, List[TransferJob]] = {}
    for job in sorted(jobs, key=lambda j: j.slot):
        rounds.setdefault(job.slot // 2, []).append(job)

    schedule: List[List[TransferJob]] = []
    for key in sorted(rounds):
        pair = sorted(rounds[key], key=lambda j: j.pose.point[0])
        if len(pair) == 1:
            job = pair[0]
            schedule.append([replace(job, arm="left" if job.slot % 2 == 0 else "right")])
            continue
        targets = sorted((j.target_peg for j in pair), key=lambda t: pegs[t][0])
        assigned = [replace(pair[0], arm="left", target_peg=targets[0]),
                    replace(pair[1], arm="right", target_peg=targets[1])]
        if not no_crossing(assigned, pegs):
            raise ConfigurationError(f"La ronda {key} cruza los brazos")
        schedule.append(assigned)
    return schedule


@dataclass
class EpisodeReport:
    episode_id: int
    mode: str
    seed: int
    records: List[AttemptRecord]
    episode_time_s: float
    traces: List[Dict[str, Any]] = field(default_factory=list)
    final_scene: Optional[Scene] = None
    pegs_from_scene: bool = False

    def summary(self) -> Dict[str, Any]:
        counts = {r.value: 0 for r in AttemptResult}
        for record in self.records:
            counts[record.result.value] += 1
        return {
            "episode_id": self.episode_id,
            "mode": self.mode,
            "seed": self.seed,
            "attempts": len(self.records),
            "results": counts,
            "recovery_attempts": sum(r.is_recovery_attempt for r in self.records),
            "corrected_later": sum(r.corrected_later for r in self.records),
            "episode_time_s": round(self.episode_time_s, 3),
            "pegs_from_scene": self.pegs_from_scene,
        }


class EpisodeRunner:
    """Estado de un episodio: escena, relojes, registros y flujo aleatorio propio"""

    def __init__(self, config: WorkspaceConfig, mode: Union[Mode, str],
                 calib: Optional[ArmTables], fields: ArmFields, timing: MotionTimingConfig,
                 seed: int, settings: Optional[ExecutorConfig] = None,
                 camera: Optional[CameraConfig] = None, episode_id: int = 0,
                 forced_pick_failures: Collection[Tuple[Direction, int]] = (),
                 record_traces: bool = False, masks: Optional[MaskSet] = None):
        self.config = config.validate()
        self.mode = Mode(mode)
        self.calib = calib
        self.fields = fields
        self.timing = timing.validate()
        self.seed = int(seed)
        self.settings = (settings or ExecutorConfig()).validate()
        self.camera = camera or CameraConfig.for_board(config.board_size)
        self.episode_id = episode_id
        self.forced = {(Direction(d), int(b)) for d, b in forced_pick_failures}
        self.record_traces = record_traces
        self.arms = default_arms(config)
        self.masks = masks
        if self.settings.perception == "depth" and self.masks is None:
            self.masks = make_masks(config, self.camera, self.settings.n_orientations)

        self.rng = np.random.default_rng([self.seed, 1])
        self.scene = init_episode(config, self.seed)
        self.records: List[AttemptRecord] = []
        self.traces: List[Dict[str, Any]] = []
        self.clock = 0.0
        self.pegs = np.asarray(config.peg_positions, dtype=float)
        self.pegs_from_scene = False
        self._stuck: Dict[int, int] = {}

    def _next_seed(self) -> int:
        return int(self.rng.integers(2 ** 63))

    def locate_pegs(self) -> None:
        """Detecta los pegs una vez por episodio; si falla usa la geometría conocida"""
        if self.settings.perception != "depth":
            self.pegs_from_scene = True
            return
        image = render_depth(self.scene, self.camera, self._next_seed())
        try:
            pixels = detect_pegs(image, self.camera, self.config, self.settings.activation_floor)
        except PegsNotFound as e:
            logger.warning(f"⚠️ Episodio {self.episode_id}: {e}; se usan los pegs de la escena")
            self.pegs_from_scene = True
            return
        known = np.asarray(self.config.peg_positions, dtype=float)
        for pixel in pixels:
            point = self.camera.pixel_to_board(pixel)
            nearest = int(np.argmin(np.linalg.norm(known - point, axis=1)))
            if np.linalg.norm(known[nearest] - point) <= self.settings.match_radius_mm:
                self.pegs[nearest] = point

    def _visible_blocks(self, source_left: bool) -> List[Pose]:
        """Poses detectadas (mm) de los bloques visibles en la mitad de origen"""
        config = self.config
        if self.settings.perception == "ground_truth":
            nominal = config.peg_seat_height + config.block_height
            poses = []
            for block in self.scene.blocks:
                if block.status.kind not in (StatusKind.ON_PEG, StatusKind.FALLEN):
                    continue
                if self.scene.is_covered(block.id) or config.is_left(block.center) != source_left:
                    continue
                if abs(block.top_height - nominal) <= self.settings.band_epsilon_mm:
                    poses.append(Pose(block.center, block.yaw))
            return poses

        image = render_depth(self.scene, self.camera, self._next_seed())
        mid_u = int(round(self.camera.board_to_pixel((config.board_size[0] / 2.0, 0.0))[0]))
        crop = image.crop(0, mid_u) if source_left else image.crop(mid_u, image.width)
        band = block_band(config, self.camera, self.settings.band_epsilon_mm)
        try:
            detections = detect_blocks(crop, self.settings.max_detections, self.masks, band,
                                       self.settings.activation_floor)
        except NotEnoughBlocks as e:
            detections = e.detections
        return [Pose(tuple(self.camera.pixel_to_board(d.p)), d.theta) for d in detections]

    def perceive(self, source_ids: Sequence[int], target_ids: Sequence[int]) -> List[TransferJob]:
        """Empareja detecciones con pegs de origen y con los bloques reales"""
        source_left = self.config.is_left(self.config.peg(source_ids[0]))
        jobs: Dict[int, TransferJob] = {}
        radius = self.settings.match_radius_mm
        for pose in self._visible_blocks(source_left):
            point = np.asarray(pose.point)
            gaps = [np.linalg.norm(self.pegs[p] - point) for p in source_ids]
            slot = int(np.argmin(gaps))
            if gaps[slot] > radius or slot in jobs:
                continue
            candidates = [b for b in self.scene.blocks if b.status.kind != StatusKind.HELD]
            block = min(candidates, key=lambda b: np.linalg.norm(np.asarray(b.center) - point))
            if np.linalg.norm(np.asarray(block.center) - point) > radius:
                continue
            jobs[slot] = TransferJob(slot, block.id, source_ids[slot], target_ids[slot], pose)
        return [jobs[s] for s in sorted(jobs)]

    def _attempt(self, job: TransferJob, arm_name: str, direction: Direction,
                 is_recovery: bool) -> PickPlaceAttempt:
        arm = self.arms[arm_name]
        grasp = plan_grasp(job.pose.point, job.pose.yaw, arm, self.pegs[job.source_peg],
                           self.config.block_edge)
        offsets = (-self.settings.bilateral_yaw_deg, self.settings.bilateral_yaw_deg)
        place = plan_place(self.pegs[job.target_peg], arm, self.mode == Mode.BILATERAL, offsets)
        forced = not is_recovery and (direction, job.block_id) in self.forced
        return PickPlaceAttempt(
            self.scene, arm, job.block_id, grasp, place, job.pose, job.target_peg,
            _tables_for(self.calib, arm_name), _field_for(self.fields, arm_name),
            self.timing, self.settings, self._next_seed(),
            episode_id=self.episode_id, direction=direction, is_recovery=is_recovery,
            force_pick_fail=forced, mode=self.mode.value,
        )

    def _finish(self, attempt: PickPlaceAttempt) -> AttemptRecord:
        record = attempt.record(attempt_index=len(self.records))
        self.records.append(record)
        if record.result == AttemptResult.PLACE_STUCK:
            self._stuck[record.block_id] = len(self.records) - 1
        if self.record_traces:
            self.traces.append({
                "attempt_index": record.attempt_index,
                "block_id": record.block_id,
                "arm": record.arm,
                "waypoints": [w.to_dict() for w in attempt.trace],
            })
        logger.debug(f"Episodio {self.episode_id} bloque {record.block_id}: {record.result.value}")
        return record

    def _mark_corrected(self, block_id: int) -> None:
        index = self._stuck.pop(block_id, None)
        if index is not None:
            self.records[index].corrected_later = True
            logger.debug(f"Bloque {block_id} atascado quedó insertado más tarde")

    def _after_release(self, target_pegs: Sequence[int]) -> None:
        """Registra correcciones: bloques que quedaron insertados o fueron empujados al peg"""
        for block_id in list(self._stuck):
            if self.scene.block(block_id).status.kind == StatusKind.ON_PEG:
                self._mark_corrected(block_id)
        half = set(int(p) for p in target_pegs)
        for block in sorted(self.scene.blocks, key=lambda b: b.id):
            if block.status.kind != StatusKind.STUCK_ON or block.status.peg not in half:
                continue
            if block.support is not None or self.settings.nudge_prob == 0:
                continue
            if self.rng.random() < self.settings.nudge_prob and nudge_into_peg(self.scene, block.id):
                self._mark_corrected(block.id)

    def _run_single(self, jobs: Sequence[TransferJob], direction: Direction,
                    is_recovery: bool, target_ids: Sequence[int]) -> None:
        for job in jobs:
            attempt = self._attempt(job, self.settings.single_arm, direction, is_recovery)
            attempt.run()
            self.clock += attempt.elapsed
            self._finish(attempt)
            self._after_release(target_ids)

    def _run_bilateral(self, jobs: Sequence[TransferJob], direction: Direction,
                       is_recovery: bool, target_ids: Sequence[int]) -> None:
        for round_jobs in bilateral_schedule(jobs, self.pegs):
            attempts = [self._attempt(job, job.arm, direction, is_recovery) for job in round_jobs]
            while not all(a.done for a in attempts):
                for attempt in attempts:
                    if not attempt.done:
                        attempt.step()
            durations = [a.elapsed for a in attempts]
            if self.timing.bilateral_overlap:
                self.clock += max(durations) + (self.timing.bilateral_sync_s if len(attempts) > 1 else 0.0)
            else:
                self.clock += math.fsum(durations)
            for attempt in attempts:
                self._finish(attempt)
            self._after_release(target_ids)

    def run_direction(self, direction: Direction) -> None:
        left, right = self.config.left_peg_ids, self.config.right_peg_ids
        source_ids, target_ids = (left, right) if direction == Direction.LEFT_TO_RIGHT else (right, left)
        runner = self._run_bilateral if self.mode == Mode.BILATERAL else self._run_single

        jobs = self.perceive(source_ids, target_ids)
        if len(jobs) < len(source_ids):
            logger.warning(f"⚠️ Episodio {self.episode_id} {direction.value}: "
                           f"{len(jobs)} de {len(source_ids)} bloques detectados")
        runner(jobs, direction, False, target_ids)

        attempts: Dict[int, int] = {}
        for record in self.records:
            if record.direction == direction:
                attempts[record.block_id] = attempts.get(record.block_id, 0) + 1
        retries = [job for job in self.perceive(source_ids, target_ids)
                   if attempts.get(job.block_id, 0) < self.settings.max_attempts]
        if retries:
            logger.debug(f"Episodio {self.episode_id}: {len(retries)} reintentos en {direction.value}")
            runner(retries, direction, True, target_ids)

    def run(self) -> EpisodeReport:
        self.locate_pegs()
        for direction in (Direction.LEFT_TO_RIGHT, Direction.RIGHT_TO_LEFT):
            self.run_direction(direction)
        self.scene.validate()
        return EpisodeReport(
            episode_id=self.episode_id,
            mode=self.mode.value,
            seed=self.seed,
            records=self.records,
            episode_time_s=self.clock,
            traces=self.traces,
            final_scene=self.scene,
            pegs_from_scene=self.pegs_from_scene,
        )


def run_episode(config: WorkspaceConfig, mode: Union[Mode, str], calib: Optional[ArmTables],
                field: ArmFields, timing: MotionTimingConfig, seed: int, **kwargs) -> EpisodeReport:
    """
    Ejecuta un episodio completo (izquierda -> derecha y de vuelta)

    Args:
        config (WorkspaceConfig): geometría del tablero
        mode: "single" o "bilateral"
        calib: tablas por brazo y rol, o None para operar sin calibración
        field: ErrorField común o un ErrorField por brazo
        timing (MotionTimingConfig): duraciones de fase
        seed (int): semilla del episodio
        **kwargs: settings, camera, episode_id, forced_pick_failures, record_traces, masks

    Returns:
        EpisodeReport: registros de intentos y tiempo del episodio

    Raises:
        SafetyFault: se propaga sin registrar el episodio
    """
    report = EpisodeRunner(config, mode, calib, field, timing, seed, **kwargs).run()
    logger.debug(f"Episodio {report.episode_id}: {len(report.records)} intentos, "
                 f"{report.episode_time_s:.1f} s")
    return report
