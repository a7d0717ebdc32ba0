"""
Render - Imagen de profundidad sintética vista desde arriba

Sustituye a la cámara de profundidad real con una proyección ortográfica:
- El tablero queda a board_depth mm del plano de la cámara
- Los pegs y las caras superiores de los bloques se dibujan con un z-buffer (mínima profundidad)
- Se agrega ruido gaussiano y píxeles perdidos (NaN) con semilla fija

También genera las máscaras binarias del bloque (anillo triangular) en k orientaciones.
Renderer y generador de máscaras usan la misma regla de rasterización: un píxel
se marca si su centro cae dentro del polígono.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from src.pegtransfer.errors import ConfigurationError, RenderError
from src.pegtransfer.geometry import (
    barycentric_weights,
    circumradius,
    points_in_convex_polygon,
    regular_polygon,
    triangle_vertices,
    wrap_yaw,
)
from src.pegtransfer.scene import BlockState, Scene, StatusKind, WorkspaceConfig

logger = logging.getLogger(__name__)

DROPOUT = float("nan")


@dataclass(frozen=True)
class CameraConfig:
    """
    Cámara ortográfica cenital

    El píxel (u, v) corresponde al punto del tablero origin_mm + (u, v) / pixels_per_mm.
    image_size es (ancho, alto) en píxeles.
    """
    pixels_per_mm: float = 5.0
    image_size: Tuple[int, int] = (1001, 651)
    board_depth: float = 500.0
    noise_sd: float = 0.5
    dropout_prob: float = 0.0
    origin_mm: Tuple[float, float] = (0.0, 0.0)

    @classmethod
    def for_board(cls, board_size: Sequence[float], pixels_per_mm: float = 5.0,
                  margin_mm: float = 0.0, **kwargs) -> "CameraConfig":
        """Cámara que cubre el tablero completo más un margen"""
        width = int(round((board_size[0] + 2.0 * margin_mm) * pixels_per_mm)) + 1
        height = int(round((board_size[1] + 2.0 * margin_mm) * pixels_per_mm)) + 1
        return cls(pixels_per_mm=pixels_per_mm, image_size=(width, height),
                   origin_mm=(-margin_mm, -margin_mm), **kwargs)

    def validate(self) -> "CameraConfig":
        if self.pixels_per_mm <= 0:
            raise ConfigurationError("pixels_per_mm debe ser positivo")
        if self.noise_sd < 0:
            raise ConfigurationError("noise_sd no puede ser negativo")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigurationError("dropout_prob debe estar en [0, 1)")
        if min(self.image_size) < 1:
            raise ConfigurationError("image_size debe ser positivo")
        if self.board_depth <= 0:
            raise ConfigurationError("board_depth debe ser positivo")
        return self

    @property
    def pixel_pitch(self) -> float:
        return 1.0 / self.pixels_per_mm

    def board_to_pixel(self, point) -> np.ndarray:
        """Punto(s) del tablero en mm -> coordenadas (u, v) en píxeles"""
        return (np.asarray(point, dtype=float) - np.asarray(self.origin_mm)) * self.pixels_per_mm

    def pixel_to_board(self, pixel) -> np.ndarray:
        """Coordenadas (u, v) en píxeles -> punto(s) del tablero en mm"""
        return np.asarray(self.origin_mm) + np.asarray(pixel, dtype=float) / self.pixels_per_mm


@dataclass
class DepthImage:
    """
    Imagen de profundidad en mm; data tiene forma (alto, ancho) indexada [v, u]

    offset es la posición (u, v) de esta imagen dentro de la imagen completa
    cuando proviene de un recorte.
    """
    data: np.ndarray
    pixel_pitch: float
    offset: Tuple[int, int] = (0, 0)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    def crop(self, u0: int, u1: int, v0: int = 0, v1: int = None) -> "DepthImage":
        v1 = self.height if v1 is None else v1
        u0, u1 = max(int(u0), 0), min(int(u1), self.width)
        v0, v1 = max(int(v0), 0), min(int(v1), self.height)
        return DepthImage(
            data=self.data[v0:v1, u0:u1].copy(),
            pixel_pitch=self.pixel_pitch,
            offset=(self.offset[0] + u0, self.offset[1] + v0),
        )

    def validate(self) -> None:
        finite = self.data[~np.isnan(self.data)]
        if finite.size and (not np.all(np.isfinite(finite)) or finite.min() <= 0):
            raise RenderError("La imagen contiene profundidades no positivas o infinitas")


@dataclass
class MaskSet:
    """Máscaras binarias (k, alto, ancho) del anillo del bloque y sus orientaciones"""
    masks: np.ndarray
    orientations: np.ndarray
    mask_pitch: float
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        self.orientations = np.asarray(self.orientations, dtype=float)
        if self.masks.ndim != 3 or len(self.masks) != len(self.orientations):
            raise ConfigurationError("masks debe tener forma (k, alto, ancho) con k orientaciones")
        self.areas = self.masks.sum(axis=(1, 2))
        if np.any(self.areas == 0):
            raise ConfigurationError("Todas las máscaras deben ser no vacías")
        if np.any(np.diff(self.orientations) <= 0):
            raise ConfigurationError("Las orientaciones deben ser estrictamente crecientes")

    @property
    def k(self) -> int:
        return int(self.masks.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.masks.shape[1]), int(self.masks.shape[2])

    @property
    def half_diagonal(self) -> float:
        h, w = self.shape
        return 0.5 * math.hypot(h, w)


def _anchor(center_px: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Píxel ancla entero y fracción; floor(c + 0.5) conmuta con desplazamientos enteros"""
    anchor = np.floor(center_px + 0.5)
    return anchor.astype(int), center_px - anchor


def _offset_grid(reach: int) -> Tuple[np.ndarray, np.ndarray]:
    span = np.arange(-reach, reach + 1)
    dv, du = np.meshgrid(span, span, indexing="ij")
    return du.ravel(), dv.ravel()


def _annulus_offsets(config: WorkspaceConfig, ppm: float, yaw: float,
                     frac: np.ndarray, reach: int, heights=None):
    """
    Píxeles del anillo (triángulo menos agujero superior) alrededor de un ancla

    Returns:
        (du, dv, alturas locales) con alturas interpoladas baricéntricamente
    """
    du, dv = _offset_grid(reach)
    local = (np.stack([du, dv], axis=1) - frac) / ppm
    vertices = triangle_vertices((0.0, 0.0), wrap_yaw(yaw), config.block_edge)
    hole = regular_polygon((0.0, 0.0), config.top_hole_radius)
    inside = points_in_convex_polygon(local, vertices) & ~points_in_convex_polygon(local, hole)
    if heights is None:
        return du[inside], dv[inside], None
    weights = barycentric_weights(local[inside], vertices)
    return du[inside], dv[inside], weights @ np.asarray(heights, dtype=float)


def _block_reach(config: WorkspaceConfig, ppm: float) -> int:
    return int(math.ceil(circumradius(config.block_edge) * ppm)) + 1


def block_footprint(block: BlockState, config: WorkspaceConfig, camera: CameraConfig):
    """
    Píxeles (u, v) y alturas sobre el tablero de la cara superior de un bloque

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: u, v, altura en mm
    """
    ppm = camera.pixels_per_mm
    anchor, frac = _anchor(camera.board_to_pixel(block.center))
    du, dv, local = _annulus_offsets(
        config, ppm, block.yaw, frac, _block_reach(config, ppm), heights=block.vertex_heights
    )
    return anchor[0] + du, anchor[1] + dv, block.base_height + local


def peg_footprint(peg: Sequence[float], config: WorkspaceConfig, camera: CameraConfig):
    """Píxeles (u, v) del disco superior de un peg"""
    ppm = camera.pixels_per_mm
    anchor, frac = _anchor(camera.board_to_pixel(peg))
    reach = int(math.ceil(config.peg_radius * ppm)) + 1
    du, dv = _offset_grid(reach)
    local = (np.stack([du, dv], axis=1) - frac) / ppm
    inside = np.hypot(local[:, 0], local[:, 1]) <= config.peg_radius
    return anchor[0] + du[inside], anchor[1] + dv[inside]


def _check_bounds(us: np.ndarray, vs: np.ndarray, camera: CameraConfig, what: str) -> None:
    width, height = camera.image_size
    if us.size and (us.min() < 0 or vs.min() < 0 or us.max() >= width or vs.max() >= height):
        raise RenderError(f"{what} queda fuera de la imagen {width}x{height}")


def render_depth(scene: Scene, camera: CameraConfig, seed: int) -> DepthImage:
    """
    Renderiza la escena como imagen de profundidad ortográfica

    Args:
        scene (Scene): escena a renderizar (los bloques sujetos no se dibujan)
        camera (CameraConfig): parámetros de la cámara
        seed (int): semilla para ruido y pérdida de píxeles

    Returns:
        DepthImage: profundidades en mm, NaN en píxeles perdidos

    Raises:
        RenderError: si la escena se sale de la imagen
    """
    camera.validate()
    config = scene.config
    width, height = camera.image_size
    depth = np.full((height, width), camera.board_depth, dtype=float)

    for peg_id, peg in enumerate(config.peg_positions):
        us, vs = peg_footprint(peg, config, camera)
        _check_bounds(us, vs, camera, f"Peg {peg_id}")
        depth[vs, us] = np.minimum(depth[vs, us], camera.board_depth - config.peg_height)

    for block in scene.blocks:
        if block.status.kind == StatusKind.HELD:
            continue
        us, vs, heights = block_footprint(block, config, camera)
        _check_bounds(us, vs, camera, f"Bloque {block.id}")
        depth[vs, us] = np.minimum(depth[vs, us], camera.board_depth - heights)

    if camera.noise_sd > 0 or camera.dropout_prob > 0:
        rng = np.random.default_rng(seed)
        if camera.noise_sd > 0:
            depth += rng.normal(0.0, camera.noise_sd, depth.shape)
        if camera.dropout_prob > 0:
            depth[rng.random(depth.shape) < camera.dropout_prob] = DROPOUT

    return DepthImage(data=depth.astype(np.float32), pixel_pitch=camera.pixel_pitch)


def block_mask(config: WorkspaceConfig, camera: CameraConfig, yaw: float) -> np.ndarray:
    """Máscara cuadrada del anillo nominal del bloque centrada en el píxel central"""
    reach = _block_reach(config, camera.pixels_per_mm)
    du, dv, _ = _annulus_offsets(config, camera.pixels_per_mm, yaw, np.zeros(2), reach)
    mask = np.zeros((2 * reach + 1, 2 * reach + 1), dtype=bool)
    mask[dv + reach, du + reach] = True
    return mask


def make_masks(config: WorkspaceConfig, camera: CameraConfig, k: int = 30) -> MaskSet:
    """
    Genera k máscaras del bloque en orientaciones φ_i = i·120/k grados

    Args:
        config (WorkspaceConfig): geometría del bloque
        camera (CameraConfig): escala en píxeles por mm
        k (int): número de orientaciones

    Returns:
        MaskSet: máscaras con dimensiones compartidas
    """
    if k < 1:
        raise ConfigurationError("Se requiere al menos una orientación")
    config.validate()
    camera.validate()
    orientations = np.arange(k) * (120.0 / k)
    masks = np.stack([block_mask(config, camera, phi) for phi in orientations])
    logger.debug(f"Generadas {k} máscaras de {masks.shape[1]}x{masks.shape[2]} px")
    return MaskSet(masks=masks, orientations=orientations, mask_pitch=camera.pixel_pitch)


def disc_mask(radius_px: float) -> np.ndarray:
    """Máscara de disco para detectar el tope de los pegs"""
    reach = int(math.ceil(radius_px))
    du, dv = _offset_grid(reach)
    inside = np.hypot(du, dv) <= radius_px
    mask = np.zeros((2 * reach + 1, 2 * reach + 1), dtype=bool)
    mask[dv[inside] + reach, du[inside] + reach] = True
    return mask
