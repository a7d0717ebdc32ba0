"""
Percepción por profundidad - Detección de bloques y pegs

Pipeline de detección basado solo en profundidad:
1. Umbral de la imagen a una banda [d - ε, d + ε]
2. Correlación cruzada de la imagen binaria con cada máscara orientada
3. Extracción iterativa: se toma el máximo global (orientación, posición),
   se registra y se anulan las activaciones en un disco de radio igual a media
   diagonal de la máscara, en todos los mapas

La correlación se calcula en frecuencia (scipy.fft) y tiene una ruta directa
(scipy.signal.convolve2d) como referencia; ambas se redondean a enteros, por lo
que las decisiones de argmax coinciden exactamente.

Empates: gana la orientación de menor índice y luego la posición en orden de filas.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy import signal

from src.pegtransfer.errors import NotEnoughBlocks, PegsNotFound
from src.pegtransfer.render import CameraConfig, DepthImage, MaskSet, disc_mask
from src.pegtransfer.scene import WorkspaceConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DepthBand:
    d: float
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon debe ser positivo")


@dataclass(frozen=True)
class Detection:
    """Detección en píxeles de la imagen completa: p = (u, v)"""
    p: Tuple[int, int]
    theta: float
    score: float
    orientation_index: int = 0

    def to_dict(self) -> dict:
        return {"u": int(self.p[0]), "v": int(self.p[1]),
                "theta_deg": float(self.theta), "score": float(self.score)}


def block_band(config: WorkspaceConfig, camera: CameraConfig, epsilon: float = 3.0) -> DepthBand:
    """Banda de profundidad de la cara superior de un bloque insertado"""
    return DepthBand(camera.board_depth - config.peg_seat_height - config.block_height, epsilon)


def peg_band(config: WorkspaceConfig, camera: CameraConfig, epsilon: float = 1.5) -> DepthBand:
    """Banda de profundidad del tope de los pegs"""
    return DepthBand(camera.board_depth - config.peg_height, epsilon)


def threshold_depth(image: DepthImage, band: DepthBand) -> np.ndarray:
    """Píxeles cuya profundidad cae en [d - ε, d + ε]; los NaN quedan en False"""
    data = image.data
    with np.errstate(invalid="ignore"):
        return (data >= band.d - band.epsilon) & (data <= band.d + band.epsilon)


def _valid_slice(shape: Tuple[int, int], mask_shape: Tuple[int, int]) -> Tuple[slice, slice]:
    """Recorte de la correlación completa alineado con el centro de la máscara"""
    h, w = mask_shape
    r0 = h - 1 - h // 2
    c0 = w - 1 - w // 2
    return slice(r0, r0 + shape[0]), slice(c0, c0 + shape[1])


def correlate_masks(binary: np.ndarray, masks: np.ndarray, method: str = "fft") -> np.ndarray:
    """
    Mapas de activación (k, alto, ancho) de la imagen binaria con cada máscara

    La activación en (v, u) es el número de píxeles de la máscara, centrada en
    (v, u), que coinciden con píxeles verdaderos de la imagen.

    Args:
        binary: imagen booleana (alto, ancho)
        masks: máscaras booleanas (k, h, w)
        method: "fft" (frecuencia) o "direct" (suma directa)
    """
    image = np.asarray(binary, dtype=float)
    stack = np.asarray(masks, dtype=float)
    k, h, w = stack.shape
    rows, cols = _valid_slice(image.shape, (h, w))
    out = np.empty((k,) + image.shape, dtype=np.int64)

    if method == "direct":
        for i in range(k):
            full = signal.convolve2d(image, stack[i, ::-1, ::-1], mode="full")
            out[i] = np.rint(full[rows, cols]).astype(np.int64)
        return out
    if method != "fft":
        raise ValueError(f"Método de correlación desconocido: {method}")

    full_shape = (image.shape[0] + h - 1, image.shape[1] + w - 1)
    fshape = tuple(sp_fft.next_fast_len(s, real=True) for s in full_shape)
    image_f = sp_fft.rfft2(image, s=fshape)
    for i in range(k):
        mask_f = sp_fft.rfft2(stack[i, ::-1, ::-1], s=fshape)
        full = sp_fft.irfft2(image_f * mask_f, s=fshape)[: full_shape[0], : full_shape[1]]
        out[i] = np.rint(full[rows, cols]).astype(np.int64)
    return out


def _suppression_disc(radius: float) -> Tuple[np.ndarray, int]:
    reach = int(np.floor(radius))
    span = np.arange(-reach, reach + 1)
    dv, du = np.meshgrid(span, span, indexing="ij")
    return (du * du + dv * dv) <= radius * radius, reach


def extract_peaks(activations: np.ndarray, n: int, orientations: Sequence[float],
                  areas: Sequence[float], suppression_radius: float,
                  floor_fraction: float = 0.5, offset: Tuple[int, int] = (0, 0)) -> List[Detection]:
    """
    Extracción iterativa de n máximos con supresión en todos los mapas

    Raises:
        NotEnoughBlocks: si la mejor activación restante queda bajo el umbral
    """
    maps = activations.copy()
    _, height, width = maps.shape
    disc, reach = _suppression_disc(suppression_radius)
    detections: List[Detection] = []
    for _ in range(n):
        flat = int(np.argmax(maps))
        kk, v, u = np.unravel_index(flat, maps.shape)
        best = maps[kk, v, u]
        if best <= 0 or best < floor_fraction * areas[kk]:
            raise NotEnoughBlocks(found=len(detections), detections=detections)
        detections.append(Detection(
            p=(int(u) + offset[0], int(v) + offset[1]),
            theta=float(orientations[kk]),
            score=float(best),
            orientation_index=int(kk),
        ))
        v0, v1 = max(v - reach, 0), min(v + reach + 1, height)
        u0, u1 = max(u - reach, 0), min(u + reach + 1, width)
        window = disc[v0 - (v - reach): v1 - (v - reach), u0 - (u - reach): u1 - (u - reach)]
        region = maps[:, v0:v1, u0:u1]
        region[:, window] = 0
    return detections


def detect_blocks(image: DepthImage, n: int, masks: MaskSet, band: DepthBand,
                  floor_fraction: float = 0.5, method: str = "fft") -> List[Detection]:
    """
    Detecta n bloques en la imagen de profundidad

    Args:
        image (DepthImage): imagen (puede ser un recorte; las detecciones se dan en la imagen completa)
        n (int): número de bloques a extraer
        masks (MaskSet): máscaras orientadas
        band (DepthBand): banda de profundidad de la cara superior
        floor_fraction (float): activación mínima como fracción del área de la máscara

    Returns:
        List[Detection]: detecciones en orden de extracción

    Raises:
        NotEnoughBlocks: si hay menos de n máximos sobre el umbral
    """
    if n < 1:
        raise ValueError("n debe ser al menos 1")
    h, w = masks.shape
    if image.height < h or image.width < w:
        raise ValueError("La imagen debe ser más grande que las máscaras")
    binary = threshold_depth(image, band)
    activations = correlate_masks(binary, masks.masks, method=method)
    return extract_peaks(activations, n, masks.orientations, masks.areas,
                         masks.half_diagonal, floor_fraction, offset=image.offset)


def detect_pegs(image: DepthImage, camera: CameraConfig, config: WorkspaceConfig,
                floor_fraction: float = 0.5, expected: int = 12,
                band: Optional[DepthBand] = None) -> List[Tuple[int, int]]:
    """
    Detecta los pegs con una máscara de disco a la profundidad del tope

    Returns:
        List[Tuple[int, int]]: píxeles (u, v); mitad izquierda primero, cada mitad por filas

    Raises:
        PegsNotFound: si se encuentran menos de `expected` pegs
    """
    band = band or peg_band(config, camera)
    disc = disc_mask(config.peg_radius * camera.pixels_per_mm)
    binary = threshold_depth(image, band)
    activations = correlate_masks(binary, disc[None], method="fft")
    half_diagonal = 0.5 * np.hypot(*disc.shape)
    try:
        peaks = extract_peaks(activations, expected, [0.0], [disc.sum()],
                              half_diagonal, floor_fraction, offset=image.offset)
    except NotEnoughBlocks as e:
        found = [d.p for d in e.detections]
        logger.warning(f"⚠️ Solo se encontraron {len(found)} de {expected} pegs")
        raise PegsNotFound(count=len(found), found=found) from e

    mid_u = camera.board_to_pixel((config.board_size[0] / 2.0, 0.0))[0]
    pixels = [d.p for d in peaks]
    left = [p for p in pixels if p[0] < mid_u]
    right = [p for p in pixels if p[0] >= mid_u]
    row_tolerance = config.block_edge * camera.pixels_per_mm / 2.0
    return _row_major(left, row_tolerance) + _row_major(right, row_tolerance)


def _row_major(pixels: List[Tuple[int, int]], row_tolerance: float) -> List[Tuple[int, int]]:
    """Ordena por filas agrupando valores de v cercanos"""
    rows: List[List[Tuple[int, int]]] = []
    for p in sorted(pixels, key=lambda p: p[1]):
        if rows and abs(p[1] - rows[-1][0][1]) <= row_tolerance:
            rows[-1].append(p)
        else:
            rows.append([p])
    return [p for row in rows for p in sorted(row, key=lambda p: p[0])]


def pixel_to_board(p: Sequence[float], camera: CameraConfig) -> np.ndarray:
    """Inversa afín de la proyección del renderer"""
    return camera.pixel_to_board(p)


def board_to_pixel(point: Sequence[float], camera: CameraConfig) -> np.ndarray:
    return camera.board_to_pixel(point)
