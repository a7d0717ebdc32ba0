"""
Geometría plana del tablero

Utilidades vectorizadas con numpy para triángulos equiláteros, polígonos
regulares (agujero del bloque), pruebas punto-en-polígono convexo y
distancias a polilíneas. Todas las coordenadas están en mm, marco del tablero.
"""
import math
from typing import Sequence

import numpy as np

SQRT3 = math.sqrt(3.0)
HOLE_SIDES = 24


def rotation(deg: float) -> np.ndarray:
    """Matriz de rotación 2x2 para un ángulo en grados"""
    rad = math.radians(deg)
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, -s], [s, c]])


def circumradius(edge: float) -> float:
    return edge / SQRT3


def triangle_vertices(center: Sequence[float], yaw_deg: float, edge: float) -> np.ndarray:
    """
    Vértices (3, 2) de un triángulo equilátero en sentido antihorario

    El vértice k está en el ángulo yaw + 90 + 120·k respecto al centro.
    """
    r = circumradius(edge)
    angles = np.radians(yaw_deg + 90.0 + 120.0 * np.arange(3))
    offsets = np.stack([np.cos(angles), np.sin(angles)], axis=1) * r
    return np.asarray(center, dtype=float) + offsets


def regular_polygon(center: Sequence[float], radius: float, sides: int = HOLE_SIDES) -> np.ndarray:
    """Polígono regular antihorario con vértices sobre el círculo de radio dado"""
    angles = 2.0 * np.pi * np.arange(sides) / sides
    offsets = np.stack([np.cos(angles), np.sin(angles)], axis=1) * radius
    return np.asarray(center, dtype=float) + offsets


def points_in_convex_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """
    Prueba de semiplanos para un polígono convexo antihorario

    Args:
        points: arreglo (..., 2)
        vertices: arreglo (n, 2) en sentido antihorario

    Returns:
        np.ndarray: máscara booleana con la forma de points[..., 0]; el borde cuenta como dentro
    """
    pts = np.asarray(points, dtype=float)
    inside = np.ones(pts.shape[:-1], dtype=bool)
    n = len(vertices)
    for k in range(n):
        a = vertices[k]
        b = vertices[(k + 1) % n]
        edge = b - a
        rel = pts - a
        cross = edge[0] * rel[..., 1] - edge[1] * rel[..., 0]
        inside &= cross >= 0.0
    return inside


def point_in_convex_polygon(point: Sequence[float], vertices: np.ndarray) -> bool:
    return bool(points_in_convex_polygon(np.asarray(point, dtype=float)[None, :], vertices)[0])


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distancia de cada punto (..., 2) al segmento ab"""
    pts = np.asarray(points, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(pts - closest, axis=-1)


def distance_to_polyline(point: Sequence[float], vertices: np.ndarray) -> float:
    """Distancia mínima de un punto a la polilínea cerrada definida por los vértices"""
    p = np.asarray(point, dtype=float)
    n = len(vertices)
    return float(min(segment_distance(p, vertices[k], vertices[(k + 1) % n]) for k in range(n)))


def distance_to_polygon(point: Sequence[float], vertices: np.ndarray) -> float:
    """Cero dentro del polígono convexo; distancia al borde fuera de él"""
    if point_in_convex_polygon(point, vertices):
        return 0.0
    return distance_to_polyline(point, vertices)


def convex_polygons_overlap(first: np.ndarray, second: np.ndarray) -> bool:
    """Teorema del eje separador para dos polígonos convexos"""
    for poly in (first, second):
        n = len(poly)
        for k in range(n):
            edge = poly[(k + 1) % n] - poly[k]
            axis = np.array([-edge[1], edge[0]])
            p1 = first @ axis
            p2 = second @ axis
            if p1.max() < p2.min() or p2.max() < p1.min():
                return False
    return True


def barycentric_weights(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Coordenadas baricéntricas (..., 3) de puntos respecto a un triángulo"""
    v0, v1, v2 = vertices
    basis = np.array([v1 - v0, v2 - v0]).T
    inverse = np.linalg.inv(basis)
    rel = np.asarray(points, dtype=float) - v0
    lam = rel @ inverse.T
    w0 = 1.0 - lam[..., 0] - lam[..., 1]
    return np.stack([w0, lam[..., 0], lam[..., 1]], axis=-1)


def wrap_yaw(yaw_deg: float) -> float:
    """Normaliza un ángulo a [0, 120) por la simetría del triángulo"""
    value = float(yaw_deg) % 120.0
    return 0.0 if value >= 120.0 else value


def yaw_distance(a: float, b: float) -> float:
    """Distancia angular mínima módulo 120°"""
    diff = (float(a) - float(b)) % 120.0
    return min(diff, 120.0 - diff)
