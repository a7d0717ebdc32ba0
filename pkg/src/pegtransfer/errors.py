"""
Errores del simulador de transferencia de bloques

Jerarquía única de excepciones. El CLI (main.py) traduce:
- ConfigurationError  -> código de salida 2
- SafetyFault         -> código de salida 3
- cualquier otro PegTransferError -> código de salida 1
"""
from typing import Any, Optional, Sequence


class PegTransferError(RuntimeError):
    """Error base del simulador"""


class ConfigurationError(PegTransferError):
    """Configuración inválida (tablero, cámara, calibración o experimento)"""


class RenderError(PegTransferError):
    """La escena no cabe dentro de la imagen de profundidad"""


class NotEnoughBlocks(PegTransferError):
    """El detector no encontró los n bloques pedidos por encima del umbral"""

    def __init__(self, found: int, detections: Optional[Sequence[Any]] = None):
        self.found = found
        self.detections = list(detections or [])
        super().__init__(f"Solo se detectaron {found} bloques")


class PegsNotFound(PegTransferError):
    """Menos de 12 pegs detectados en la banda de profundidad"""

    def __init__(self, count: int, found: Optional[Sequence[Any]] = None):
        self.count = count
        self.found = list(found or [])
        super().__init__(f"Solo se detectaron {count} pegs")


class ExtrapolationError(PegTransferError):
    """Consulta fuera de la malla de calibración"""

    def __init__(self, point):
        self.point = (float(point[0]), float(point[1]))
        super().__init__(
            f"Punto ({self.point[0]:.3f}, {self.point[1]:.3f}) fuera de la malla de calibración"
        )


class SafetyFault(PegTransferError):
    """Pinza abierta por debajo de la altura segura fuera de una ventana permitida"""

    def __init__(self, waypoint):
        self.waypoint = waypoint
        super().__init__(
            f"Pinza abierta a {waypoint.height:.2f} mm en '{waypoint.name}' fuera de ventana"
        )
