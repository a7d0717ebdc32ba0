"""
Overlay - Figuras de inspección con plotly

- Mapa de profundidad con los pegs detectados (círculos azules), los contornos
  de los bloques detectados y los puntos de agarre/colocación en círculos blancos
- Curva de degradación del barrido de error (tasa de éxito vs e_sys)

Las figuras se guardan como HTML independiente.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from src.pegtransfer.geometry import triangle_vertices
from src.pegtransfer.perception import Detection
from src.pegtransfer.render import CameraConfig, DepthImage

logger = logging.getLogger(__name__)


def _circle(center: Sequence[float], radius: float, n: int = 32) -> Tuple[np.ndarray, np.ndarray]:
    t = np.linspace(0.0, 2.0 * np.pi, n + 1)
    return center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)


def build_overlay(image: DepthImage, camera: CameraConfig, pegs: Sequence[Sequence[float]],
                  detections: Sequence[Detection], plans: Sequence[Tuple[Sequence[float], Sequence[float]]] = (),
                  block_edge: float = 18.0, title: Optional[str] = None) -> go.Figure:
    """
    Figura con la imagen de profundidad y las anotaciones de percepción

    Args:
        image (DepthImage): imagen completa
        camera (CameraConfig): cámara que produjo la imagen
        pegs: píxeles (u, v) de los pegs detectados
        detections: detecciones de bloques
        plans: pares (punto de agarre mm, punto de colocación mm)
        block_edge (float): arista del bloque para dibujar los contornos
    """
    fig = go.Figure()
    fig.add_trace(go.Heatmap(z=image.data, colorscale="Viridis", colorbar={"title": "mm"},
                             name="profundidad"))

    peg_radius_px = 3.0 * camera.pixels_per_mm
    for index, (u, v) in enumerate(pegs):
        xs, ys = _circle((u, v), peg_radius_px)
        fig.add_trace(go.Scatter(x=xs, y=ys, mode="lines", line={"color": "blue", "width": 2},
                                 name="pegs", legendgroup="pegs", showlegend=index == 0))

    for index, detection in enumerate(detections):
        center_mm = camera.pixel_to_board(detection.p)
        outline = camera.board_to_pixel(triangle_vertices(center_mm, detection.theta, block_edge))
        outline = np.vstack([outline, outline[:1]])
        fig.add_trace(go.Scatter(x=outline[:, 0], y=outline[:, 1], mode="lines",
                                 line={"color": "orange", "width": 2}, name="bloques",
                                 legendgroup="bloques", showlegend=index == 0))

    marker_px = 1.5 * camera.pixels_per_mm
    for index, (grasp, place) in enumerate(plans):
        for point in (grasp, place):
            u, v = camera.board_to_pixel(point)
            xs, ys = _circle((u, v), marker_px)
            fig.add_trace(go.Scatter(x=xs, y=ys, mode="lines", line={"color": "white", "width": 2},
                                     name="agarre/colocación", legendgroup="plan",
                                     showlegend=index == 0 and point is grasp))

    fig.update_yaxes(autorange="reversed", scaleanchor="x")
    fig.update_layout(title=title or "Percepción por profundidad", template="plotly_dark")
    return fig


def degradation_figure(frame: pd.DataFrame) -> go.Figure:
    """Tasa de éxito por nivel de error sistemático"""
    fig = px.line(frame, x="e_sys_mm", y="success_rate", markers=True,
                  title="Tasa de éxito vs error sistemático",
                  labels={"e_sys_mm": "e_sys (mm)", "success_rate": "Tasa de éxito"})
    fig.update_yaxes(range=[0, 1.05])
    return fig


def write_html(fig: go.Figure, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    logger.info(f"✅ Figura guardada en {path}")
    return path
