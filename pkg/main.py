"""
Peg Transfer Sim - Aplicación Principal

Simulador de la tarea de transferencia de bloques entre pegs con brazos
imprecisos (accionados por cables):
- Lotes de episodios en modo de un brazo o bilateral
- Generación de tablas de calibración y reporte de residuos
- Volcado de la imagen de profundidad y de la percepción de un episodio
- Agregación de estadísticas (CSV propio o tablas publicadas)

Uso: python main.py [comando] [opciones]
Ejemplos:
  python main.py run --mode single --episodes 20 --seed 0
  python main.py run --mode bilateral --episodes 5 --workers 4
  python main.py calibrate --out results/calib
  python main.py render --seed 3 --out results/render
  python main.py stats --csv results/attempts.csv
  python main.py stats --published
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import pandas as pd

from src.pegtransfer import storage
from src.pegtransfer.calibration import residual_report
from src.pegtransfer.errors import ConfigurationError, NotEnoughBlocks, PegTransferError, PegsNotFound, SafetyFault
from src.pegtransfer.graspplan import default_arms, plan_grasp, plan_place
from src.pegtransfer.harness import (
    aggregate,
    build_calibration,
    build_fields,
    load_published_tables,
    published_stats,
    render_tables,
    run_batch,
)
from src.pegtransfer.overlay import build_overlay, write_html
from src.pegtransfer.perception import block_band, detect_blocks, detect_pegs
from src.pegtransfer.render import make_masks, render_depth
from src.pegtransfer.scene import init_episode
from src.pegtransfer.settings import apply_overrides, build_experiment, load_settings

# Configurar logging
os.makedirs("logs", exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler('logs/main.log'),
        logging.StreamHandler()
    ]
)

logger = logging.getLogger(__name__)

RESIDUAL_GRIDS_MM = (32.0, 16.0, 8.0)


def load_experiment(args):
    """Configuración del YAML con los flags de la CLI encima"""
    settings = load_settings(args.config)
    settings = apply_overrides(settings, vars(args))
    return build_experiment(settings)


def run_batch_command(args):
    """
    Ejecutar un lote de episodios

    Escribe en la carpeta de salida:
    - attempts.csv (y attempts.parquet si está activado)
    - episodes.json con el resumen de cada episodio
    - stats.json con la tabla agregada
    """
    experiment = load_experiment(args)
    logger.info(f"🚀 Ejecutando {experiment.episodes} episodios en modo {experiment.mode}")
    batch = run_batch(experiment.episodes, experiment.mode, experiment, experiment.seed,
                      out_dir=experiment.out_dir)
    print(render_tables([batch.stats]))
    return batch


def run_calibrate(args):
    """
    Generar tablas de calibración y el reporte de residuos

    El reporte compara el error alcanzado sin calibración y con mallas de
    32, 16 y 8 mm, para cada brazo y para roll 0 y 90.
    """
    experiment = load_experiment(args)
    board = experiment.workspace.board_size
    out = Path(experiment.out_dir)
    fields = build_fields(experiment.error, board)

    tables = build_calibration(fields, experiment.calibration, board)
    if tables is None:
        raise ConfigurationError("La calibración está desactivada en la configuración")
    storage.write_tables_json(tables, out / "calibration_tables.json")

    rows = []
    for arm, arm_field in fields.items():
        for roll in (0.0, 90.0):
            baseline = residual_report(arm_field, None, board, seed=experiment.seed, roll=roll)
            rows.append({"arm": arm, "roll": roll, "grid_mm": "sin calibrar", **baseline})
            for cell in RESIDUAL_GRIDS_MM:
                grid_tables = build_calibration(fields, experiment.calibration, board, cell_mm=cell)
                report = residual_report(arm_field, grid_tables[arm], board,
                                         seed=experiment.seed, roll=roll)
                rows.append({"arm": arm, "roll": roll, "grid_mm": cell, **report})
    frame = pd.DataFrame(rows)
    storage.write_json(frame.to_dict(orient="records"), out / "residual_report.json")
    logger.info(f"📊 Reporte de residuos:\n{frame.round(3).to_string(index=False)}")
    return frame


def run_render(args):
    """
    Volcar la imagen de profundidad y la percepción del estado inicial

    Archivos: depth.f32 (+ sidecar), depth.pgm, scene.json, detections.json
    y overlay.html.
    """
    experiment = load_experiment(args)
    config, camera, settings = experiment.workspace, experiment.camera, experiment.executor
    out = Path(experiment.out_dir)
    scene = init_episode(config, experiment.seed)
    image = render_depth(scene, camera, experiment.seed)
    storage.write_depth_image(image, out / "depth.f32")
    storage.write_pgm(image, out / "depth.pgm")
    storage.write_scene_json(scene, out / "scene.json")

    try:
        peg_pixels = detect_pegs(image, camera, config, settings.activation_floor)
    except PegsNotFound as e:
        logger.warning(f"⚠️ {e}")
        peg_pixels = list(e.found)

    masks = make_masks(config, camera, settings.n_orientations)
    band = block_band(config, camera, settings.band_epsilon_mm)
    try:
        detections = detect_blocks(image, len(scene.blocks), masks, band, settings.activation_floor)
    except NotEnoughBlocks as e:
        logger.warning(f"⚠️ {e}")
        detections = e.detections

    arm = default_arms(config)[settings.single_arm]
    pegs = [config.peg(i) for i in range(len(config.peg_positions))]
    targets = config.right_peg_ids
    plans = []
    for index, detection in enumerate(detections):
        center = camera.pixel_to_board(detection.p)
        source = min(pegs, key=lambda p: float(((p - center) ** 2).sum()))
        grasp = plan_grasp(center, detection.theta, arm, source, config.block_edge)
        place = plan_place(config.peg(targets[index % len(targets)]), arm, bilateral=False)
        plans.append((grasp.point, place.point))

    storage.write_json({
        "seed": experiment.seed,
        "pegs_px": [list(map(int, p)) for p in peg_pixels],
        "blocks": [d.to_dict() for d in detections],
    }, out / "detections.json")
    fig = build_overlay(image, camera, peg_pixels, detections, plans, config.block_edge,
                        title=f"Semilla {experiment.seed}")
    write_html(fig, out / "overlay.html")
    logger.info(f"✅ {len(peg_pixels)} pegs y {len(detections)} bloques detectados")
    return detections


def run_stats(args):
    """Agregar un CSV de intentos existente o las tablas publicadas"""
    if args.published:
        entries = load_published_tables()
        tables = [published_stats(entry) for entry in entries]
        print(render_tables(tables, [entry["label"] for entry in entries]))
        return tables
    if not args.csv:
        raise ConfigurationError("stats requiere --csv o --published")
    records = storage.read_attempts_csv(Path(args.csv))
    by_mode = {}
    for record in records:
        by_mode.setdefault(record.mode, []).append(record)
    tables = [aggregate(by_mode[mode]) for mode in sorted(by_mode)]
    print(render_tables(tables))
    return tables


def main(argv=None):
    """Función principal"""
    parser = argparse.ArgumentParser(description='Peg Transfer Sim')
    parser.add_argument('command', choices=['run', 'calibrate', 'render', 'stats'],
                        help='Comando a ejecutar')
    parser.add_argument('--config', help='Ruta del YAML de configuración (default: config/settings.yaml)')
    parser.add_argument('--mode', choices=['single', 'bilateral'], help='Modo del episodio')
    parser.add_argument('--episodes', type=int, help='Número de episodios')
    parser.add_argument('--seed', type=int, help='Semilla base')
    parser.add_argument('--error-mm', type=float, help='Magnitud del error sistemático (mm)')
    parser.add_argument('--noise-sd', type=float, help='Ruido de profundidad (mm)')
    parser.add_argument('--dropout', type=float, help='Probabilidad de píxel perdido')
    parser.add_argument('--grid-mm', type=float, help='Celda de la malla de calibración (mm)')
    parser.add_argument('--out', help='Carpeta de resultados')
    parser.add_argument('--workers', type=int, help='Procesos en paralelo')
    parser.add_argument('--perception', choices=['depth', 'ground_truth'], help='Modo de percepción')
    parser.add_argument('--csv', help='CSV de intentos para stats')
    parser.add_argument('--published', action='store_true', help='Mostrar las tablas publicadas')

    args = parser.parse_args(argv)

    try:
        if args.command == 'run':
            run_batch_command(args)
        elif args.command == 'calibrate':
            run_calibrate(args)
        elif args.command == 'render':
            run_render(args)
        elif args.command == 'stats':
            run_stats(args)
    except KeyboardInterrupt:
        logger.info("Proceso interrumpido por el usuario")
        return 1
    except ConfigurationError as e:
        logger.error(f"❌ Error de configuración: {e}")
        return 2
    except SafetyFault as e:
        logger.error(f"❌ Falla de seguridad: {e}")
        return 3
    except (PegTransferError, OSError, ValueError) as e:
        logger.error(f"❌ Error en ejecución: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
