#!/usr/bin/env python3
"""
Script de Prueba del Sistema Peg Transfer Sim

Este script verifica que todos los componentes del simulador estén
funcionando correctamente antes de lanzar lotes largos.

Pruebas que realiza:
1. 📄 Configuración - Verifica que settings.yaml sea válido
2. 📷 Render + percepción - Detecta los 12 pegs y los 6 bloques del estado inicial
3. 📐 Calibración - Comprueba que la calibración reduce el error alcanzado
4. 🤖 Episodio - Ejecuta un episodio sin error y verifica 12 transferencias exitosas

Uso: python test_app.py

Si todas las pruebas pasan, el sistema está listo para usar.
"""

import sys
from pathlib import Path

sys.path.append(str(Path(__file__).parent))

from src.pegtransfer.calibration import ErrorField, residual_report
from src.pegtransfer.executor import AttemptResult, ExecutorConfig, run_episode
from src.pegtransfer.harness import build_calibration, build_fields
from src.pegtransfer.perception import block_band, detect_blocks, detect_pegs
from src.pegtransfer.render import make_masks, render_depth
from src.pegtransfer.scene import init_episode
from src.pegtransfer.settings import build_experiment, load_settings


def test_config():
    """
    Probar carga de configuración desde settings.yaml

    Returns:
        ExperimentConfig o None si la configuración no es válida
    """
    print("[CONFIG] Probando configuración...")
    try:
        experiment = build_experiment(load_settings())
        print(f"[OK] Configuración cargada - modo {experiment.mode}, "
              f"e_sys {experiment.error.e_sys_mm} mm")
        return experiment
    except Exception as e:
        print(f"[ERROR] Error cargando configuración: {e}")
        return None


def test_perception(experiment):
    """
    Probar render y percepción sobre el estado inicial de la semilla 0

    Verifica que se detectan 12 pegs y 6 bloques a menos de 1 mm de su centro real.
    """
    print("[PERCEPCION] Probando render y detección...")
    try:
        config, camera = experiment.workspace, experiment.camera
        scene = init_episode(config, 0)
        image = render_depth(scene, camera, 0)
        pegs = detect_pegs(image, camera, config)
        masks = make_masks(config, camera, experiment.executor.n_orientations)
        detections = detect_blocks(image, 6, masks, block_band(config, camera))
        worst = max(
            min(float(((camera.pixel_to_board(d.p) - b.center) ** 2).sum()) ** 0.5 for d in detections)
            for b in scene.blocks
        )
        print(f"[OK] {len(pegs)} pegs y {len(detections)} bloques; peor error {worst:.2f} mm")
        return worst <= 1.0
    except Exception as e:
        print(f"[ERROR] Error en percepción: {e}")
        return False


def test_calibration(experiment):
    """Probar que la calibración reduce el p95 del error alcanzado"""
    print("[CALIBRACION] Probando calibración...")
    try:
        board = experiment.workspace.board_size
        fields = build_fields(experiment.error, board)
        tables = build_calibration(fields, experiment.calibration, board)
        before = residual_report(fields["right"], None, board, n=200)
        after = residual_report(fields["right"], tables["right"], board, n=200)
        print(f"[OK] p95 sin calibrar {before['p95']:.2f} mm -> calibrado {after['p95']:.2f} mm")
        return after["p95"] < before["p95"]
    except Exception as e:
        print(f"[ERROR] Error en calibración: {e}")
        return False


def test_episode(experiment):
    """Probar un episodio de un brazo sin error de actuación"""
    print("[EPISODIO] Probando episodio sin error...")
    try:
        settings = ExecutorConfig(perception="ground_truth")
        report = run_episode(experiment.workspace, "single", None, ErrorField.zero(),
                             experiment.timing, 0, settings=settings, camera=experiment.camera)
        successes = sum(r.result == AttemptResult.SUCCESS for r in report.records)
        print(f"[OK] {successes}/{len(report.records)} transferencias en {report.episode_time_s:.1f} s")
        return successes == 12 and len(report.records) == 12
    except Exception as e:
        print(f"[ERROR] Error ejecutando episodio: {e}")
        return False


def main():
    """
    Ejecutar todas las pruebas del sistema

    Returns:
        bool: True si todas las pruebas pasaron
    """
    print("[INICIO] Iniciando pruebas del sistema Peg Transfer Sim\n")
    print("🔍 Verificando componentes del sistema...\n")

    tests_passed = 0
    total_tests = 4

    experiment = test_config()
    if experiment:
        tests_passed += 1
        print()
        for check in (test_perception, test_calibration, test_episode):
            if check(experiment):
                tests_passed += 1
            print()
    else:
        print("[CRITICO] Sin configuración válida, no se ejecutan las demás pruebas\n")

    print(f"\n{'='*60}")
    print(f"[RESULTADO] Pruebas completadas: {tests_passed}/{total_tests} exitosas")

    if tests_passed == total_tests:
        print("🎉 [EXITO] Todos los componentes funcionan correctamente!")
        print("\n🚀 Próximos pasos:")
        print("   - Lote de un brazo: python main.py run --mode single --episodes 20")
        print("   - Lote bilateral: python main.py run --mode bilateral --episodes 5")
        print("   - Tablas publicadas: python main.py stats --published")
        return True
    print("⚠️ [ADVERTENCIA] Algunos componentes tienen problemas")
    print("🔧 Revisa config/settings.yaml y los mensajes anteriores")
    return False


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
