"""Fixtures comunes de la suite de pruebas"""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.pegtransfer.calibration import ErrorField
from src.pegtransfer.executor import ExecutorConfig, MotionTimingConfig
from src.pegtransfer.render import CameraConfig, make_masks
from src.pegtransfer.scene import WorkspaceConfig, init_episode


@pytest.fixture
def config():
    return WorkspaceConfig()


@pytest.fixture
def camera(config):
    return CameraConfig.for_board(config.board_size, noise_sd=0.0)


@pytest.fixture
def noisy_camera(config):
    return CameraConfig.for_board(config.board_size)


@pytest.fixture
def scene(config):
    return init_episode(config, 7)


@pytest.fixture(scope="session")
def masks():
    config = WorkspaceConfig()
    return make_masks(config, CameraConfig.for_board(config.board_size), 30)


@pytest.fixture
def timing():
    return MotionTimingConfig()


@pytest.fixture
def zero_field():
    return ErrorField.zero()


@pytest.fixture
def ground_truth():
    return ExecutorConfig(perception="ground_truth")
