"""
Pytest configuration for the compounding service tests
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from config import AcquisitionConfig, GridConfig, Settings  # noqa: E402


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow", action="store_true", default=False, help="run slow tests"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs over a simulated dataset")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow", default=False):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def run_slow(request):
    return request.config.getoption("--run-slow", default=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acq():
    """Default acquisition: 64 elements, 3 MHz carrier, 12 / 4 MHz sampling."""
    return AcquisitionConfig()


@pytest.fixture
def small_acq():
    # few elements and tilts keep the simulator and DAS tests fast
    return AcquisitionConfig(
        element_count=16,
        pitch=0.3e-3,
        tilt_angles=[-10.0, 0.0, 10.0],
        input_angles=[-10.0, 0.0, 10.0],
        max_depth=0.045,
    )


@pytest.fixture
def tiny_settings(tmp_path):
    """A dataset small enough to simulate, train and evaluate inside a test."""
    return Settings(
        acquisition={
            "element_count": 16,
            "tilt_angles": [-10.0, -5.0, 0.0, 5.0, 10.0],
            "input_angles": [-10.0, 0.0, 10.0],
            "max_depth": 0.045,
        },
        grid=GridConfig(depth_start=0.015, depth_end=0.040, iq_depth_samples=24, angle_lines=20),
        dataset={
            "scene_count": 6,
            "split_train": 0.5,
            "split_val": 1.0 / 6.0,
            "split_test": 1.0 / 3.0,
            "scatterers_per_cell": 1.0,
            "disks_min": 1,
            "disks_max": 1,
            "wires_min": 1,
            "wires_max": 1,
            "disk_radius_min": 3.0e-3,
            "disk_radius_max": 3.0e-3,
        },
        trainer={"batch_size": 2, "lr0": 1e-3, "plateau_patience": 1, "stop_patience": 1, "max_epochs": 2},
        paths={
            "dataset_dir": tmp_path / "dataset",
            "model_dir": tmp_path / "models",
            "prediction_dir": tmp_path / "predictions",
            "report_dir": tmp_path / "reports",
        },
    )
