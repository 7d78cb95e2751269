# tests/conftest.py

import os

# Must be set before app.core.config is imported
os.environ.setdefault("GREENFED_LOG_TO_FILE", "false")

import pytest  # noqa: E402

from app.schemas.config import RunConfig  # noqa: E402
from app.schemas.device import ChannelParams, DeviceProfile  # noqa: E402


@pytest.fixture
def profile() -> DeviceProfile:
    return DeviceProfile()


@pytest.fixture
def channel() -> ChannelParams:
    return ChannelParams()


@pytest.fixture
def small_config_dict() -> dict:
    """A fleet of three devices and a few cheap training rounds."""
    return {
        "seed": 7,
        "devices": [
            {"Delta": 1.0, "d_m": 40.0},
            {"Delta": 0.5, "d_m": 45.0},
            {"Delta": 0.2, "d_m": 50.0},
        ],
        "training": {
            "rounds": 3,
            "local_iters": 2,
            "lr": 0.01,
            "batch_size": 16,
            "T": 10,
            "hidden": 16,
            "embed_dim": 4,
            "samples_per_device": 64,
            "eval_every": 2,
            "eval_samples": 200,
        },
        "quantbench": {
            "dimension": 16,
            "trials": 2000,
            "levels": [2, 64, 128, 256],
            "distributions": ["gaussian", "uniform"],
        },
        "sweep": {"parameter": "t_max", "start": 13.0, "stop": 18.0, "steps": 6},
    }


@pytest.fixture
def small_config(small_config_dict) -> RunConfig:
    return RunConfig.model_validate(small_config_dict)
