"""
Test configuration and utilities
"""

import os
import sys

import numpy as np
import pytest

# Add the parent directory to the path so we can import from app
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.config import ExperimentConfig, config_from_dict  # noqa: E402

# Test configuration
TEST_SEEDS = [0, 1, 2]
FD_STEP = 1e-6

# A run small enough for unit tests: a handful of steps, tiny networks
TINY_EXPERIMENT = {
    "experiment": {
        "command": "train-demorl",
        "env": "pendulum",
        "seeds": [0],
        "epochs": 2,
        "env_steps_per_epoch": 60,
        "model_transitions_per_epoch": 40,
        "gradient_steps_per_epoch": 5,
        "eval_episodes": 2,
        "env_overrides": {"episode_length": 40},
    },
    "mpc": {"horizon": 4, "rollouts": 12, "elite_fraction": 0.25},
    "sac": {"hidden_sizes": [8], "batch_size": 16, "warmup_steps": 30},
    "model": {"members": 2, "select": 1, "hidden_sizes": [8], "batch_size": 16,
              "train_epochs": 1, "min_transitions": 50},
    "ars": {"iterations": 2, "directions": 2, "top_directions": 1},
    "demo_layer": {"horizon": 4, "rollouts": 10, "episodes": 1},
    "regret": {"rounds": 50, "grid_points": 21},
}


def tiny_config(**overrides) -> ExperimentConfig:
    """TINY_EXPERIMENT with per-section overrides merged in"""
    data = {name: dict(values) for name, values in TINY_EXPERIMENT.items()}
    for section, values in overrides.items():
        data.setdefault(section, {}).update(values)
    return config_from_dict(data)


def central_difference(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of a scalar function of an array"""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        plus = f(x)
        x[idx] = orig - step
        minus = f(x)
        x[idx] = orig
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


@pytest.fixture
def tiny():
    return tiny_config


@pytest.fixture
def numeric_gradient():
    return central_difference
