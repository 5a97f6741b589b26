from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
import pytest

from app.schemas.config import RunConfig, load_run_config
from app.schemas.dataset import CtdsvStats

TINY_RUN = {
    "frontend": {
        "sample_rate": 16000,
        "clip_seconds": 1000 / 16000,
        "n_filters": 4,
        "kernel_width": 31,
        "hop_ms": 0.625,
        "window_ms": 2.0,
    },
    "encoder": {"channels": [4, 8], "attention_dim": 8},
    "training": {"epochs": 1, "batch_size": 8, "precision": "float64"},
    "synth": {"clips_per_cell": 7},
}


def tiny_config(**sections) -> RunConfig:
    """Small float64 model: K=4, 1000-sample clips, two encoder blocks"""
    overrides = {k: dict(v) for k, v in TINY_RUN.items()}
    for key, value in sections.items():
        if isinstance(value, dict):
            overrides.setdefault(key, {}).update(value)
        else:
            overrides[key] = value
    return load_run_config(overrides=overrides)


def numeric_grad(loss: Callable[[], float], array: np.ndarray, step: float = 1e-5,
                 max_elements: Optional[int] = None) -> Dict[tuple, float]:
    """Central differences of `loss` w.r.t. entries of `array` (perturbed in place)"""
    grads = {}
    for n, index in enumerate(np.ndindex(array.shape)):
        if max_elements is not None and n >= max_elements:
            break
        original = array[index]
        array[index] = original + step
        up = loss()
        array[index] = original - step
        down = loss()
        array[index] = original
        grads[index] = (up - down) / (2 * step)
    return grads


def assert_grad_close(analytic: np.ndarray, numeric: Dict[tuple, float], rtol: float = 1e-3, atol: float = 1e-8):
    for index, value in numeric.items():
        a = analytic[index]
        assert abs(a - value) <= atol + rtol * max(abs(a), abs(value)), f"{index}: analytic {a} vs numeric {value}"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def run_config() -> RunConfig:
    return tiny_config()


@pytest.fixture
def unit_stats() -> CtdsvStats:
    return CtdsvStats(mean=[0.0] * 5, std=[1.0] * 5)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Path:
    """Seven 1000-sample clips per (class, scenario) cell, written once per session"""
    from app.services.synthgen import gen_dataset

    out_dir = tmp_path_factory.mktemp("corpus")
    return gen_dataset(tiny_config(), out_dir=out_dir, seed=7)
