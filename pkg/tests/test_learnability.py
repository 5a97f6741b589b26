import numpy as np
import pytest

from app.services.dataio import load_manifest
from app.services.synthgen import gen_dataset
from app.services.training_service import TrainingService
from tests.conftest import tiny_config

CHANCE = 0.2


@pytest.mark.slow
def test_one_epoch_beats_chance(tmp_path):
    config = tiny_config(
        frontend={"clip_seconds": 0.25, "n_filters": 16, "kernel_width": 101, "hop_ms": 5.0, "window_ms": 10.0},
        encoder={"channels": [8, 16], "attention_dim": 16},
        training={"epochs": 1, "batch_size": 8, "lr": 3e-3},
        synth={"clips_per_cell": 20},
    )
    manifest = gen_dataset(config, out_dir=tmp_path, seed=11)
    service = TrainingService(config)
    data = service.load_data(load_manifest(manifest))
    result = service.train(data.train, data.val, data.ctdsv_stats, seed=0)

    assert result.history.best_val_accuracy > CHANCE
    initial = TrainingService(config.model_copy(update={
        "training": config.training.model_copy(update={"epochs": 0})
    })).train(data.train, data.val, data.ctdsv_stats, seed=0).model
    moved = result.model.frontend.params.gabor.mu - initial.frontend.params.gabor.mu
    assert np.linalg.norm(moved) > 0
