import struct

import numpy as np
import pytest

from app.core.checkpoint import (
    MAGIC,
    load_checkpoint,
    load_optimizer_state,
    read_checkpoint,
    save_checkpoint,
)
from app.core.exceptions import CheckpointError, ConfigurationError
from app.models.classifier import VesselClassifier
from app.services.optimizer import AdamState, adam_step
from tests.conftest import tiny_config


@pytest.fixture
def trained(rng, run_config, unit_stats):
    """Model and optimizer after two Adam steps"""
    model = VesselClassifier.initialize(run_config, seed=4, ctdsv_stats=unit_stats)
    state = AdamState(lr=1e-3)
    waveforms = rng.uniform(-0.5, 0.5, (4, 1000))
    ctdsv = rng.standard_normal((4, 5))
    for _ in range(2):
        _, grads, _ = model.loss_and_grads(waveforms, ctdsv, np.array([0, 1, 2, 4]))
        adam_step(model.parameters(), grads, state, clamp=model.clamp_)
    return model, state, waveforms, ctdsv


class TestRoundTrip:
    def test_restored_model_predicts_identically(self, tmp_path, trained):
        model, state, waveforms, ctdsv = trained
        path = save_checkpoint(model, tmp_path / "model.ckpt", optimizer=state)
        restored = load_checkpoint(path, expected_config=model.config)
        np.testing.assert_array_equal(
            restored.predict_logits(waveforms, ctdsv), model.predict_logits(waveforms, ctdsv)
        )
        for name, bn in model.norm_layers().items():
            assert restored.norm_layers()[name].stats.num_batches_tracked == bn.stats.num_batches_tracked
        assert restored.ctdsv_stats == model.ctdsv_stats

    def test_optimizer_state(self, tmp_path, trained):
        model, state, _, _ = trained
        path = save_checkpoint(model, tmp_path / "model.ckpt", optimizer=state)
        loaded = load_optimizer_state(path)
        assert loaded.step == 2 and loaded.lr == state.lr
        assert set(loaded.m) == set(model.parameters())
        for name in state.m:
            np.testing.assert_array_equal(loaded.m[name], state.m[name])
            np.testing.assert_array_equal(loaded.v[name], state.v[name])

    def test_optimizer_optional(self, tmp_path, trained):
        path = save_checkpoint(trained[0], tmp_path / "model.ckpt")
        assert load_optimizer_state(path) is None
        _, arrays = read_checkpoint(path)
        assert not any(name.startswith("adam_") for name in arrays)

    def test_single_precision_kept(self, tmp_path, unit_stats):
        model = VesselClassifier.initialize(tiny_config(training={"precision": "float32"}), ctdsv_stats=unit_stats)
        _, arrays = read_checkpoint(save_checkpoint(model, tmp_path / "f32.ckpt"))
        assert arrays["param.frontend.mu"].dtype == np.dtype("<f4")


class TestCorruption:
    @pytest.fixture
    def blob(self, tmp_path, trained):
        path = save_checkpoint(trained[0], tmp_path / "model.ckpt")
        return path, bytearray(path.read_bytes())

    def test_bad_magic(self, blob):
        path, data = blob
        data[:8] = b"NOTACKPT"
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="magic"):
            read_checkpoint(path)

    def test_unsupported_version(self, blob):
        path, data = blob
        struct.pack_into("<H", data, len(MAGIC), 99)
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version 99"):
            read_checkpoint(path)

    def test_truncated(self, blob):
        path, data = blob
        path.write_bytes(bytes(data[:-10]))
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)
        path.write_bytes(bytes(data[:5]))
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_flipped_payload_byte(self, blob):
        path, data = blob
        data[-1] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestArchitectureCheck:
    def test_mismatched_config_rejected(self, tmp_path, trained):
        path = save_checkpoint(trained[0], tmp_path / "model.ckpt")
        with pytest.raises(ConfigurationError, match="encoder"):
            load_checkpoint(path, expected_config=tiny_config(encoder={"pooling": "max"}))

    def test_training_fields_may_differ(self, tmp_path, trained):
        path = save_checkpoint(trained[0], tmp_path / "model.ckpt")
        model = load_checkpoint(path, expected_config=tiny_config(training={"epochs": 9, "lr": 0.1}))
        assert model.config.training.epochs == 1
