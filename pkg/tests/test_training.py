import numpy as np
import pytest

from app.core.checkpoint import load_checkpoint
from app.core.exceptions import (
    ConfigurationError,
    DataValidationError,
    InputError,
    NumericalError,
    UninitializedStatisticsError,
)
from app.models.classifier import VesselClassifier
from app.schemas.dataset import ClassLabel
from app.services.dataio import load_manifest
from app.services.training_service import TrainingService, read_history, write_history
from tests.conftest import tiny_config


@pytest.fixture(scope="module")
def tiny_data(corpus):
    config = tiny_config(training={"epochs": 2})
    return TrainingService(config).load_data(load_manifest(corpus))


class TestLoadData:
    def test_splits_and_stats(self, corpus, tiny_data):
        assert (len(tiny_data.train), len(tiny_data.val), len(tiny_data.test)) == (75, 15, 15)
        assert tiny_data.train.waveforms.shape == (75, 1000)
        assert len(tiny_data.ctdsv_stats.mean) == 5
        np.testing.assert_allclose(tiny_data.ctdsv_stats.mean, tiny_data.train.ctdsv.mean(axis=0))

    def test_scenario_subset(self, corpus):
        config = tiny_config(data={"scenarios": ["S1"], "manifest": str(corpus)})
        data = TrainingService(config).load_data()
        assert len(data.train) == 25
        assert set(data.test.scenarios.tolist()) == {"S1"}

    def test_missing_manifest(self):
        with pytest.raises(ConfigurationError):
            TrainingService(tiny_config()).load_data()


class TestTrain:
    def test_history_and_best_epoch(self, tiny_data, tmp_path):
        service = TrainingService(tiny_config(training={"epochs": 2}))
        result = service.train(tiny_data.train, tiny_data.val, tiny_data.ctdsv_stats,
                               checkpoint_path=tmp_path / "model.ckpt")
        history = result.history
        assert [r.epoch for r in history.records] == [0, 1]
        assert history.train_rows == 75
        assert history.best_epoch in (0, 1)
        assert history.best_val_accuracy == max(r.val_accuracy for r in history.records)
        assert set(history.records[0].per_scenario) == {"S1", "S2", "S3"}
        assert all(np.isfinite(history.losses))

        restored = load_checkpoint(tmp_path / "model.ckpt")
        metrics = service.evaluate(restored, tiny_data.val)
        assert metrics.accuracy == pytest.approx(history.best_val_accuracy)

    def test_same_seed_same_model(self, tiny_data):
        service = TrainingService(tiny_config())
        a = service.train(tiny_data.train, tiny_data.val, tiny_data.ctdsv_stats, seed=3).model
        b = service.train(tiny_data.train, tiny_data.val, tiny_data.ctdsv_stats, seed=3).model
        for name, value in a.parameters().items():
            np.testing.assert_array_equal(value, b.parameters()[name])

    def test_thread_count_does_not_change_training(self, tiny_data):
        results = [
            TrainingService(tiny_config(training={"epochs": 2}, runtime={"threads": threads})).train(
                tiny_data.train, tiny_data.val, tiny_data.ctdsv_stats, seed=5)
            for threads in (1, 3)
        ]
        single, pooled = results
        assert pooled.model.frontend.n_jobs == 3
        assert len(single.history.records) == len(pooled.history.records) == 2
        for a, b in zip(single.history.records, pooled.history.records):
            assert a.train_loss == pytest.approx(b.train_loss, rel=0, abs=1e-12)
            assert a.val_accuracy == b.val_accuracy
            assert a.per_scenario == b.per_scenario
        assert single.history.best_epoch == pooled.history.best_epoch
        for name, value in single.model.parameters().items():
            np.testing.assert_allclose(pooled.model.parameters()[name], value, rtol=0, atol=1e-12)

    def test_empty_class_warning(self, tiny_data):
        keep = np.flatnonzero(tiny_data.train.labels != ClassLabel.CARGO.index)
        service = TrainingService(tiny_config(training={"epochs": 1, "debug_checks": True}))
        history = service.train(tiny_data.train.subset(keep), tiny_data.val, tiny_data.ctdsv_stats).history
        assert history.warnings == ["class Cargo has no training clips"]

    def test_empty_training_split(self, tiny_data):
        empty = tiny_data.train.subset(np.array([], dtype=np.int64))
        with pytest.raises(DataValidationError):
            TrainingService(tiny_config()).train(empty, tiny_data.val, tiny_data.ctdsv_stats)

    def test_numerical_failure_names_epoch_and_batch(self, tiny_data, monkeypatch):
        def explode(self, *args):
            raise NumericalError("Non-finite training loss")

        monkeypatch.setattr(VesselClassifier, "loss_and_grads", explode)
        with pytest.raises(NumericalError, match="epoch 0 batch 0"):
            TrainingService(tiny_config()).train(tiny_data.train, tiny_data.val, tiny_data.ctdsv_stats)

    def test_zero_epochs_saves_initial_model(self, tiny_data, tmp_path):
        service = TrainingService(tiny_config(training={"epochs": 0}))
        result = service.train(tiny_data.train, tiny_data.val, tiny_data.ctdsv_stats,
                               checkpoint_path=tmp_path / "model.ckpt")
        assert result.history.records == [] and result.history.best_epoch is None
        assert (tmp_path / "model.ckpt").is_file()


class TestEvaluate:
    def test_untrained_model(self, tiny_data, unit_stats):
        config = tiny_config()
        model = VesselClassifier.initialize(config, ctdsv_stats=unit_stats)
        with pytest.raises(UninitializedStatisticsError):
            TrainingService(config).evaluate(model, tiny_data.test)

    def test_sample_rate_mismatch(self, tiny_data, unit_stats):
        config = tiny_config()
        model = VesselClassifier.initialize(config, ctdsv_stats=unit_stats)
        wrong = tiny_data.test.model_copy(update={"sample_rate": 8000})
        with pytest.raises(InputError):
            TrainingService(config).evaluate(model, wrong)


class TestHistoryFile:
    def test_round_trip(self, tiny_data, tmp_path):
        result = TrainingService(tiny_config()).train(tiny_data.train, tiny_data.val, tiny_data.ctdsv_stats)
        result.history.warnings.append("class Tug has no training clips")
        path = write_history(result.history, tmp_path / "history.csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# train_rows=75"
        assert "# warning: class Tug has no training clips" in lines
        frame = read_history(path)
        assert list(frame.columns) == ["epoch", "train_loss", "val_accuracy",
                                       "val_accuracy_S1", "val_accuracy_S2", "val_accuracy_S3"]
        assert frame["train_loss"].tolist() == result.history.losses
