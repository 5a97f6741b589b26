import numpy as np
import pytest

from app.schemas.dataset import ClassLabel
from app.schemas.metrics import Metrics


class TestMetrics:
    def test_counts_and_rates(self):
        labels = np.array([0, 0, 0, 4, 4, 1])
        predictions = np.array([0, 4, 0, 4, 0, 1])
        metrics = Metrics.from_predictions(labels, predictions, np.array(["S1", "S1", "S2", "S2", "S2", "S1"]))
        assert metrics.accuracy == pytest.approx(4 / 6)
        assert metrics.confusion[0] == [2, 0, 0, 0, 1]
        assert metrics.confusion[4] == [1, 0, 0, 0, 1]
        tug = metrics.per_class["Tug"]
        assert tug.support == 3
        assert tug.recall == pytest.approx(2 / 3)
        assert tug.precision == pytest.approx(2 / 3)
        assert metrics.confusion_rate(ClassLabel.TUG, ClassLabel.BACKGROUND) == pytest.approx(1 / 3)
        assert metrics.confusion_rate(ClassLabel.BACKGROUND, ClassLabel.TUG) == pytest.approx(1 / 2)
        assert metrics.per_scenario == {"S1": pytest.approx(2 / 3), "S2": pytest.approx(2 / 3)}
        assert metrics.scenario_counts == {"S1": 3, "S2": 3}

    def test_absent_class(self):
        metrics = Metrics.from_predictions(np.array([1, 1]), np.array([1, 1]))
        cargo = metrics.per_class["Cargo"]
        assert cargo.support == 0 and cargo.precision == 0.0 and cargo.recall == 0.0
        assert metrics.per_scenario == {}
        assert metrics.accuracy == 1.0

    def test_confusion_sums_to_total(self, rng):
        labels = rng.integers(0, 5, 50)
        metrics = Metrics.from_predictions(labels, rng.integers(0, 5, 50))
        assert np.sum(metrics.confusion) == 50
        assert [c.support for c in metrics.per_class.values()] == np.bincount(labels, minlength=5).tolist()
