from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from app.schemas.dataset import N_CLASSES, ClassLabel


class ClassMetrics(BaseModel):
    precision: float
    recall: float
    support: int
    confusion_rates: Dict[str, float] = Field(default_factory=dict)


class Metrics(BaseModel):
    """
    Test-set evaluation summary

    Attributes:
        accuracy: trace(confusion) / total
        per_class: precision, recall, support and row-normalized confusion rates per class
        confusion: 5 x 5 counts, rows = true class, columns = predicted class
        per_scenario: accuracy on the clips of each scenario present
        scenario_counts: clips per scenario
    """
    accuracy: float
    per_class: Dict[str, ClassMetrics]
    confusion: List[List[int]]
    per_scenario: Dict[str, float]
    scenario_counts: Dict[str, int] = Field(default_factory=dict)

    @classmethod
    def from_predictions(cls, labels: np.ndarray, predictions: np.ndarray,
                         scenarios: Optional[np.ndarray] = None) -> "Metrics":
        labels = np.asarray(labels, dtype=np.int64)
        predictions = np.asarray(predictions, dtype=np.int64)
        confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
        np.add.at(confusion, (labels, predictions), 1)
        total = int(confusion.sum())

        per_class = {}
        for c in ClassLabel:
            row, col = confusion[c.index], confusion[:, c.index]
            support = int(row.sum())
            per_class[c.value] = ClassMetrics(
                precision=float(row[c.index] / col.sum()) if col.sum() else 0.0,
                recall=float(row[c.index] / support) if support else 0.0,
                support=support,
                confusion_rates={
                    other.value: float(row[other.index] / support) if support else 0.0 for other in ClassLabel
                },
            )

        per_scenario, counts = {}, {}
        if scenarios is not None:
            scenarios = np.asarray(scenarios)
            for scenario in sorted(set(scenarios.tolist())):
                mask = scenarios == scenario
                counts[scenario] = int(mask.sum())
                per_scenario[scenario] = float(np.mean(labels[mask] == predictions[mask]))

        return cls(
            accuracy=float(np.trace(confusion) / total) if total else 0.0,
            per_class=per_class,
            confusion=confusion.tolist(),
            per_scenario=per_scenario,
            scenario_counts=counts,
        )

    def confusion_rate(self, true: ClassLabel, predicted: ClassLabel) -> float:
        """Fraction of `true`-class clips predicted as `predicted`"""
        return self.per_class[true.value].confusion_rates[predicted.value]


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_accuracy: float
    per_scenario: Dict[str, float] = Field(default_factory=dict)


class History(BaseModel):
    """Per-epoch training trace plus warnings raised while training"""
    records: List[EpochRecord] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    train_rows: int = 0
    best_epoch: Optional[int] = None
    best_val_accuracy: Optional[float] = None

    @property
    def losses(self) -> List[float]:
        return [r.train_loss for r in self.records]
