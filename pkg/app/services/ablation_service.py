from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from app.schemas.config import RunConfig
from app.schemas.dataset import Scenario
from app.services.dataio import ClipDataset
from app.services.training_service import TrainingService

VARIANTS = (
    ("attention", True),
    ("attention", False),
    ("max", True),
    ("max", False),
)

ABLATION_COLUMNS = ["scenarios", "pooling", "use_ctdsv", "median_accuracy", "accuracies", "seeds"]


def subset_tag(scenarios: Sequence[Scenario]) -> str:
    return "+".join(Scenario(s).value for s in scenarios)


def variant_config(config: RunConfig, scenarios: Sequence[Scenario], pooling: str, use_ctdsv: bool) -> RunConfig:
    return config.model_copy(update={
        "encoder": config.encoder.model_copy(update={"pooling": pooling}),
        "head": config.head.model_copy(update={"use_ctdsv": use_ctdsv}),
        "data": config.data.model_copy(update={"scenarios": list(scenarios)}),
    })


class AblationService:
    """{attention, max} x {CTDSV, none} grid over scenario subsets and seeds"""

    def __init__(self, config: RunConfig):
        self.config = config

    def run(self, dataset: Optional[ClipDataset] = None) -> pd.DataFrame:
        """
        Train and test every variant; one row per (subset, variant) with the
        median test accuracy over the configured seeds
        """
        base = self.config
        full = dataset if dataset is not None else TrainingService(base).load_dataset()
        rows: List[dict] = []
        for scenarios in base.ablation.scenario_subsets:
            data = TrainingService(variant_config(base, scenarios, "attention", True)).load_data(
                full.with_scenarios(scenarios)
            )
            for pooling, use_ctdsv in VARIANTS:
                service = TrainingService(variant_config(base, scenarios, pooling, use_ctdsv))
                accuracies = []
                for seed in base.ablation.seeds:
                    result = service.train(data.train, data.val, data.ctdsv_stats, seed=seed)
                    accuracies.append(service.evaluate(result.model, data.test).accuracy)
                row = {
                    "scenarios": subset_tag(scenarios),
                    "pooling": pooling,
                    "use_ctdsv": use_ctdsv,
                    "median_accuracy": float(np.median(accuracies)),
                    "accuracies": ";".join(f"{a:.17g}" for a in accuracies),
                    "seeds": ";".join(str(s) for s in base.ablation.seeds),
                }
                logger.bind(**{k: row[k] for k in ("scenarios", "pooling", "use_ctdsv", "median_accuracy")}).info(
                    "Ablation cell done"
                )
                rows.append(row)
        return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def write_ablation(table: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g")
    return path
