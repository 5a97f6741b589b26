from pathlib import Path
from typing import Dict, NamedTuple, Optional

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from app.core.checkpoint import save_checkpoint
from app.core.config import settings
from app.core.exceptions import ConfigurationError, DataValidationError, InputError, InternalError, NumericalError
from app.models.classifier import VesselClassifier
from app.models.head import predict
from app.schemas.config import RunConfig
from app.schemas.dataset import CtdsvStats, Split
from app.schemas.metrics import EpochRecord, History, Metrics
from app.services.dataio import ClipDataset, LoadedSplit, batch_iter, load_manifest, load_split, normalize_ctdsv
from app.services.optimizer import AdamState, adam_step


class TrainingData(NamedTuple):
    train: LoadedSplit
    val: LoadedSplit
    test: LoadedSplit
    ctdsv_stats: CtdsvStats


class TrainResult(NamedTuple):
    model: VesselClassifier
    history: History
    optimizer: AdamState


class TrainingService:
    """Joint training of the frontend and classifier, evaluation and data preparation"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.dtype = np.dtype(config.training.precision)

    def load_dataset(self) -> ClipDataset:
        manifest = self.config.data.manifest
        if manifest is None:
            raise ConfigurationError("No manifest configured (data.manifest or --manifest)")
        return load_manifest(manifest).with_scenarios(self.config.data.scenarios)

    def load_data(self, dataset: Optional[ClipDataset] = None) -> TrainingData:
        """Load the three splits of the configured scenarios; CTDSV stats come from train only"""
        dataset = dataset if dataset is not None else self.load_dataset()
        fe = self.config.frontend
        threads = self.config.runtime.threads
        train = dataset.split(Split.TRAIN)
        if len(train) == 0:
            raise DataValidationError("Training split is empty for the selected scenarios")
        splits = {
            split: load_split(dataset.split(split), fe.sample_rate, fe.n_samples, n_jobs=threads)
            for split in Split
        }
        return TrainingData(splits[Split.TRAIN], splits[Split.VAL], splits[Split.TEST], normalize_ctdsv(train))

    def train(
            self,
            train_set: LoadedSplit,
            val_set: LoadedSplit,
            ctdsv_stats: Optional[CtdsvStats] = None,
            seed: Optional[int] = None,
            checkpoint_path: Optional[Path] = None
    ) -> TrainResult:
        """
        Train theta and psi jointly with Adam

        Each epoch walks a (seed, epoch)-seeded permutation of the training split.
        The returned model holds the parameters of the best validation epoch.

        Raises:
            DataValidationError: empty training split
            NumericalError: NaN/Inf loss or gradient, reported with epoch and batch
        """
        cfg = self.config.training
        seed = cfg.seed if seed is None else seed
        if len(train_set) == 0:
            raise DataValidationError("Training split is empty")
        self._check_rate(train_set)

        model = VesselClassifier.initialize(self.config, seed=seed, ctdsv_stats=ctdsv_stats)
        optimizer = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
        params = model.parameters()
        history = History(train_rows=len(train_set))
        for label, count in train_set.class_counts().items():
            if count == 0:
                history.warnings.append(f"class {label.value} has no training clips")
                logger.bind(label=label.value).warning("Empty class in training split")

        best = None
        waveforms = train_set.waveforms.astype(self.dtype)
        for epoch in range(cfg.epochs):
            total, seen = 0.0, 0
            batches = list(batch_iter(len(train_set), cfg.batch_size, seed, epoch))
            for b, idx in enumerate(tqdm(batches, desc=f"epoch {epoch}", leave=False,
                                         disable=not settings.SHOW_PROGRESS)):
                try:
                    loss, grads, _ = model.loss_and_grads(waveforms[idx], train_set.ctdsv[idx], train_set.labels[idx])
                    adam_step(params, grads, optimizer, clamp=model.clamp_)
                except NumericalError as e:
                    raise NumericalError(f"epoch {epoch} batch {b}: {e.detail}")
                total += loss * len(idx)
                seen += len(idx)
                logger.bind(epoch=epoch, batch=b, loss=loss).debug("batch done")

            if cfg.debug_checks:
                violations = model.constraint_violations()
                if violations:
                    raise InternalError(f"epoch {epoch}: frontend constraints violated: {'; '.join(violations)}")

            val = self.evaluate(model, val_set) if len(val_set) else None
            record = EpochRecord(
                epoch=epoch,
                train_loss=total / seen,
                val_accuracy=val.accuracy if val else float("nan"),
                per_scenario=val.per_scenario if val else {},
            )
            history.records.append(record)
            logger.bind(epoch=epoch, train_loss=record.train_loss, val_accuracy=record.val_accuracy).info("Epoch finished")

            if val is not None and (best is None or record.val_accuracy > history.best_val_accuracy):
                history.best_epoch, history.best_val_accuracy = epoch, record.val_accuracy
                best = self._snapshot(model)
                if checkpoint_path is not None:
                    save_checkpoint(model, checkpoint_path)

        if best is not None:
            self._restore(model, best)
        elif checkpoint_path is not None:
            save_checkpoint(model, checkpoint_path)
        return TrainResult(model, history, optimizer)

    @staticmethod
    def _snapshot(model: VesselClassifier) -> Dict[str, object]:
        arrays = {k: v.copy() for k, v in {**model.parameters(), **model.buffers()}.items()}
        counters = {k: bn.stats.num_batches_tracked for k, bn in model.norm_layers().items()}
        return {"arrays": arrays, "counters": counters}

    @staticmethod
    def _restore(model: VesselClassifier, snapshot: Dict[str, object]) -> None:
        live = {**model.parameters(), **model.buffers()}
        for name, value in snapshot["arrays"].items():
            np.copyto(live[name], value)
        for name, bn in model.norm_layers().items():
            bn.stats.num_batches_tracked = snapshot["counters"][name]

    def _check_rate(self, split: LoadedSplit) -> None:
        if split.sample_rate != self.config.frontend.sample_rate:
            raise InputError(
                f"Clips sampled at {split.sample_rate} Hz, model expects {self.config.frontend.sample_rate} Hz"
            )

    def predict(self, model: VesselClassifier, split: LoadedSplit) -> np.ndarray:
        batch = self.config.training.batch_size
        predictions = []
        for start in range(0, len(split), batch):
            sl = slice(start, start + batch)
            logits = model.predict_logits(split.waveforms[sl].astype(model.dtype), split.ctdsv[sl])
            if not np.all(np.isfinite(logits)):
                raise NumericalError(f"Non-finite logits for clips {start}..{start + len(logits) - 1}")
            predictions.append(predict(logits))
        return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)

    def evaluate(self, model: VesselClassifier, test_set: LoadedSplit) -> Metrics:
        """
        Eval-mode accuracy, per-class precision/recall, confusion counts and per-scenario accuracy

        Raises:
            InputError: test clips use a different sample rate than the model
            UninitializedStatisticsError: model never ran a training step
        """
        if test_set.sample_rate != model.config.frontend.sample_rate:
            raise InputError(
                f"Clips sampled at {test_set.sample_rate} Hz, model trained at {model.config.frontend.sample_rate} Hz"
            )
        return Metrics.from_predictions(test_set.labels, self.predict(model, test_set), test_set.scenarios)


def write_history(history: History, path: Path) -> Path:
    """History CSV: '#' comment lines (train rows, warnings) then one row per epoch"""
    path = Path(path)
    scenarios = sorted({s for r in history.records for s in r.per_scenario})
    frame = pd.DataFrame(
        [
            {
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "val_accuracy": r.val_accuracy,
                **{f"val_accuracy_{s}": r.per_scenario.get(s, float("nan")) for s in scenarios},
            }
            for r in history.records
        ],
        columns=["epoch", "train_loss", "val_accuracy", *[f"val_accuracy_{s}" for s in scenarios]],
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# train_rows={history.train_rows}\n")
        if history.best_epoch is not None:
            f.write(f"# best_epoch={history.best_epoch}\n")
        for warning in history.warnings:
            f.write(f"# warning: {warning}\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def read_history(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
