from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.io import wavfile

from app.core.exceptions import DataValidationError, InputError
from app.schemas.dataset import CTDSV_FIELDS, ClassLabel, CtdsvStats, ManifestRow, Scenario, Split
from app.schemas.signal import Waveform

MANIFEST_COLUMNS: Tuple[str, ...] = (
    "path", "label", "scenario", "distance_km", *CTDSV_FIELDS, "split",
)
PCM16_SCALE = 32768.0


class ClipDataset:
    """
    Validated manifest rows plus the directory their paths are relative to

    Views returned by `split` and `with_scenarios` share the root and keep the
    manifest line order.
    """

    def __init__(self, frame: pd.DataFrame, root: Path):
        self.frame = frame.reset_index(drop=True)
        self.root = Path(root)

    def __len__(self) -> int:
        return len(self.frame)

    def split(self, split: Union[Split, str]) -> "ClipDataset":
        return ClipDataset(self.frame[self.frame["split"] == Split(split).value], self.root)

    def with_scenarios(self, scenarios: Sequence[Union[Scenario, str]]) -> "ClipDataset":
        wanted = {Scenario(s).value for s in scenarios}
        return ClipDataset(self.frame[self.frame["scenario"].isin(wanted)], self.root)

    def with_labels(self, labels: Sequence[ClassLabel]) -> "ClipDataset":
        wanted = {ClassLabel(label).value for label in labels}
        return ClipDataset(self.frame[self.frame["label"].isin(wanted)], self.root)

    @property
    def labels(self) -> np.ndarray:
        return np.array([ClassLabel(v).index for v in self.frame["label"]], dtype=np.int64)

    @property
    def scenarios(self) -> np.ndarray:
        return self.frame["scenario"].to_numpy(dtype=str)

    @property
    def ctdsv(self) -> np.ndarray:
        return self.frame[list(CTDSV_FIELDS)].to_numpy(dtype=np.float64)

    def rows(self) -> List[ManifestRow]:
        records = self.frame.astype(object).where(self.frame.notna(), None).to_dict(orient="records")
        return [ManifestRow.model_validate(r) for r in records]

    def clip_path(self, index: int) -> Path:
        return self.root / self.frame["path"].iloc[index]

    def split_counts(self) -> Dict[str, int]:
        return {s.value: int((self.frame["split"] == s.value).sum()) for s in Split}

    def cell_counts(self) -> Dict[Tuple[str, str], int]:
        """Clips per (class, scenario) cell present in the dataset"""
        grouped = self.frame.groupby(["label", "scenario"]).size()
        return {(label, scenario): int(n) for (label, scenario), n in grouped.items()}


def load_manifest(path: Path, root: Optional[Path] = None) -> ClipDataset:
    """
    Read and validate a manifest CSV

    Args:
        path: manifest file
        root: directory clip paths are relative to (defaults to the manifest's directory)

    Raises:
        DataValidationError: missing/empty file, wrong header, or itemized row errors
            (unknown label or scenario, bad numbers, missing audio, duplicate paths)
    """
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    if not path.is_file():
        raise DataValidationError(f"Manifest not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: no rows")
    if tuple(frame.columns) != MANIFEST_COLUMNS:
        raise DataValidationError(
            f"{path}: header must be {','.join(MANIFEST_COLUMNS)}, got {','.join(frame.columns)}"
        )
    if frame.empty:
        raise DataValidationError(f"{path}: no rows")

    errors: List[str] = []
    seen: Dict[str, int] = {}
    records = []
    for i, raw in enumerate(frame.to_dict(orient="records")):
        line = i + 2
        values = {k: (v.strip() if isinstance(v, str) else v) for k, v in raw.items()}
        if values["distance_km"] == "":
            values["distance_km"] = None
        try:
            row = ManifestRow.model_validate(values)
        except ValidationError as e:
            for err in e.errors():
                field = ".".join(str(p) for p in err["loc"]) or "row"
                errors.append(f"line {line}: {field} {values.get(field, '')!r}: {err['msg']}")
            continue
        if row.path in seen:
            errors.append(f"line {line}: duplicate path {row.path} (first on line {seen[row.path]})")
            continue
        seen[row.path] = line
        if not (root / row.path).is_file():
            errors.append(f"line {line}: audio file not found: {row.path}")
        records.append(row.model_dump(mode="json"))

    if errors:
        logger.bind(path=str(path), errors=len(errors)).warning("Manifest validation failed")
        raise DataValidationError(f"{path}: invalid manifest", errors=errors)

    dataset = ClipDataset(pd.DataFrame.from_records(records, columns=list(MANIFEST_COLUMNS)), root)
    logger.bind(path=str(path), rows=len(dataset), **dataset.split_counts()).info("Manifest loaded")
    return dataset


def fit_length(samples: np.ndarray, n_samples: int) -> np.ndarray:
    """Reflect-pad (both ends) or center-crop to exactly n_samples"""
    n = samples.shape[0]
    if n == n_samples:
        return samples
    if n > n_samples:
        start = (n - n_samples) // 2
        return samples[start:start + n_samples]
    deficit = n_samples - n
    return np.pad(samples, (deficit // 2, deficit - deficit // 2), mode="reflect")


def load_clip(path: Path, sample_rate: int, n_samples: int) -> Waveform:
    """
    Read a PCM-16 mono WAV, scale by 1/32768 and fit it to n_samples

    Raises:
        InputError: unreadable file, wrong sample rate, multiple channels or non-PCM-16 data
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as e:
        raise InputError(f"Cannot read WAV {path}: {str(e)}")
    if rate != sample_rate:
        raise InputError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz (no resampling)")
    if data.ndim == 2:
        if data.shape[1] != 1:
            raise InputError(f"{path}: {data.shape[1]} channels, expected mono")
        data = data[:, 0]
    if data.dtype != np.int16:
        raise InputError(f"{path}: sample format {data.dtype}, expected 16-bit PCM")
    if data.shape[0] < 2:
        raise InputError(f"{path}: clip has {data.shape[0]} samples")
    samples = data.astype(np.float64) / PCM16_SCALE
    return Waveform(samples=fit_length(samples, n_samples), sample_rate=sample_rate)


def normalize_ctdsv(train: ClipDataset) -> CtdsvStats:
    """
    Z-score statistics of the training split

    Constant fields get std 0 (applied with a unit divisor) and a recorded warning.

    Raises:
        DataValidationError: empty training split
    """
    if len(train) == 0:
        raise DataValidationError("Cannot compute CTDSV statistics from an empty training split")
    values = train.ctdsv
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    warnings = []
    for name, s in zip(CTDSV_FIELDS, std):
        if s == 0:
            warnings.append(f"CTDSV field {name} is constant in the training split; passed through unscaled")
            logger.bind(field=name).warning("Constant CTDSV field")
    return CtdsvStats(mean=mean.tolist(), std=std.tolist(), warnings=warnings)


def batch_iter(n_items: int, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """
    Index batches of a seeded permutation; the last partial batch is kept

    The permutation depends only on (seed, epoch).
    """
    if batch_size < 1:
        raise InputError("batch_size must be at least 1")
    order = np.random.default_rng([seed, epoch]).permutation(n_items)
    for start in range(0, n_items, batch_size):
        yield order[start:start + batch_size]


class LoadedSplit(BaseModel):
    """Clips of one split held in memory, in manifest order"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    waveforms: np.ndarray
    ctdsv: np.ndarray
    labels: np.ndarray
    scenarios: np.ndarray
    sample_rate: int

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices: np.ndarray) -> "LoadedSplit":
        return LoadedSplit(
            waveforms=self.waveforms[indices],
            ctdsv=self.ctdsv[indices],
            labels=self.labels[indices],
            scenarios=self.scenarios[indices],
            sample_rate=self.sample_rate,
        )

    def class_counts(self) -> Dict[ClassLabel, int]:
        return {c: int(np.sum(self.labels == c.index)) for c in ClassLabel}


def load_split(dataset: ClipDataset, sample_rate: int, n_samples: int, n_jobs: int = 1) -> LoadedSplit:
    paths = [dataset.clip_path(i) for i in range(len(dataset))]
    clips = Parallel(n_jobs=n_jobs, backend="threading")(
        delayed(load_clip)(p, sample_rate, n_samples) for p in paths
    )
    waveforms = np.stack([c.samples for c in clips]) if clips else np.zeros((0, n_samples))
    return LoadedSplit(
        waveforms=waveforms,
        ctdsv=dataset.ctdsv,
        labels=dataset.labels,
        scenarios=dataset.scenarios,
        sample_rate=sample_rate,
    )
