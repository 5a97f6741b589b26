from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from app.core.exceptions import InputError
from app.models.classifier import VesselClassifier
from app.models.frontend import FWHM_TO_SIGMA, GaborFrontend
from app.schemas.analysis import ActivationTensor, DeltaCurve, DeltaSpectrogram
from app.schemas.config import AnalysisConfig
from app.schemas.dataset import ClassLabel
from app.schemas.signal import Stage, Waveform
from app.services.dataio import LoadedSplit

FLOAT_FORMAT = "%.17g"


def frequency_order(frontend: GaborFrontend) -> np.ndarray:
    """Filter indices sorted by learned center frequency"""
    return np.argsort(frontend.params.gabor.mu, kind="stable")


def activation_tensor(
        frontend: GaborFrontend,
        clips: Sequence[Waveform],
        labels: Sequence[ClassLabel],
        clip_ids: Optional[Sequence[str]] = None,
        scenarios: Optional[Sequence[str]] = None,
        stage: Stage = Stage.NORMALIZED,
        batch_size: int = 32
) -> List[ActivationTensor]:
    """
    Frontend-only activations in eval mode, channels reordered by ascending mu

    Raises:
        InputError: a clip's sample rate differs from the frontend's
    """
    for i, clip in enumerate(clips):
        if clip.sample_rate != frontend.params.sample_rate:
            raise InputError(
                f"Clip {i} sampled at {clip.sample_rate} Hz, frontend expects {frontend.params.sample_rate} Hz"
            )
    order = frequency_order(frontend)
    tensors = []
    for start in range(0, len(clips), batch_size):
        batch = np.stack([c.samples for c in clips[start:start + batch_size]])
        maps, _ = frontend.forward(batch, mode="eval", stage=stage)
        for j, values in enumerate(maps):
            k = start + j
            tensors.append(ActivationTensor(
                values=values[order],
                clip_id=clip_ids[k] if clip_ids is not None else str(k),
                label=labels[k],
                scenario=scenarios[k] if scenarios is not None else None,
            ))
    return tensors


def class_mean_activation(tensors: Sequence[ActivationTensor], label: ClassLabel) -> np.ndarray:
    """Mean over clips and frames of every channel for one class"""
    selected = [t.values for t in tensors if t.label == label]
    if not selected:
        raise InputError(f"No activation tensors of class {label.value}")
    return np.stack(selected).mean(axis=(0, 2))


def delta_curve(a_pos: np.ndarray, a_ref: np.ndarray, center_freq_hz: Optional[np.ndarray] = None,
                scenario: Optional[str] = None) -> DeltaCurve:
    if a_pos.shape != a_ref.shape:
        raise InputError(f"Class means differ in shape: {a_pos.shape} vs {a_ref.shape}")
    return DeltaCurve(values=a_pos - a_ref, center_freq_hz=center_freq_hz, scenario=scenario)


def delta_spectrogram(tensors_pos: Sequence[ActivationTensor], tensors_ref: Sequence[ActivationTensor],
                      center_freq_hz: Optional[np.ndarray] = None,
                      scenario: Optional[str] = None) -> DeltaSpectrogram:
    """Difference of clip-averaged (not time-averaged) activations"""
    if not tensors_pos or not tensors_ref:
        raise InputError("Delta spectrogram needs at least one tensor per class")
    shapes = {t.values.shape for t in list(tensors_pos) + list(tensors_ref)}
    if len(shapes) != 1:
        raise InputError(f"Activation tensors differ in shape: {sorted(shapes)}")
    pos = np.stack([t.values for t in tensors_pos]).mean(axis=0)
    ref = np.stack([t.values for t in tensors_ref]).mean(axis=0)
    return DeltaSpectrogram(values=pos - ref, center_freq_hz=center_freq_hz, scenario=scenario)


def active_filter_count(curve: DeltaCurve, threshold: float) -> int:
    """Filters with |delta| >= threshold * max |delta|; an all-zero curve counts 0"""
    if threshold <= 0:
        raise InputError("threshold must be positive")
    magnitude = np.abs(curve.values)
    peak = magnitude.max() if magnitude.size else 0.0
    if peak == 0:
        return 0
    return int(np.sum(magnitude >= threshold * peak))


def _tag(scenario: Optional[str]) -> str:
    return scenario or "all"


def export_analysis(curves: Sequence[DeltaCurve], spectrograms: Sequence[DeltaSpectrogram],
                    out_dir: Path, filter_index: Optional[np.ndarray] = None) -> List[Path]:
    """
    delta_curve_<scenario>.csv (filter_index, center_freq_hz, delta) and
    delta_spectrogram_<scenario>.csv (filter_index, center_freq_hz, frame_0 .. frame_T-1)

    Rows follow the curves' ascending-frequency order; filter_index is the
    training-time filter index when given, else the row position.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for curve in curves:
        n = curve.values.shape[0]
        frame = pd.DataFrame({
            "filter_index": filter_index if filter_index is not None else np.arange(n),
            "center_freq_hz": curve.center_freq_hz if curve.center_freq_hz is not None else np.full(n, np.nan),
            "delta": curve.values,
        })
        path = out_dir / f"delta_curve_{_tag(curve.scenario)}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)
    for spec in spectrograms:
        n, t = spec.values.shape
        frame = pd.DataFrame(spec.values, columns=[f"frame_{j}" for j in range(t)])
        frame.insert(0, "center_freq_hz", spec.center_freq_hz if spec.center_freq_hz is not None else np.full(n, np.nan))
        frame.insert(0, "filter_index", filter_index if filter_index is not None else np.arange(n))
        path = out_dir / f"delta_spectrogram_{_tag(spec.scenario)}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)
    return written


def filterbank_table(frontend: GaborFrontend) -> pd.DataFrame:
    """Learned filters in ascending-frequency order with physical units"""
    p = frontend.params
    order = frequency_order(frontend)
    sr = p.sample_rate
    sigma = p.gabor.sigma.astype(np.float64)
    return pd.DataFrame({
        "filter_index": order,
        "center_freq_hz": p.center_frequencies_hz()[order].astype(np.float64),
        "bandwidth_hz": (FWHM_TO_SIGMA / sigma * sr / (2.0 * np.pi))[order],
        "pooling_width_ms": (FWHM_TO_SIGMA * p.pooling.rho.astype(np.float64) / sr * 1000.0)[order],
        "log_gain": p.compression.a.astype(np.float64)[order],
    })


class AnalysisService:
    """Class-contrast analysis of a trained frontend, one result set per scenario"""

    def __init__(self, config: AnalysisConfig):
        self.config = config

    def run(self, model: VesselClassifier, split: LoadedSplit, out_dir: Path,
            clip_ids: Optional[Sequence[str]] = None) -> Dict[str, int]:
        """
        Write delta curves, delta spectrograms, the filterbank table and
        active-filter counts for every scenario of `split` holding both classes;
        other scenarios are skipped with a warning

        Returns:
            active filter count per scenario
        """
        cfg = self.config
        frontend = model.frontend
        order = frequency_order(frontend)
        freqs = frontend.params.center_frequencies_hz()[order].astype(np.float64)
        pos, ref = cfg.positive_class, cfg.reference_class

        keep = np.isin(split.labels, [pos.index, ref.index])
        subset = split.subset(np.flatnonzero(keep))
        ids = np.asarray(clip_ids)[keep] if clip_ids is not None else None
        tensors = activation_tensor(
            frontend,
            [Waveform(samples=w, sample_rate=subset.sample_rate) for w in subset.waveforms.astype(model.dtype)],
            [ClassLabel.from_index(i) for i in subset.labels],
            clip_ids=list(ids) if ids is not None else None,
            scenarios=list(subset.scenarios),
            stage=Stage(cfg.stage),
        )

        curves, spectrograms, counts = [], [], {}
        for scenario in sorted(set(subset.scenarios.tolist())):
            scoped = [t for t in tensors if t.scenario == scenario]
            missing = [c.value for c in (pos, ref) if not any(t.label == c for t in scoped)]
            if missing:
                logger.bind(scenario=scenario, missing=missing).warning("Scenario skipped in delta analysis")
                continue
            curve = delta_curve(class_mean_activation(scoped, pos), class_mean_activation(scoped, ref), freqs, scenario)
            spec = delta_spectrogram([t for t in scoped if t.label == pos], [t for t in scoped if t.label == ref],
                                     freqs, scenario)
            curves.append(curve)
            spectrograms.append(spec)
            counts[scenario] = active_filter_count(curve, cfg.threshold)
            logger.bind(scenario=scenario, active_filters=counts[scenario]).info("Delta analysis done")

        if not counts:
            raise InputError(f"No scenario has both {pos.value} and {ref.value} clips")

        out_dir = Path(out_dir)
        export_analysis(curves, spectrograms, out_dir, filter_index=order)
        filterbank_table(frontend).to_csv(out_dir / "filterbank.csv", index=False, float_format=FLOAT_FORMAT)
        pd.DataFrame({"scenario": list(counts), "active_filters": list(counts.values()),
                      "threshold": cfg.threshold}).to_csv(out_dir / "active_filters.csv", index=False)
        return counts
