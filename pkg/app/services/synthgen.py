"""
Synthetic vessel/background corpus

Vessel clips are a harmonic stack plus band-limited machinery noise under slow
amplitude modulation, propagated to a sampled range with spherical spreading and
Thorp absorption, then mixed with colored ambient noise. Background clips are the
ambient noise alone.
"""
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from scipy.io import wavfile
from scipy.ndimage import median_filter
from tqdm import tqdm

from app.core.config import settings
from app.core.exceptions import DataValidationError, InputError
from app.schemas.config import RunConfig
from app.schemas.dataset import CTDSV_FIELDS, ClassLabel, ScenarioSpec, Split, VesselClassProfile
from app.schemas.signal import Waveform
from app.services.dataio import MANIFEST_COLUMNS, PCM16_SCALE

AMBIENT_CORNER_HZ = 10.0
PEAK_SEARCH_MIN_HZ = 20.0
PEAK_MEDIAN_HALF_WIDTH = 50


def thorp_absorption(f_hz) -> np.ndarray:
    """Seawater absorption in dB/km"""
    f = np.asarray(f_hz, dtype=np.float64) / 1000.0
    f2 = f * f
    return 0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003


def attenuate(f_hz, distance_km: float) -> np.ndarray:
    """
    Propagation gain relative to the 1 km reference

    gain = (1/d) * 10^(-alpha(f) d / 20)

    Raises:
        InputError: distance <= 0
    """
    if not distance_km > 0:
        raise InputError(f"Propagation distance must be positive, got {distance_km} km")
    return (1.0 / distance_km) * 10.0 ** (-thorp_absorption(f_hz) * distance_km / 20.0)


def propagate(samples: np.ndarray, distance_km: float, sample_rate: int) -> np.ndarray:
    n = samples.shape[0]
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    return np.fft.irfft(np.fft.rfft(samples) * attenuate(freqs, distance_km), n=n)


def _shaped_noise(rng: np.random.Generator, n: int, sample_rate: int, shape) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    noise = np.fft.irfft(spectrum * shape(np.fft.rfftfreq(n, d=1.0 / sample_rate)), n=n)
    rms = np.sqrt(np.mean(noise ** 2))
    return noise / rms if rms > 0 else noise


def ambient_noise(rng: np.random.Generator, level: float, n: int, sample_rate: int) -> np.ndarray:
    """Noise with PSD proportional to 1/f above 10 Hz, scaled to RMS `level`"""
    def pink(f):
        return np.where(f >= AMBIENT_CORNER_HZ, 1.0 / np.sqrt(np.maximum(f, AMBIENT_CORNER_HZ)), 0.0)
    return level * _shaped_noise(rng, n, sample_rate, pink)


def vessel_source(profile: VesselClassProfile, rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    """Source signature referenced to 1 km"""
    t = np.arange(n) / sample_rate
    nyquist = sample_rate / 2.0

    f0 = rng.uniform(*profile.f0_range_hz)
    phases = rng.uniform(0.0, 2.0 * np.pi, profile.n_harmonics)
    tonal = np.zeros(n)
    for h in range(1, profile.n_harmonics + 1):
        if h * f0 >= nyquist:
            break
        amp = profile.tonal_level * profile.harmonic_rolloff ** (h - 1)
        tonal += amp * np.sin(2.0 * np.pi * h * f0 * t + phases[h - 1])

    lo, hi = profile.broadband_band_hz
    broadband = profile.broadband_level * _shaped_noise(
        rng, n, sample_rate, lambda f: ((f >= lo) & (f <= hi)).astype(np.float64)
    )

    rate = rng.uniform(*profile.am_rate_hz)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    envelope = 1.0 + profile.am_depth * np.sin(2.0 * np.pi * rate * t + am_phase)
    return (tonal + broadband) * envelope


class GeneratedClip(NamedTuple):
    waveform: Waveform
    vessel: np.ndarray  # propagated vessel component before ambient noise; zeros for Background
    ctdsv: np.ndarray
    distance_km: Optional[float]
    label: ClassLabel
    scenario: ScenarioSpec


def sample_distance(scenario: ScenarioSpec, u: float) -> float:
    lo, hi = scenario.distance_range_km
    return lo + u * (hi - lo)


def gen_clip(
        label: ClassLabel,
        scenario: ScenarioSpec,
        rng: np.random.Generator,
        profile: Optional[VesselClassProfile] = None,
        sample_rate: int = 16000,
        n_samples: int = 16000
) -> GeneratedClip:
    """
    One synthetic clip with its CTDSV reading

    Draw order is fixed (distance, source, ambient, CTDSV) so the same generator
    state yields the same source signature in every scenario.
    """
    u = rng.uniform()
    distance = None
    if label == ClassLabel.BACKGROUND:
        signal = np.zeros(n_samples)
    else:
        if profile is None or profile.label != label:
            raise InputError(f"A {label.value} clip needs the matching vessel profile")
        distance = sample_distance(scenario, u)
        signal = propagate(vessel_source(profile, rng, n_samples, sample_rate), distance, sample_rate)

    samples = signal + ambient_noise(rng, scenario.ambient_level, n_samples, sample_rate)
    peak = np.max(np.abs(samples))
    if peak > 1.0:
        samples = samples / peak
    ctdsv = rng.normal(scenario.ctdsv_mean, scenario.ctdsv_std)
    return GeneratedClip(
        waveform=Waveform(samples=samples, sample_rate=sample_rate),
        vessel=signal,
        ctdsv=ctdsv,
        distance_km=distance,
        label=label,
        scenario=scenario,
    )


def spectral_peak_ratio(samples: np.ndarray, sample_rate: int) -> float:
    """Largest periodogram bin above 20 Hz relative to its local (+-50 bin) median"""
    power = np.abs(np.fft.rfft(samples)) ** 2
    freqs = np.fft.rfftfreq(samples.shape[0], d=1.0 / sample_rate)
    local = median_filter(power, size=2 * PEAK_MEDIAN_HALF_WIDTH + 1, mode="reflect")
    band = freqs > PEAK_SEARCH_MIN_HZ
    ratios = power[band] / np.maximum(local[band], np.finfo(np.float64).tiny)
    return float(ratios.max()) if ratios.size else 0.0


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Inverse of the 1/32768 scaling applied by load_clip; +1.0 saturates at 32767"""
    return np.clip(np.round(samples * PCM16_SCALE), -32768, 32767).astype("<i2")


def split_sizes(n: int, fractions) -> List[int]:
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return [n_train, n_val, n - n_train - n_val]


def _clip_job(config: RunConfig, out_dir: Path, seed: int, clip_index: int, label: ClassLabel,
              scenario: ScenarioSpec, index_in_cell: int, split: Split) -> Tuple[dict, float]:
    rng = np.random.default_rng([seed, clip_index])
    profile = None if label == ClassLabel.BACKGROUND else config.synth.profile(label)
    clip = gen_clip(label, scenario, rng, profile, config.frontend.sample_rate, config.frontend.n_samples)

    rel_path = Path(scenario.id.value) / label.value / f"{scenario.id.value}_{label.value}_{index_in_cell:05d}.wav"
    path = out_dir / rel_path
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        wavfile.write(path, config.frontend.sample_rate, to_pcm16(clip.waveform.samples))
    except OSError as e:
        raise InputError(f"Cannot write {path}: {str(e)}")

    row = {
        "path": rel_path.as_posix(),
        "label": label.value,
        "scenario": scenario.id.value,
        "distance_km": clip.distance_km,
        "split": split.value,
    }
    row.update(dict(zip(CTDSV_FIELDS, clip.ctdsv.tolist())))
    peak_ratio = spectral_peak_ratio(clip.waveform.samples, config.frontend.sample_rate)
    return row, peak_ratio


def gen_dataset(config: RunConfig, out_dir: Optional[Path] = None, seed: Optional[int] = None,
                n_jobs: int = 1) -> Path:
    """
    Write clips_per_cell clips for every (scenario, class) cell plus manifest.csv

    Each cell is split train/val/test by the configured fractions. Clip k draws
    from the generator seeded with (seed, k), so output does not depend on n_jobs.

    Returns:
        Path: the manifest
    """
    synth = config.synth
    out_dir = Path(out_dir if out_dir is not None else synth.out_dir)
    seed = synth.seed if seed is None else seed
    n = synth.clips_per_cell
    if n == 0:
        raise DataValidationError("empty dataset: clips_per_cell is 0")

    jobs, clip_index = [], 0
    sizes = split_sizes(n, synth.split_fractions)
    for scenario in synth.scenarios:
        if scenario.id not in config.data.scenarios:
            continue
        for label in ClassLabel:
            splits = [s for s, k in zip(Split, sizes) for _ in range(k)]
            for j, split in enumerate(splits):
                jobs.append((clip_index, label, scenario, j, split))
                clip_index += 1
    if not jobs:
        raise DataValidationError("empty dataset: no scenario selected")

    out_dir.mkdir(parents=True, exist_ok=True)
    logger.bind(clips=len(jobs), out_dir=str(out_dir), seed=seed).info("Generating synthetic corpus")
    results = Parallel(n_jobs=n_jobs, backend="threading")(
        delayed(_clip_job)(config, out_dir, seed, *job)
        for job in tqdm(jobs, desc="clips", disable=not settings.SHOW_PROGRESS)
    )
    rows = [row for row, _ in results]
    weak = sum(
        1 for row, ratio in results
        if row["label"] != ClassLabel.BACKGROUND.value and ratio < synth.harmonic_peak_ratio
    )
    if weak:
        logger.bind(clips=weak, threshold=synth.harmonic_peak_ratio).warning(
            "Vessel clips without a clear harmonic line"
        )

    manifest = out_dir / "manifest.csv"
    pd.DataFrame(rows, columns=list(MANIFEST_COLUMNS)).to_csv(manifest, index=False, float_format="%.17g")
    logger.bind(path=str(manifest), rows=len(rows)).info("Manifest written")
    return manifest
