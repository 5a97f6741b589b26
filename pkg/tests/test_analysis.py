import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import InputError
from app.models.classifier import VesselClassifier
from app.models.frontend import GaborFrontend, init_filterbank
from app.schemas.analysis import ActivationTensor, DeltaCurve
from app.schemas.config import AnalysisConfig
from app.schemas.dataset import ClassLabel
from app.schemas.signal import Stage, Waveform
from app.services.analysis_service import (
    AnalysisService,
    active_filter_count,
    activation_tensor,
    class_mean_activation,
    delta_curve,
    delta_spectrogram,
    export_analysis,
    filterbank_table,
    frequency_order,
)
from app.services.dataio import load_manifest, load_split

SR = 16000


def tensor(values, label, scenario="S1"):
    return ActivationTensor(values=np.asarray(values, dtype=np.float64), clip_id="x", label=label, scenario=scenario)


@pytest.fixture
def shuffled_frontend():
    """Eight filters whose training index order is not frequency order"""
    params = init_filterbank(8, SR, 60.0, 8000.0, hop=80)
    perm = np.array([3, 0, 7, 1, 6, 2, 5, 4])
    params.gabor.mu[:] = params.gabor.mu[perm]
    params.gabor.sigma[:] = params.gabor.sigma[perm]
    return GaborFrontend(params)


class TestActivations:
    def test_rows_follow_ascending_frequency(self, shuffled_frontend, rng):
        clips = [Waveform(samples=rng.uniform(-0.3, 0.3, 4000), sample_rate=SR) for _ in range(3)]
        tensors = activation_tensor(shuffled_frontend, clips, [ClassLabel.TUG] * 3, stage=Stage.POOLED, batch_size=2)
        raw, _ = shuffled_frontend.forward(np.stack([c.samples for c in clips]), mode="eval", stage=Stage.POOLED)
        order = frequency_order(shuffled_frontend)
        assert np.all(np.diff(shuffled_frontend.params.gabor.mu[order]) > 0)
        for t, r in zip(tensors, raw):
            np.testing.assert_array_equal(t.values, r[order])
        assert [t.clip_id for t in tensors] == ["0", "1", "2"]

    def test_sample_rate_mismatch(self, shuffled_frontend):
        with pytest.raises(InputError):
            activation_tensor(shuffled_frontend, [Waveform(samples=np.zeros(4000), sample_rate=8000)],
                              [ClassLabel.TUG], stage=Stage.POOLED)

    def test_planted_tone_tops_the_delta_curve(self, shuffled_frontend, rng):
        """Tug clips carry an extra tone at one filter's center; Background clips do not"""
        target = 5
        f = shuffled_frontend.params.center_frequencies_hz()[target]
        t = np.arange(4000) / SR
        tug = [Waveform(samples=0.05 * rng.standard_normal(4000) + 0.3 * np.sin(2 * np.pi * f * t), sample_rate=SR)
               for _ in range(4)]
        bg = [Waveform(samples=0.05 * rng.standard_normal(4000), sample_rate=SR) for _ in range(4)]
        tensors = activation_tensor(shuffled_frontend, tug + bg, [ClassLabel.TUG] * 4 + [ClassLabel.BACKGROUND] * 4,
                                    stage=Stage.POOLED)
        curve = delta_curve(class_mean_activation(tensors, ClassLabel.TUG),
                            class_mean_activation(tensors, ClassLabel.BACKGROUND))
        order = frequency_order(shuffled_frontend)
        assert order[int(np.argmax(curve.values))] == target


class TestDeltas:
    def test_identical_classes_give_zero_curve(self):
        a = [tensor([[1.0, 2.0], [3.0, 4.0]], ClassLabel.TUG)]
        b = [tensor([[1.0, 2.0], [3.0, 4.0]], ClassLabel.BACKGROUND)]
        curve = delta_curve(class_mean_activation(a, ClassLabel.TUG), class_mean_activation(b, ClassLabel.BACKGROUND))
        np.testing.assert_array_equal(curve.values, 0.0)
        assert active_filter_count(curve, 0.2) == 0

    def test_time_average_and_class_swap(self, rng):
        tug = [tensor(rng.normal(size=(6, 9)), ClassLabel.TUG) for _ in range(4)]
        bg = [tensor(rng.normal(size=(6, 9)), ClassLabel.BACKGROUND) for _ in range(3)]
        a_tug = class_mean_activation(tug + bg, ClassLabel.TUG)
        a_bg = class_mean_activation(tug + bg, ClassLabel.BACKGROUND)
        curve = delta_curve(a_tug, a_bg)
        spec = delta_spectrogram(tug, bg)
        np.testing.assert_allclose(spec.values.mean(axis=1), curve.values, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(delta_curve(a_bg, a_tug).values, -curve.values)
        np.testing.assert_array_equal(delta_spectrogram(bg, tug).values, -spec.values)

    def test_spectrogram_keeps_time(self):
        pos = [tensor([[1.0, 3.0]], ClassLabel.TUG), tensor([[3.0, 5.0]], ClassLabel.TUG)]
        ref = [tensor([[0.0, 1.0]], ClassLabel.BACKGROUND)]
        spec = delta_spectrogram(pos, ref)
        np.testing.assert_array_equal(spec.values, [[2.0, 3.0]])

    def test_mismatched_shapes(self):
        with pytest.raises(InputError):
            delta_spectrogram([tensor([[1.0, 2.0]], ClassLabel.TUG)], [tensor([[1.0]], ClassLabel.BACKGROUND)])
        with pytest.raises(InputError):
            delta_curve(np.zeros(3), np.zeros(4))
        with pytest.raises(InputError):
            class_mean_activation([tensor([[1.0]], ClassLabel.TUG)], ClassLabel.CARGO)

    def test_active_filter_count(self):
        curve = DeltaCurve(values=np.array([1.0, -0.5, 0.1, 0.25]))
        assert active_filter_count(curve, 0.2) == 3
        assert active_filter_count(curve, 1.0) == 1
        with pytest.raises(InputError):
            active_filter_count(curve, 0.0)


class TestExport:
    def test_files_and_columns(self, tmp_path, rng):
        freqs = np.array([100.0, 900.0, 2500.0])
        curve = DeltaCurve(values=rng.normal(size=3), center_freq_hz=freqs, scenario="S2")
        spec = delta_spectrogram([tensor(rng.normal(size=(3, 4)), ClassLabel.TUG, "S2")],
                                 [tensor(rng.normal(size=(3, 4)), ClassLabel.BACKGROUND, "S2")], freqs, "S2")
        paths = export_analysis([curve], [spec], tmp_path, filter_index=np.array([1, 0, 2]))
        assert [p.name for p in paths] == ["delta_curve_S2.csv", "delta_spectrogram_S2.csv"]
        curve_csv = pd.read_csv(paths[0])
        assert list(curve_csv.columns) == ["filter_index", "center_freq_hz", "delta"]
        assert curve_csv["filter_index"].tolist() == [1, 0, 2]
        np.testing.assert_allclose(curve_csv["delta"], curve.values, rtol=0, atol=1e-9)
        np.testing.assert_allclose(curve_csv["center_freq_hz"], freqs, rtol=0, atol=1e-9)
        spec_csv = pd.read_csv(paths[1])
        assert list(spec_csv.columns) == ["filter_index", "center_freq_hz", "frame_0", "frame_1", "frame_2", "frame_3"]
        np.testing.assert_allclose(spec_csv[[f"frame_{j}" for j in range(4)]].to_numpy(), spec.values, rtol=0, atol=1e-9)

    def test_filterbank_table(self, shuffled_frontend):
        table = filterbank_table(shuffled_frontend)
        assert list(table.columns) == ["filter_index", "center_freq_hz", "bandwidth_hz", "pooling_width_ms", "log_gain"]
        assert table["center_freq_hz"].is_monotonic_increasing
        assert sorted(table["filter_index"]) == list(range(8))
        np.testing.assert_allclose(table["pooling_width_ms"], 25.0)


class TestAnalysisService:
    def test_run_writes_every_scenario(self, corpus, run_config, tmp_path):
        dataset = load_manifest(corpus).split("test")
        split = load_split(dataset, 16000, 1000)
        model = VesselClassifier.initialize(run_config, seed=0)
        model.frontend.forward(split.waveforms, mode="train")
        counts = AnalysisService(AnalysisConfig()).run(model, split, tmp_path, clip_ids=list(dataset.frame["path"]))
        assert set(counts) == {"S1", "S2", "S3"}
        assert all(1 <= n <= run_config.frontend.n_filters for n in counts.values())
        for scenario in counts:
            assert (tmp_path / f"delta_curve_{scenario}.csv").is_file()
            assert (tmp_path / f"delta_spectrogram_{scenario}.csv").is_file()
        assert len(pd.read_csv(tmp_path / "filterbank.csv")) == run_config.frontend.n_filters
        assert pd.read_csv(tmp_path / "active_filters.csv")["scenario"].tolist() == ["S1", "S2", "S3"]

    def test_scenario_without_reference_class_is_skipped(self, corpus, run_config, tmp_path):
        split = load_split(load_manifest(corpus).split("test"), 16000, 1000)
        drop = (split.scenarios == "S2") & (split.labels == ClassLabel.BACKGROUND.index)
        partial = split.subset(np.flatnonzero(~drop))
        model = VesselClassifier.initialize(run_config, seed=0)
        model.frontend.forward(partial.waveforms, mode="train")
        counts = AnalysisService(AnalysisConfig()).run(model, partial, tmp_path)
        assert set(counts) == {"S1", "S3"}
        assert not (tmp_path / "delta_curve_S2.csv").exists()
        assert pd.read_csv(tmp_path / "active_filters.csv")["scenario"].tolist() == ["S1", "S3"]

    def test_no_scenario_with_both_classes(self, corpus, run_config, tmp_path):
        split = load_split(load_manifest(corpus).split("test"), 16000, 1000)
        tug_only = split.subset(np.flatnonzero(split.labels == ClassLabel.TUG.index))
        model = VesselClassifier.initialize(run_config, seed=0)
        model.frontend.forward(split.waveforms, mode="train")
        with pytest.raises(InputError, match="No scenario"):
            AnalysisService(AnalysisConfig()).run(model, tug_only, tmp_path)
