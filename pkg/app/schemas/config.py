import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource

from app.core.exceptions import ConfigurationError
from app.schemas.dataset import (
    ClassLabel,
    Scenario,
    ScenarioSpec,
    VesselClassProfile,
    default_profiles,
    default_scenarios,
)


class FrontendConfig(BaseModel):
    """
    Learnable Gabor frontend settings

    Attributes:
        sample_rate: clip sample rate in Hz
        clip_seconds: clip duration; clips are padded/cropped to this length
        n_filters: number of Gabor filters K
        f_min_hz, f_max_hz: mel span used to initialize center frequencies
        kernel_width: odd Gabor kernel length W in samples
        hop_ms: pooling stride
        window_ms: initial Gaussian pooling window (full width at half maximum)
        window_span: pooling support half-width in units of rho
        sigma_min: lower clamp of the Gabor envelope width, samples
        mu_min_hz: lower clamp of the center frequencies
        rho_min: lower clamp of the pooling width, samples
        rho_max_ms: upper clamp of the pooling width
        tbn_eps, tbn_momentum: Temporal BatchNorm variance floor and running-stat rate
    """
    model_config = ConfigDict(extra="forbid")

    sample_rate: int = Field(16000, gt=0)
    clip_seconds: float = Field(1.0, gt=0)
    n_filters: int = 32
    f_min_hz: float = 60.0
    f_max_hz: float = 8000.0
    kernel_width: int = 401
    hop_ms: float = Field(10.0, gt=0)
    window_ms: float = Field(25.0, gt=0)
    window_span: float = Field(4.0, gt=0)
    sigma_min: float = Field(1.5, gt=0)
    mu_min_hz: float = Field(10.0, gt=0)
    rho_min: float = Field(1.0, gt=0)
    rho_max_ms: float = Field(100.0, gt=0)
    tbn_eps: float = Field(1e-5, gt=0)
    tbn_momentum: float = Field(0.1, gt=0, le=1)

    @model_validator(mode="after")
    def check_frontend(self) -> "FrontendConfig":
        if self.n_filters < 1:
            raise ValueError("n_filters must be at least 1")
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise ValueError("kernel_width must be a positive odd number")
        if not 0 <= self.f_min_hz < self.f_max_hz <= self.sample_rate / 2:
            raise ValueError("frequency span must satisfy 0 <= f_min < f_max <= sample_rate/2")
        if self.hop > self.n_samples:
            raise ValueError("hop exceeds the clip length")
        if self.kernel_width > self.n_samples:
            raise ValueError("kernel_width exceeds the clip length")
        return self

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.clip_seconds))

    @property
    def hop(self) -> int:
        return max(1, int(round(self.hop_ms * self.sample_rate / 1000.0)))

    @property
    def n_frames(self) -> int:
        return self.n_samples // self.hop

    @property
    def sigma_max(self) -> float:
        return self.kernel_width / 2.0

    @property
    def mu_bounds(self) -> tuple:
        return 2 * math.pi * self.mu_min_hz / self.sample_rate, math.pi * 0.999

    @property
    def rho_bounds(self) -> tuple:
        return self.rho_min, self.rho_max_ms * self.sample_rate / 1000.0


class EncoderConfig(BaseModel):
    """Convolutional encoder and pooling head"""
    model_config = ConfigDict(extra="forbid")

    channels: List[int] = Field(default_factory=lambda: [16, 32, 64], min_length=1)
    pooling: Literal["attention", "max"] = "attention"
    attention_dim: int = Field(64, ge=1)
    bn_eps: float = Field(1e-5, gt=0)
    bn_momentum: float = Field(0.1, gt=0, le=1)

    @field_validator("channels")
    @classmethod
    def positive_channels(cls, channels: List[int]) -> List[int]:
        if any(c < 1 for c in channels):
            raise ValueError("channel widths must be positive")
        return channels


class HeadConfig(BaseModel):
    """CTDSV branch and classification head"""
    model_config = ConfigDict(extra="forbid")

    use_ctdsv: bool = True
    meta_hidden: int = Field(16, ge=1)


class TrainingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(40, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    seed: int = 0
    precision: Literal["float32", "float64"] = "float32"
    debug_checks: bool = False


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    manifest: Optional[Path] = None
    scenarios: List[Scenario] = Field(default_factory=lambda: list(Scenario), min_length=1)


class SynthConfig(BaseModel):
    """Synthetic corpus generator"""
    model_config = ConfigDict(extra="forbid")

    clips_per_cell: int = Field(200, ge=0)
    seed: int = 0
    out_dir: Path = Path("data/synthetic")
    harmonic_peak_ratio: float = Field(100.0, gt=1)
    split_fractions: List[float] = Field(default_factory=lambda: [0.70, 0.15, 0.15],
                                         min_length=3, max_length=3)
    scenarios: List[ScenarioSpec] = Field(default_factory=default_scenarios)
    profiles: List[VesselClassProfile] = Field(default_factory=default_profiles)

    @model_validator(mode="after")
    def check_synth(self) -> "SynthConfig":
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ValueError("split_fractions must be nonnegative and sum to 1")
        if sorted(p.label.value for p in self.profiles) != sorted(
                c.value for c in ClassLabel if c != ClassLabel.BACKGROUND):
            raise ValueError("exactly one profile per vessel class is required")
        if len({s.id for s in self.scenarios}) != len(self.scenarios):
            raise ValueError("duplicate scenario specs")
        return self

    def scenario(self, scenario: Scenario) -> ScenarioSpec:
        return next(s for s in self.scenarios if s.id == scenario)

    def profile(self, label: ClassLabel) -> VesselClassProfile:
        return next(p for p in self.profiles if p.label == label)


class AnalysisConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    threshold: float = Field(0.2, gt=0)
    stage: Literal["normalized", "pooled"] = "normalized"
    positive_class: ClassLabel = ClassLabel.TUG
    reference_class: ClassLabel = ClassLabel.BACKGROUND
    split: Literal["train", "val", "test"] = "test"


class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    scenario_subsets: List[List[Scenario]] = Field(
        default_factory=lambda: [list(Scenario)], min_length=1
    )


class RuntimeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    threads: int = Field(1, ge=1)


class RunConfig(BaseSettings):
    """
    Every tunable of a run

    Sections map one-to-one to TOML tables in the config file. The validated
    instance is written next to every artifact as run_config.json.
    """
    model_config = SettingsConfigDict(
        env_prefix="VESSEL_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    frontend: FrontendConfig = Field(default_factory=FrontendConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    head: HeadConfig = Field(default_factory=HeadConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    output_dir: Path = Path("runs/default")

    def architecture(self) -> Dict[str, Any]:
        """Fields that fix parameter shapes; checkpoints must match them exactly"""
        return {
            "frontend": self.frontend.model_dump(mode="json"),
            "encoder": self.encoder.model_dump(mode="json"),
            "head": self.head.model_dump(mode="json"),
        }


def _merge(base: Dict[str, Any], updates: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from an optional TOML file plus overrides

    Precedence: overrides (command-line flags) > file > environment > defaults.

    Raises:
        ConfigurationError: missing file, unreadable TOML or invalid values
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            values = TomlConfigSettingsSource(RunConfig, toml_file=path)()
        except Exception as e:
            raise ConfigurationError(f"Unreadable config file {path}: {str(e)}")
    values = _merge(values, overrides or {})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        reasons = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise ConfigurationError("Invalid configuration: " + "; ".join(reasons))
