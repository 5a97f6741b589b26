from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


CTDSV_FIELDS: Tuple[str, ...] = (
    "conductivity",
    "temperature",
    "depth",
    "salinity",
    "sound_velocity",
)


class ClassLabel(str, Enum):
    """
    Clip classes, encoded 0..4 in declaration order

    Attributes:
        TUG, TANKER, CARGO, PASSENGERSHIP: vessel classes
        BACKGROUND: ambient noise with no vessel inside the exclusion radius
    """
    TUG = "Tug"
    TANKER = "Tanker"
    CARGO = "Cargo"
    PASSENGERSHIP = "Passengership"
    BACKGROUND = "Background"

    @property
    def index(self) -> int:
        return list(ClassLabel).index(self)

    @classmethod
    def from_index(cls, index: int) -> "ClassLabel":
        return list(cls)[int(index)]


N_CLASSES = len(ClassLabel)
VESSEL_CLASSES = (ClassLabel.TUG, ClassLabel.TANKER, ClassLabel.CARGO, ClassLabel.PASSENGERSHIP)


class Scenario(str, Enum):
    """Inclusion/exclusion radius scenario of a recording"""
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class ScenarioSpec(BaseModel):
    """
    Geometry, noise floor and CTDSV prior of one scenario

    Attributes:
        id: Scenario identifier
        inclusion_radius_km: vessels are sampled inside this radius
        exclusion_radius_km: no other vessel within this radius
        min_distance_km: lower bound of the sampled source-sensor distance
        ambient_level: RMS of the colored ambient noise floor
        ctdsv_mean: per-field prior mean in raw units (S/m, degC, m, PSU, m/s)
        ctdsv_std: per-field prior spread in raw units
    """
    model_config = ConfigDict(extra="forbid")

    id: Scenario
    inclusion_radius_km: float = Field(gt=0)
    exclusion_radius_km: float = Field(gt=0)
    min_distance_km: float = Field(0.2, gt=0)
    ambient_level: float = Field(0.01, gt=0)
    ctdsv_mean: List[float] = Field(min_length=5, max_length=5)
    ctdsv_std: List[float] = Field(min_length=5, max_length=5)

    @model_validator(mode="after")
    def check_radii(self) -> "ScenarioSpec":
        if self.inclusion_radius_km >= self.exclusion_radius_km:
            raise ValueError(
                f"{self.id.value}: inclusion radius must be below the exclusion radius"
            )
        if self.min_distance_km >= self.inclusion_radius_km:
            raise ValueError(f"{self.id.value}: min distance must be inside the inclusion radius")
        if any(s < 0 for s in self.ctdsv_std):
            raise ValueError(f"{self.id.value}: CTDSV spreads must be nonnegative")
        return self

    @property
    def distance_range_km(self) -> Tuple[float, float]:
        return self.min_distance_km, self.inclusion_radius_km


def default_scenarios() -> List[ScenarioSpec]:
    std = [0.02, 0.5, 1.0, 0.2, 1.0]
    return [
        ScenarioSpec(id=Scenario.S1, inclusion_radius_km=2.0, exclusion_radius_km=4.0,
                     ctdsv_mean=[3.00, 9.0, 20.0, 29.0, 1482.0], ctdsv_std=std),
        ScenarioSpec(id=Scenario.S2, inclusion_radius_km=3.0, exclusion_radius_km=5.0,
                     ctdsv_mean=[3.05, 10.0, 22.0, 29.5, 1485.0], ctdsv_std=std),
        ScenarioSpec(id=Scenario.S3, inclusion_radius_km=4.0, exclusion_radius_km=6.0,
                     ctdsv_mean=[3.10, 11.0, 24.0, 30.0, 1488.0], ctdsv_std=std),
    ]


class VesselClassProfile(BaseModel):
    """
    Synthetic acoustic signature of a vessel class, levels referenced to 1 km

    Attributes:
        label: Vessel class
        f0_range_hz: range of the sampled shaft/blade fundamental
        n_harmonics: number of harmonics in the tonal stack
        harmonic_rolloff: amplitude ratio between consecutive harmonics
        tonal_level: amplitude of the fundamental
        broadband_band_hz: pass band of the broadband machinery noise
        broadband_level: RMS of the broadband noise
        am_rate_hz: range of the sampled amplitude-modulation rate
        am_depth: modulation depth in [0, 1)
    """
    model_config = ConfigDict(extra="forbid")

    label: ClassLabel
    f0_range_hz: Tuple[float, float]
    n_harmonics: int = Field(ge=1)
    harmonic_rolloff: float = Field(gt=0, le=1)
    tonal_level: float = Field(0.02, gt=0)
    broadband_band_hz: Tuple[float, float]
    broadband_level: float = Field(gt=0)
    am_rate_hz: Tuple[float, float]
    am_depth: float = Field(0.3, ge=0, lt=1)

    @field_validator("label")
    @classmethod
    def vessel_only(cls, label: ClassLabel) -> ClassLabel:
        if label == ClassLabel.BACKGROUND:
            raise ValueError("Background has no vessel profile")
        return label

    @model_validator(mode="after")
    def check_ranges(self) -> "VesselClassProfile":
        for name in ("f0_range_hz", "broadband_band_hz", "am_rate_hz"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{self.label.value}: {name} must satisfy 0 < low <= high")
        return self


def default_profiles() -> List[VesselClassProfile]:
    return [
        VesselClassProfile(label=ClassLabel.TUG, f0_range_hz=(40, 80), n_harmonics=12,
                           harmonic_rolloff=0.85, broadband_band_hz=(100, 4000),
                           broadband_level=0.015, am_rate_hz=(1.0, 3.0)),
        VesselClassProfile(label=ClassLabel.CARGO, f0_range_hz=(8, 20), n_harmonics=20,
                           harmonic_rolloff=0.9, broadband_band_hz=(20, 1000),
                           broadband_level=0.02, am_rate_hz=(0.5, 1.5)),
        VesselClassProfile(label=ClassLabel.TANKER, f0_range_hz=(6, 15), n_harmonics=25,
                           harmonic_rolloff=0.92, broadband_band_hz=(10, 500),
                           broadband_level=0.035, am_rate_hz=(0.3, 1.0)),
        VesselClassProfile(label=ClassLabel.PASSENGERSHIP, f0_range_hz=(100, 200), n_harmonics=8,
                           harmonic_rolloff=0.8, broadband_band_hz=(500, 5000),
                           broadband_level=0.03, am_rate_hz=(2.0, 5.0)),
    ]


class ManifestRow(BaseModel):
    """One clip of a manifest-described corpus"""
    model_config = ConfigDict(extra="forbid")

    path: str = Field(min_length=1)
    label: ClassLabel
    scenario: Scenario
    distance_km: Optional[float] = None
    conductivity: float
    temperature: float
    depth: float
    salinity: float
    sound_velocity: float
    split: Split

    @field_validator("conductivity", "temperature", "depth", "salinity", "sound_velocity")
    @classmethod
    def finite(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("must be finite")
        return value

    @property
    def ctdsv(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in CTDSV_FIELDS], dtype=np.float64)


class CtdsvStats(BaseModel):
    """
    Z-score statistics of the CTDSV fields, computed on the training split only

    Attributes:
        mean: per-field mean
        std: per-field standard deviation (0 for constant fields)
        warnings: fields that were constant and pass through with a unit divisor
    """
    mean: List[float] = Field(min_length=5, max_length=5)
    std: List[float] = Field(min_length=5, max_length=5)
    warnings: List[str] = Field(default_factory=list)

    def apply(self, values: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        """Normalize one CTDSV quintuple or a (n, 5) matrix"""
        values = np.asarray(values, dtype=np.float64)
        std = np.asarray(self.std)
        divisor = np.where(std > 0, std, 1.0)
        return (values - np.asarray(self.mean)) / divisor
