from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Stage(str, Enum):
    """Processing stage of a time-frequency map"""
    ENERGY = "energy"
    POOLED = "pooled"
    COMPRESSED = "compressed"
    NORMALIZED = "normalized"


class Waveform(BaseModel):
    """
    Mono audio clip

    Attributes:
        samples: amplitudes in [-1, 1]
        sample_rate: Hz
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: np.ndarray
    sample_rate: int = Field(gt=0)

    @field_validator("samples")
    @classmethod
    def check_samples(cls, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples)
        if samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("waveform samples must lie in [-1, 1]")
        return samples

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])


class TimeFreqMap(BaseModel):
    """
    C x T filterbank output at a given stage

    Energy and pooled maps are nonnegative; compressed and normalized maps are real.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    stage: Stage

    @model_validator(mode="after")
    def check_values(self) -> "TimeFreqMap":
        if self.values.ndim != 2:
            raise ValueError("time-frequency map must be C x T")
        if self.stage in (Stage.ENERGY, Stage.POOLED) and np.any(self.values < 0):
            raise ValueError(f"{self.stage.value} map must be nonnegative")
        return self

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[1])


class FeatureMap(BaseModel):
    """Encoder output, channels x freq-frames x time-frames"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray

    @field_validator("values")
    @classmethod
    def check_values(cls, values: np.ndarray) -> np.ndarray:
        if values.ndim != 3:
            raise ValueError("feature map must be C x F x T")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature map contains non-finite values")
        return values
