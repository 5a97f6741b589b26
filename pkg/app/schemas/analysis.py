from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.schemas.dataset import ClassLabel


class ActivationTensor(BaseModel):
    """
    Frontend output of one clip, channels in ascending center-frequency order

    Attributes:
        values: C x T activations
        clip_id: manifest path or caller-chosen id
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    clip_id: str
    label: ClassLabel
    scenario: Optional[str] = None

    @model_validator(mode="after")
    def check_values(self) -> "ActivationTensor":
        if self.values.ndim != 2:
            raise ValueError("activation tensor must be C x T")
        return self


class DeltaCurve(BaseModel):
    """Per-filter class-mean difference, ordered by ascending center frequency"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    center_freq_hz: Optional[np.ndarray] = None
    scenario: Optional[str] = None

    @model_validator(mode="after")
    def check_values(self) -> "DeltaCurve":
        if self.values.ndim != 1 or not np.all(np.isfinite(self.values)):
            raise ValueError("delta curve must be a finite vector")
        if self.center_freq_hz is not None and self.center_freq_hz.shape != self.values.shape:
            raise ValueError("center frequencies must match the curve length")
        return self


class DeltaSpectrogram(BaseModel):
    """C x T difference of time-resolved class means"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    center_freq_hz: Optional[np.ndarray] = None
    scenario: Optional[str] = None

    @model_validator(mode="after")
    def check_values(self) -> "DeltaSpectrogram":
        if self.values.ndim != 2 or not np.all(np.isfinite(self.values)):
            raise ValueError("delta spectrogram must be a finite C x T matrix")
        return self
