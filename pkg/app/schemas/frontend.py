import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class GaborFilterParams(BaseModel):
    """
    Complex Gabor filters

    Attributes:
        mu: center frequencies, radians/sample, shape (K,)
        sigma: Gaussian envelope widths, samples, shape (K,)
        kernel_width: shared odd kernel length W
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mu: np.ndarray
    sigma: np.ndarray
    kernel_width: int = Field(gt=0)

    @model_validator(mode="after")
    def check_filters(self) -> "GaborFilterParams":
        if self.mu.ndim != 1 or self.mu.shape != self.sigma.shape or self.mu.size < 1:
            raise ValueError("mu and sigma must be matching non-empty vectors")
        if self.kernel_width % 2 == 0:
            raise ValueError("kernel_width must be odd")
        if np.any(self.mu <= 0) or np.any(self.mu >= np.pi):
            raise ValueError("center frequencies must lie in (0, pi)")
        if np.any(self.sigma <= 0):
            raise ValueError("envelope widths must be positive")
        return self

    @property
    def n_filters(self) -> int:
        return int(self.mu.shape[0])


class PoolingParams(BaseModel):
    """
    Per-filter Gaussian pooling

    Attributes:
        rho: pooling window standard deviations, samples, shape (K,)
        hop: frame stride, samples
        window_span: support half-width multiplier
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rho: np.ndarray
    hop: int = Field(ge=1)
    window_span: float = Field(gt=0)

    @model_validator(mode="after")
    def check_rho(self) -> "PoolingParams":
        if np.any(self.rho <= 0):
            raise ValueError("pooling widths must be positive")
        return self


class NormStats(BaseModel):
    """
    Per-channel batch normalization state

    Attributes:
        gamma, beta: per-channel affine weights
        running_mean, running_var: inference statistics
        eps: variance floor
        momentum: running-stat update rate
        num_batches_tracked: training steps that updated the running statistics
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = Field(1e-5, gt=0)
    momentum: float = Field(0.1, gt=0, le=1)
    num_batches_tracked: int = 0

    @model_validator(mode="after")
    def check_stats(self) -> "NormStats":
        shapes = {v.shape for v in (self.gamma, self.beta, self.running_mean, self.running_var)}
        if len(shapes) != 1:
            raise ValueError("normalization vectors must share one shape")
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be nonnegative")
        if not (np.all(np.isfinite(self.gamma)) and np.all(np.isfinite(self.beta))):
            raise ValueError("affine weights must be finite")
        return self

    @classmethod
    def initial(cls, n_channels: int, eps: float = 1e-5, momentum: float = 0.1,
                dtype=np.float64, **fields) -> "NormStats":
        """gamma = 1, beta = 0, zeroed running statistics"""
        return cls(
            gamma=np.ones(n_channels, dtype=dtype),
            beta=np.zeros(n_channels, dtype=dtype),
            running_mean=np.zeros(n_channels, dtype=dtype),
            running_var=np.zeros(n_channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
            **fields
        )


class CompressionParams(NormStats):
    """
    Log compression followed by Temporal BatchNorm

    Attributes:
        a: per-band log-gain exponent, y = log(1 + 10^a x)
    """
    a: np.ndarray

    @model_validator(mode="after")
    def check_gain(self) -> "CompressionParams":
        if self.a.shape != self.gamma.shape:
            raise ValueError("log-gain vector must match the normalization vectors")
        return self


class FrontendParams(BaseModel):
    """Full learnable frontend parameter set plus its sample rate"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    gabor: GaborFilterParams
    pooling: PoolingParams
    compression: CompressionParams
    sample_rate: int = Field(gt=0)

    def center_frequencies_hz(self) -> np.ndarray:
        return self.gabor.mu * self.sample_rate / (2 * np.pi)
