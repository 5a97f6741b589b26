from typing import Dict, NamedTuple, Tuple

import numpy as np

from app.core.exceptions import InternalError, UninitializedStatisticsError
from app.schemas.frontend import NormStats


class BatchNormCache(NamedTuple):
    x_hat: np.ndarray
    inv_std: np.ndarray
    axes: Tuple[int, ...]
    train: bool


class BatchNorm:
    """
    Per-channel batch normalization over every axis except axis 1

    Used both as Temporal BatchNorm on (batch, filter, time) maps and as the
    block normalization of the encoder on (batch, channel, freq, time) maps.
    The state arrays are updated in place so optimizers and checkpoints can
    hold references to them.
    """

    def __init__(self, stats: NormStats, name: str = "bn"):
        self.stats = stats
        self.name = name

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"gamma": self.stats.gamma, "beta": self.stats.beta}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"running_mean": self.stats.running_mean, "running_var": self.stats.running_var}

    @staticmethod
    def _shape(x: np.ndarray) -> Tuple[int, ...]:
        return (1, x.shape[1]) + (1,) * (x.ndim - 2)

    def forward(self, x: np.ndarray, train: bool) -> Tuple[np.ndarray, BatchNormCache]:
        stats = self.stats
        if x.ndim < 2 or x.shape[1] != stats.gamma.shape[0]:
            raise InternalError(f"{self.name}: expected {stats.gamma.shape[0]} channels on axis 1, got shape {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        shape = self._shape(x)

        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // x.shape[1]
            unbiased = var * count / (count - 1) if count > 1 else var
            m = stats.momentum
            stats.running_mean *= (1.0 - m)
            stats.running_mean += m * mean
            stats.running_var *= (1.0 - m)
            stats.running_var += m * unbiased
            stats.num_batches_tracked += 1
        else:
            if stats.num_batches_tracked == 0:
                raise UninitializedStatisticsError(
                    f"{self.name}: running statistics used before any training step"
                )
            mean = stats.running_mean
            var = stats.running_var

        inv_std = 1.0 / np.sqrt(var + stats.eps)
        x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        y = stats.gamma.reshape(shape) * x_hat + stats.beta.reshape(shape)
        return y, BatchNormCache(x_hat=x_hat, inv_std=inv_std, axes=axes, train=train)

    def backward(self, grad: np.ndarray, cache: BatchNormCache) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        if grad.shape != cache.x_hat.shape:
            raise InternalError(f"{self.name}: gradient shape {grad.shape} does not match cache {cache.x_hat.shape}")
        shape = self._shape(grad)
        axes = cache.axes
        grads = {
            "gamma": np.sum(grad * cache.x_hat, axis=axes),
            "beta": np.sum(grad, axis=axes),
        }
        d_hat = grad * self.stats.gamma.reshape(shape)
        inv_std = cache.inv_std.reshape(shape)
        if not cache.train:
            return d_hat * inv_std, grads

        count = grad.size // grad.shape[1]
        sum_d = np.sum(d_hat, axis=axes, keepdims=True)
        sum_dx = np.sum(d_hat * cache.x_hat, axis=axes, keepdims=True)
        dx = inv_std / count * (count * d_hat - sum_d - cache.x_hat * sum_dx)
        return dx, grads
