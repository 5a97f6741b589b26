import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.exceptions import InputError, InternalError, NumericalError
from app.models.normalization import BatchNorm, BatchNormCache
from app.schemas.config import EncoderConfig
from app.schemas.frontend import NormStats
from app.schemas.signal import FeatureMap, Stage, TimeFreqMap

KERNEL = 3
STRIDE = 2


def same_padding(size: int) -> Tuple[int, int, int]:
    """Output size and (before, after) padding of a 3x3 stride-2 convolution with ceil rule"""
    out = -(-size // STRIDE)
    total = max((out - 1) * STRIDE + KERNEL - size, 0)
    return out, total // 2, total - total // 2


def output_shape(height: int, width: int, n_blocks: int) -> Tuple[int, int]:
    for _ in range(n_blocks):
        height, width = same_padding(height)[0], same_padding(width)[0]
    return height, width


class ConvCache(NamedTuple):
    patches: np.ndarray
    input_shape: Tuple[int, ...]
    padding: Tuple[int, int, int, int]
    bn: BatchNormCache
    active: np.ndarray


class ConvBlock:
    """3x3 stride-2 convolution -> BatchNorm -> ReLU"""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, norm: NormStats, name: str):
        self.weight = weight
        self.bias = bias
        self.norm = BatchNorm(norm, name=f"{name}.bn")
        self.name = name

    @classmethod
    def initialize(cls, in_channels: int, out_channels: int, rng: np.random.Generator,
                   config: EncoderConfig, name: str, dtype=np.float64) -> "ConvBlock":
        scale = math.sqrt(2.0 / (in_channels * KERNEL * KERNEL))
        weight = (rng.standard_normal((out_channels, in_channels, KERNEL, KERNEL)) * scale).astype(dtype)
        return cls(
            weight=weight,
            bias=np.zeros(out_channels, dtype=dtype),
            norm=NormStats.initial(out_channels, eps=config.bn_eps, momentum=config.bn_momentum, dtype=dtype),
            name=name,
        )

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias, **self.norm.parameters()}

    def buffers(self) -> Dict[str, np.ndarray]:
        return self.norm.buffers()

    def forward(self, x: np.ndarray, train: bool) -> Tuple[np.ndarray, ConvCache]:
        if x.ndim != 4 or x.shape[1] != self.weight.shape[1]:
            raise InputError(f"{self.name}: expected {self.weight.shape[1]} input channels, got shape {x.shape}")
        h_out, top, bottom = same_padding(x.shape[2])
        w_out, left, right = same_padding(x.shape[3])
        padded = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
        patches = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))[:, :, ::STRIDE, ::STRIDE][:, :, :h_out, :w_out]
        conv = np.einsum("bchwij,ocij->bohw", patches, self.weight) + self.bias[None, :, None, None]
        normed, bn_cache = self.norm.forward(conv, train=train)
        active = normed > 0
        return normed * active, ConvCache(patches, x.shape, (top, bottom, left, right), bn_cache, active)

    def backward(self, grad: np.ndarray, cache: ConvCache) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        grad = grad * cache.active
        grad, grads = self.norm.backward(grad, cache.bn)
        grads["weight"] = np.einsum("bohw,bchwij->ocij", grad, cache.patches)
        grads["bias"] = grad.sum(axis=(0, 2, 3))

        b, c, h, w = cache.input_shape
        top, bottom, left, right = cache.padding
        h_out, w_out = grad.shape[2], grad.shape[3]
        d_padded = np.zeros((b, c, h + top + bottom, w + left + right), dtype=grad.dtype)
        for i in range(KERNEL):
            for j in range(KERNEL):
                d_padded[:, :, i:i + STRIDE * (h_out - 1) + 1:STRIDE, j:j + STRIDE * (w_out - 1) + 1:STRIDE] += \
                    np.einsum("bohw,oc->bchw", grad, self.weight[:, :, i, j])
        return d_padded[:, :, top:top + h, left:left + w], grads


class EncoderCache(NamedTuple):
    blocks: List[ConvCache]


class ConvEncoder:
    """
    Stack of stride-2 conv blocks on a 1-channel (K x T) image

    Input (B, K, T) maps are lifted to (B, 1, K, T); output is (B, C', F', T').
    """

    def __init__(self, blocks: Sequence[ConvBlock], input_shape: Optional[Tuple[int, int]] = None):
        self.blocks = list(blocks)
        self.input_shape = input_shape

    @classmethod
    def initialize(cls, config: EncoderConfig, rng: np.random.Generator,
                   input_shape: Optional[Tuple[int, int]] = None, dtype=np.float64) -> "ConvEncoder":
        blocks, in_channels = [], 1
        for i, out_channels in enumerate(config.channels):
            blocks.append(ConvBlock.initialize(in_channels, out_channels, rng, config, f"block{i}", dtype))
            in_channels = out_channels
        return cls(blocks, input_shape)

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].weight.shape[0]

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"{blk.name}.{k}": v for blk in self.blocks for k, v in blk.parameters().items()}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {f"{blk.name}.{k}": v for blk in self.blocks for k, v in blk.buffers().items()}

    def forward(self, z: np.ndarray, train: bool) -> Tuple[np.ndarray, EncoderCache]:
        if z.ndim != 3:
            raise InputError(f"Encoder expects (batch, filters, frames) maps, got shape {z.shape}")
        if self.input_shape is not None and tuple(z.shape[1:]) != tuple(self.input_shape):
            raise InputError(f"Encoder configured for {self.input_shape} maps, got {tuple(z.shape[1:])}")
        x = z[:, None, :, :]
        caches = []
        for block in self.blocks:
            x, cache = block.forward(x, train)
            caches.append(cache)
        return x, EncoderCache(caches)

    def backward(self, grad: np.ndarray, cache: EncoderCache) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        grads = {}
        for block, block_cache in zip(reversed(self.blocks), reversed(cache.blocks)):
            grad, block_grads = block.backward(grad, block_cache)
            grads.update({f"{block.name}.{k}": v for k, v in block_grads.items()})
        return grad[:, 0], grads


class AttentionCache(NamedTuple):
    positions: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    shape: Tuple[int, ...]


class AttentionPool:
    """
    Single-query scaled dot-product attention over all F' x T' positions

    score_p = <query, W_k f_p + b_k> / sqrt(d); weights = softmax(score);
    embedding = sum_p weights_p (W_v f_p + b_v).
    """

    def __init__(self, query: np.ndarray, key_weight: np.ndarray, key_bias: np.ndarray,
                 value_weight: np.ndarray, value_bias: np.ndarray):
        self.query = query
        self.key_weight = key_weight
        self.key_bias = key_bias
        self.value_weight = value_weight
        self.value_bias = value_bias

    @classmethod
    def initialize(cls, channels: int, dim: int, rng: np.random.Generator, dtype=np.float64) -> "AttentionPool":
        return cls(
            query=(rng.standard_normal(dim) / math.sqrt(dim)).astype(dtype),
            key_weight=(rng.standard_normal((channels, dim)) / math.sqrt(channels)).astype(dtype),
            key_bias=np.zeros(dim, dtype=dtype),
            value_weight=(rng.standard_normal((channels, channels)) / math.sqrt(channels)).astype(dtype),
            value_bias=np.zeros(channels, dtype=dtype),
        )

    @property
    def temperature(self) -> float:
        return 1.0 / math.sqrt(self.query.shape[0])

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            "query": self.query,
            "key_weight": self.key_weight,
            "key_bias": self.key_bias,
            "value_weight": self.value_weight,
            "value_bias": self.value_bias,
        }

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, f: np.ndarray) -> Tuple[np.ndarray, AttentionCache]:
        b, c = f.shape[:2]
        if c != self.key_weight.shape[0]:
            raise InputError(f"Attention pool expects {self.key_weight.shape[0]} channels, got {c}")
        positions = f.reshape(b, c, -1).transpose(0, 2, 1)
        keys = positions @ self.key_weight + self.key_bias
        scores = keys @ self.query * self.temperature
        if not np.all(np.isfinite(scores)):
            clip, flat = np.argwhere(~np.isfinite(scores))[0]
            row, col = np.unravel_index(flat, f.shape[2:])
            raise NumericalError(f"Non-finite attention score in clip {clip} at position ({row}, {col})")
        shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights = shifted / shifted.sum(axis=1, keepdims=True)
        values = positions @ self.value_weight + self.value_bias
        embedding = np.einsum("bp,bpc->bc", weights, values)
        return embedding, AttentionCache(positions, keys, values, weights, f.shape)

    def backward(self, grad: np.ndarray, cache: AttentionCache) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        d_weights = np.einsum("bc,bpc->bp", grad, cache.values)
        d_values = cache.weights[:, :, None] * grad[:, None, :]
        d_scores = cache.weights * (d_weights - np.sum(cache.weights * d_weights, axis=1, keepdims=True))
        d_keys = d_scores[:, :, None] * self.query[None, None, :] * self.temperature

        grads = {
            "query": np.einsum("bp,bpd->d", d_scores, cache.keys) * self.temperature,
            "key_weight": np.einsum("bpc,bpd->cd", cache.positions, d_keys),
            "key_bias": d_keys.sum(axis=(0, 1)),
            "value_weight": np.einsum("bpc,bpe->ce", cache.positions, d_values),
            "value_bias": d_values.sum(axis=(0, 1)),
        }
        d_positions = d_values @ self.value_weight.T + d_keys @ self.key_weight.T
        return d_positions.transpose(0, 2, 1).reshape(cache.shape), grads


class MaxPoolCache(NamedTuple):
    argmax: np.ndarray
    shape: Tuple[int, ...]


class GlobalMaxPool:
    """Per-channel maximum over all positions; ties route to the first row-major position"""

    def parameters(self) -> Dict[str, np.ndarray]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, f: np.ndarray) -> Tuple[np.ndarray, MaxPoolCache]:
        flat = f.reshape(f.shape[0], f.shape[1], -1)
        argmax = np.argmax(flat, axis=-1)
        embedding = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
        return embedding, MaxPoolCache(argmax, f.shape)

    def backward(self, grad: np.ndarray, cache: MaxPoolCache) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        b, c = cache.shape[:2]
        d_flat = np.zeros((b, c, int(np.prod(cache.shape[2:]))), dtype=grad.dtype)
        np.put_along_axis(d_flat, cache.argmax[..., None], grad[..., None], axis=-1)
        return d_flat.reshape(cache.shape), {}


def build_pool(config: EncoderConfig, channels: int, rng: np.random.Generator, dtype=np.float64):
    if config.pooling == "attention":
        return AttentionPool.initialize(channels, config.attention_dim, rng, dtype)
    if config.pooling == "max":
        return GlobalMaxPool()
    raise InternalError(f"Unknown pooling {config.pooling}")


# Single-map wrappers over the batched layers

def encode(z: TimeFreqMap, encoder: ConvEncoder, mode: str = "eval") -> FeatureMap:
    if z.stage != Stage.NORMALIZED:
        raise InputError(f"Encoder expects a normalized map, got stage {z.stage.value}")
    if mode not in ("train", "eval"):
        raise InputError(f"Unknown mode {mode!r}")
    out, _ = encoder.forward(z.values[None], train=mode == "train")
    return FeatureMap(values=out[0])


def attention_pool(f: FeatureMap, pool: AttentionPool) -> Tuple[np.ndarray, np.ndarray]:
    """Returns the pooled embedding and the F' x T' attention weights"""
    embedding, cache = pool.forward(f.values[None])
    return embedding[0], cache.weights[0].reshape(f.values.shape[1:])


def max_pool_global(f: FeatureMap) -> np.ndarray:
    embedding, _ = GlobalMaxPool().forward(f.values[None])
    return embedding[0]
