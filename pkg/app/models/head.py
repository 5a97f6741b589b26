import math
from typing import Dict, NamedTuple, Optional, Tuple, Union

import numpy as np

from app.core.exceptions import ConfigurationError, NumericalError
from app.schemas.config import HeadConfig
from app.schemas.dataset import CTDSV_FIELDS, N_CLASSES

N_CTDSV = len(CTDSV_FIELDS)


class MetaCache(NamedTuple):
    v: np.ndarray
    hidden: np.ndarray


class MetaBranch:
    """CTDSV feed-forward branch: 5 -> hidden (ReLU) -> hidden (linear)"""

    def __init__(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray):
        self.w1 = w1
        self.b1 = b1
        self.w2 = w2
        self.b2 = b2

    @classmethod
    def initialize(cls, hidden: int, rng: np.random.Generator, dtype=np.float64) -> "MetaBranch":
        return cls(
            w1=(rng.standard_normal((N_CTDSV, hidden)) * math.sqrt(2.0 / N_CTDSV)).astype(dtype),
            b1=np.zeros(hidden, dtype=dtype),
            w2=(rng.standard_normal((hidden, hidden)) * math.sqrt(1.0 / hidden)).astype(dtype),
            b2=np.zeros(hidden, dtype=dtype),
        )

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward(self, v: np.ndarray) -> Tuple[np.ndarray, MetaCache]:
        if v.shape[-1] != N_CTDSV:
            raise ConfigurationError(f"CTDSV vectors need {N_CTDSV} components, got {v.shape[-1]}")
        hidden = np.maximum(v @ self.w1 + self.b1, 0.0)
        return hidden @ self.w2 + self.b2, MetaCache(v, hidden)

    def backward(self, grad: np.ndarray, cache: MetaCache) -> Dict[str, np.ndarray]:
        d_hidden = (grad @ self.w2.T) * (cache.hidden > 0)
        return {
            "w1": cache.v.T @ d_hidden,
            "b1": d_hidden.sum(axis=0),
            "w2": cache.hidden.T @ grad,
            "b2": grad.sum(axis=0),
        }


class HeadCache(NamedTuple):
    features: np.ndarray
    meta: Optional[MetaCache]
    audio_dim: int


class ClassifierHead:
    """Optional CTDSV fusion followed by a linear layer producing 5 logits"""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, meta: Optional[MetaBranch] = None):
        self.weight = weight
        self.bias = bias
        self.meta = meta

    @classmethod
    def initialize(cls, audio_dim: int, config: HeadConfig, rng: np.random.Generator,
                   dtype=np.float64) -> "ClassifierHead":
        meta = MetaBranch.initialize(config.meta_hidden, rng, dtype) if config.use_ctdsv else None
        in_dim = audio_dim + (meta.out_dim if meta else 0)
        limit = math.sqrt(1.0 / in_dim)
        return cls(
            weight=rng.uniform(-limit, limit, (in_dim, N_CLASSES)).astype(dtype),
            bias=np.zeros(N_CLASSES, dtype=dtype),
            meta=meta,
        )

    @property
    def use_ctdsv(self) -> bool:
        return self.meta is not None

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {"fc.weight": self.weight, "fc.bias": self.bias}
        if self.meta:
            params.update({f"meta.{k}": v for k, v in self.meta.parameters().items()})
        return params

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, audio_emb: np.ndarray, ctdsv: Optional[np.ndarray] = None) -> Tuple[np.ndarray, HeadCache]:
        """
        Args:
            audio_emb: (B, D) pooled embeddings
            ctdsv: (B, 5) normalized metadata; ignored when the CTDSV branch is disabled

        Raises:
            ConfigurationError: metadata missing for a fused head or dimensions disagree
        """
        meta_cache = None
        features = audio_emb
        if self.meta:
            if ctdsv is None:
                raise ConfigurationError("CTDSV metadata required by the fused classifier head")
            meta_emb, meta_cache = self.meta.forward(ctdsv)
            features = np.concatenate([audio_emb, meta_emb], axis=1)
        if features.shape[1] != self.weight.shape[0]:
            raise ConfigurationError(
                f"Classifier expects {self.weight.shape[0]} input features, got {features.shape[1]}"
            )
        return features @ self.weight + self.bias, HeadCache(features, meta_cache, audio_emb.shape[1])

    def backward(self, grad: np.ndarray, cache: HeadCache) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        grads = {"fc.weight": cache.features.T @ grad, "fc.bias": grad.sum(axis=0)}
        d_features = grad @ self.weight.T
        if self.meta:
            meta_grads = self.meta.backward(d_features[:, cache.audio_dim:], cache.meta)
            grads.update({f"meta.{k}": v for k, v in meta_grads.items()})
        return d_features[:, :cache.audio_dim], grads


def meta_branch(v: np.ndarray, head: ClassifierHead) -> np.ndarray:
    if head.meta is None:
        raise ConfigurationError("CTDSV branch is disabled (use_ctdsv = false)")
    out, _ = head.meta.forward(np.atleast_2d(v))
    return out[0] if np.ndim(v) == 1 else out


def classify(audio_emb: np.ndarray, meta_emb: Optional[np.ndarray], head: ClassifierHead) -> np.ndarray:
    """Logits from an audio embedding and an already computed meta embedding"""
    features = audio_emb if meta_emb is None or not head.use_ctdsv else np.concatenate([audio_emb, meta_emb])
    if features.shape[-1] != head.weight.shape[0]:
        raise ConfigurationError(
            f"Classifier expects {head.weight.shape[0]} input features, got {features.shape[-1]}"
        )
    return features @ head.weight + head.bias


def cross_entropy(logits: np.ndarray, labels: Union[int, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Softmax cross-entropy per sample

    Returns:
        (loss, grad_logits) where grad = softmax(logits) - onehot(label); a single
        logit vector yields a scalar loss.

    Raises:
        NumericalError: non-finite logits
    """
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("Non-finite logits in cross-entropy")
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    rows = np.arange(z.shape[0])
    loss = -log_probs[rows, labels]
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    if single:
        return loss[0], grad[0]
    return loss, grad


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def predict(logits: np.ndarray) -> np.ndarray:
    """argmax over classes; np.argmax already returns the lowest index on ties"""
    return np.argmax(logits, axis=-1)
