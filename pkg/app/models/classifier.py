from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from loguru import logger

from app.core.exceptions import InternalError, NumericalError
from app.models.encoder import ConvEncoder, EncoderCache, build_pool, output_shape
from app.models.frontend import FrontendCache, GaborFrontend
from app.models.head import ClassifierHead, HeadCache, cross_entropy
from app.models.normalization import BatchNorm
from app.schemas.config import RunConfig
from app.schemas.dataset import CtdsvStats


class ModelCache(NamedTuple):
    frontend: FrontendCache
    encoder: EncoderCache
    pool: object
    head: HeadCache


class VesselClassifier:
    """
    Frontend F_psi, encoder + pooling + head g_theta, and the CTDSV statistics

    Parameters and buffers are exposed as flat dicts keyed "<component>.<name>";
    the arrays are the live model state and are updated in place.
    """

    COMPONENTS = ("frontend", "encoder", "pool", "head")

    def __init__(
            self,
            config: RunConfig,
            frontend: GaborFrontend,
            encoder: ConvEncoder,
            pool,
            head: ClassifierHead,
            ctdsv_stats: Optional[CtdsvStats] = None
    ):
        self.config = config
        self.frontend = frontend
        self.encoder = encoder
        self.pool = pool
        self.head = head
        self.ctdsv_stats = ctdsv_stats

    @classmethod
    def initialize(cls, config: RunConfig, seed: Optional[int] = None,
                   ctdsv_stats: Optional[CtdsvStats] = None) -> "VesselClassifier":
        """Fresh model: mel-initialized frontend, seeded random weights for g_theta"""
        dtype = np.dtype(config.training.precision)
        rng = np.random.default_rng(config.training.seed if seed is None else seed)
        frontend = GaborFrontend.from_config(config.frontend, dtype=dtype, n_jobs=config.runtime.threads)
        input_shape = (config.frontend.n_filters, config.frontend.n_frames)
        encoder = ConvEncoder.initialize(config.encoder, rng, input_shape=input_shape, dtype=dtype)
        pool = build_pool(config.encoder, encoder.out_channels, rng, dtype)
        head = ClassifierHead.initialize(encoder.out_channels, config.head, rng, dtype)
        model = cls(config, frontend, encoder, pool, head, ctdsv_stats)
        logger.bind(
            parameters=model.n_parameters(),
            pooling=config.encoder.pooling,
            feature_shape=output_shape(*input_shape, len(config.encoder.channels)),
        ).info("Initialized vessel classifier")
        return model

    @property
    def dtype(self) -> np.dtype:
        return self.frontend.dtype

    def _components(self):
        return zip(self.COMPONENTS, (self.frontend, self.encoder, self.pool, self.head))

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, comp in self._components() for k, v in comp.parameters().items()}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, comp in self._components() for k, v in comp.buffers().items()}

    def norm_layers(self) -> Dict[str, BatchNorm]:
        layers = {"frontend.tbn": self.frontend.tbn}
        layers.update({f"encoder.{blk.name}": blk.norm for blk in self.encoder.blocks})
        return layers

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    def clamp_(self) -> None:
        self.frontend.clamp_()

    def prepare_ctdsv(self, ctdsv: Optional[np.ndarray]) -> Optional[np.ndarray]:
        """Z-score raw metadata with the stored training statistics"""
        if not self.head.use_ctdsv or ctdsv is None:
            return None
        if self.ctdsv_stats is None:
            raise InternalError("CTDSV statistics missing for a fused classifier head")
        return self.ctdsv_stats.apply(ctdsv).astype(self.dtype)

    def forward(self, waveforms: np.ndarray, ctdsv: Optional[np.ndarray] = None,
                mode: str = "train") -> Tuple[np.ndarray, ModelCache]:
        """
        Logits for a batch of waveforms

        Args:
            waveforms: (B, N) clips
            ctdsv: (B, 5) raw CTDSV readings, ignored when the CTDSV branch is disabled
            mode: "train" or "eval"
        """
        train = mode == "train"
        z, f_cache = self.frontend.forward(waveforms, mode=mode)
        features, e_cache = self.encoder.forward(z, train=train)
        embedding, p_cache = self.pool.forward(features)
        logits, h_cache = self.head.forward(embedding, self.prepare_ctdsv(ctdsv))
        return logits, ModelCache(f_cache, e_cache, p_cache, h_cache)

    def backward(self, grad_logits: np.ndarray, cache: ModelCache) -> Dict[str, np.ndarray]:
        grads: Dict[str, np.ndarray] = {}
        d_emb, head_grads = self.head.backward(grad_logits, cache.head)
        d_features, pool_grads = self.pool.backward(d_emb, cache.pool)
        d_z, enc_grads = self.encoder.backward(d_features, cache.encoder)
        front_grads, _ = self.frontend.backward(d_z, cache.frontend)
        for name, part in (("frontend", front_grads), ("encoder", enc_grads), ("pool", pool_grads), ("head", head_grads)):
            grads.update({f"{name}.{k}": v for k, v in part.items()})
        return grads

    def loss_and_grads(self, waveforms: np.ndarray, ctdsv: Optional[np.ndarray],
                       labels: np.ndarray) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
        """Mean cross-entropy over the batch and its gradient for every parameter"""
        logits, cache = self.forward(waveforms, ctdsv, mode="train")
        losses, grad = cross_entropy(logits, labels)
        loss = float(np.mean(losses))
        if not np.isfinite(loss):
            raise NumericalError("Non-finite training loss")
        grads = self.backward((grad / len(labels)).astype(self.dtype), cache)
        return loss, grads, logits

    def predict_logits(self, waveforms: np.ndarray, ctdsv: Optional[np.ndarray] = None) -> np.ndarray:
        logits, _ = self.forward(waveforms, ctdsv, mode="eval")
        return logits

    def constraint_violations(self) -> List[str]:
        return self.frontend.check_constraints()
