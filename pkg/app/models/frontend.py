"""Learnable Gabor filterbank frontend.

Waveform -> complex Gabor convolution -> squared modulus -> per-filter Gaussian
pooling -> learnable log compression -> Temporal BatchNorm. Every stage has an
analytic backward pass so the filterbank is trained jointly with the classifier.
"""
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from scipy.signal import fftconvolve

from app.core.exceptions import ConfigurationError, InputError, InternalError
from app.models.normalization import BatchNorm, BatchNormCache
from app.schemas.config import FrontendConfig
from app.schemas.frontend import CompressionParams, FrontendParams, GaborFilterParams, PoolingParams
from app.schemas.signal import Stage, TimeFreqMap, Waveform

FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
LN10 = math.log(10.0)


def mel(f_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_inverse(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    """Reflect-pad the last axis (edge sample not repeated)"""
    if pad == 0:
        return x
    if pad >= x.shape[-1]:
        raise InputError(f"Reflect padding of {pad} needs more than {pad} samples, got {x.shape[-1]}")
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    return np.pad(x, widths, mode="reflect")


def reflect_pad_adjoint(grad: np.ndarray, pad: int) -> np.ndarray:
    """Fold the gradient of a reflect-padded signal back onto the original samples"""
    if pad == 0:
        return grad
    n = grad.shape[-1] - 2 * pad
    out = grad[..., pad:pad + n].copy()
    out[..., 1:pad + 1] += grad[..., :pad][..., ::-1]
    out[..., n - 1 - pad:n - 1] += grad[..., pad + n:][..., ::-1]
    return out


def _complex_dtype(dtype) -> np.dtype:
    return np.result_type(dtype, np.complex64)


def gabor_kernels(mu: np.ndarray, sigma: np.ndarray, kernel_width: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Complex Gabor impulse responses

    g_k[n] = exp(-n^2 / (2 sigma_k^2)) / (sqrt(2 pi) sigma_k) * exp(i mu_k n),
    n in [-(W-1)/2, (W-1)/2].

    Returns:
        (kernels of shape (K, W), tap offsets n of shape (W,))
    """
    half = (kernel_width - 1) // 2
    n = np.arange(-half, half + 1, dtype=mu.dtype)
    sig = sigma[:, None]
    envelope = np.exp(-n[None, :] ** 2 / (2.0 * sig ** 2)) / (math.sqrt(2.0 * math.pi) * sig)
    kernels = envelope * np.exp(1j * mu[:, None] * n[None, :])
    return kernels.astype(_complex_dtype(mu.dtype)), n


def init_filterbank(
        n_filters: int,
        sample_rate: int,
        f_min: float,
        f_max: float,
        kernel_width: int = 401,
        hop: Optional[int] = None,
        window_ms: float = 25.0,
        window_span: float = 4.0,
        sigma_min: float = 1.5,
        eps: float = 1e-5,
        momentum: float = 0.1,
        dtype=np.float64
) -> FrontendParams:
    """
    Mel-initialized Gabor filterbank

    Center frequencies are the K interior points of a mel-uniform grid over
    [f_min, f_max]; each envelope width is chosen so that the filter's frequency
    response FWHM equals the local spacing of that grid.

    Raises:
        ConfigurationError: K < 1 or an empty/out-of-range frequency span
    """
    if n_filters < 1:
        raise ConfigurationError("Filterbank needs at least one filter")
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ConfigurationError(
            f"Invalid filterbank span f_min={f_min} f_max={f_max} for sample rate {sample_rate}"
        )
    if kernel_width < 1 or kernel_width % 2 == 0:
        raise ConfigurationError("kernel_width must be a positive odd number")

    m_lo, m_hi = mel(f_min), mel(f_max)
    grid_hz = mel_inverse(m_lo + (m_hi - m_lo) * np.arange(n_filters + 2) / (n_filters + 1))
    centers_hz = grid_hz[1:-1]
    spacing_hz = (grid_hz[2:] - grid_hz[:-2]) / 2.0

    mu = 2.0 * np.pi * centers_hz / sample_rate
    fwhm_rad = 2.0 * np.pi * spacing_hz / sample_rate
    sigma = np.clip(FWHM_TO_SIGMA / fwhm_rad, sigma_min, kernel_width / 2.0)

    if hop is None:
        hop = max(1, int(round(0.010 * sample_rate)))
    rho = np.full(n_filters, window_ms / 1000.0 * sample_rate / FWHM_TO_SIGMA)

    return FrontendParams(
        gabor=GaborFilterParams(mu=mu.astype(dtype), sigma=sigma.astype(dtype), kernel_width=kernel_width),
        pooling=PoolingParams(rho=rho.astype(dtype), hop=hop, window_span=window_span),
        compression=CompressionParams.initial(
            n_filters, eps=eps, momentum=momentum, dtype=dtype, a=np.zeros(n_filters, dtype=dtype)
        ),
        sample_rate=sample_rate,
    )


def init_filterbank_from_config(config: FrontendConfig, dtype=np.float64) -> FrontendParams:
    return init_filterbank(
        n_filters=config.n_filters,
        sample_rate=config.sample_rate,
        f_min=config.f_min_hz,
        f_max=config.f_max_hz,
        kernel_width=config.kernel_width,
        hop=config.hop,
        window_ms=config.window_ms,
        window_span=config.window_span,
        sigma_min=config.sigma_min,
        eps=config.tbn_eps,
        momentum=config.tbn_momentum,
        dtype=dtype,
    )


# ---------------------------------------------------------------------------
# Per-clip stages (array level)
# ---------------------------------------------------------------------------

class GaborCache(NamedTuple):
    padded: np.ndarray
    response: np.ndarray
    kernels: np.ndarray
    taps: np.ndarray


class PoolCache(NamedTuple):
    windows: np.ndarray
    weights: np.ndarray
    raw: np.ndarray
    norm: np.ndarray
    taps: np.ndarray
    support: int
    n_samples: int


class CompressCache(NamedTuple):
    pooled: np.ndarray
    gain: np.ndarray


class ClipCache(NamedTuple):
    gabor: GaborCache
    pool: PoolCache
    compress: CompressCache


def _check_waveform(x: np.ndarray, kernel_width: int) -> None:
    if x.ndim != 1:
        raise InputError(f"Expected a mono waveform, got shape {x.shape}")
    if x.shape[0] < kernel_width:
        raise InputError(f"Waveform of {x.shape[0]} samples is shorter than the {kernel_width}-tap kernel")
    if not np.all(np.isfinite(x)):
        raise InputError("Waveform contains non-finite samples")


def _gabor_energy(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray, kernel_width: int) -> Tuple[np.ndarray, GaborCache]:
    _check_waveform(x, kernel_width)
    kernels, taps = gabor_kernels(mu, sigma, kernel_width)
    padded = reflect_pad(x, (kernel_width - 1) // 2)
    response = fftconvolve(padded[None, :], kernels, mode="valid", axes=-1)
    energy = response.real ** 2 + response.imag ** 2
    return energy.astype(mu.dtype, copy=False), GaborCache(padded, response, kernels, taps)


def _gabor_energy_backward(
        grad: np.ndarray,
        cache: GaborCache,
        sigma: np.ndarray,
        need_input_grad: bool
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    d_response = 2.0 * grad * cache.response
    # d_kernel[j] = sum_t d_response[t] * padded[t + W - 1 - j]
    d_kernels = fftconvolve(cache.padded[None, :], d_response[:, ::-1], mode="valid", axes=-1)[:, ::-1]
    cross = d_kernels * np.conj(cache.kernels)
    n = cache.taps[None, :]
    sig = sigma[:, None]
    d_mu = np.sum(n * cross.imag, axis=1)
    d_sigma = np.sum((-1.0 / sig + n ** 2 / sig ** 3) * cross.real, axis=1)

    d_x = None
    if need_input_grad:
        d_padded = fftconvolve(d_response, np.conj(cache.kernels)[:, ::-1], mode="full", axes=-1)
        d_x = reflect_pad_adjoint(d_padded.real.sum(axis=0), (cache.kernels.shape[1] - 1) // 2)
    return d_mu.astype(sigma.dtype), d_sigma.astype(sigma.dtype), d_x


def _pool_weights(rho: np.ndarray, window_span: float, dtype) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    if np.any(rho <= 0):
        raise InternalError("Pooling width rho must stay positive; clamp after every update")
    support = int(math.ceil(window_span * float(np.max(rho))))
    taps = np.arange(-support, support + 1, dtype=dtype)
    r = rho[:, None]
    mask = np.abs(taps)[None, :] <= window_span * r
    raw = np.exp(-taps[None, :] ** 2 / (2.0 * r ** 2)) * mask
    norm = raw.sum(axis=1)
    return raw / norm[:, None], raw, norm, taps, support


def _gaussian_pool(energy: np.ndarray, rho: np.ndarray, hop: int, window_span: float) -> Tuple[np.ndarray, PoolCache]:
    n_samples = energy.shape[-1]
    if hop > n_samples:
        raise ConfigurationError(f"Pooling hop {hop} exceeds the {n_samples}-sample input")
    weights, raw, norm, taps, support = _pool_weights(rho, window_span, energy.dtype)
    if support >= n_samples:
        raise ConfigurationError(
            f"Pooling support {support} must be shorter than the {n_samples}-sample input; lower rho_max"
        )
    n_frames = n_samples // hop
    padded = reflect_pad(energy, support)
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * support + 1, axis=-1)[:, ::hop][:, :n_frames]
    pooled = np.einsum("ktm,km->kt", windows, weights)
    return np.maximum(pooled, 0.0), PoolCache(windows, weights, raw, norm, taps, support, n_samples)


def _gaussian_pool_backward(grad: np.ndarray, cache: PoolCache, rho: np.ndarray, hop: int) -> Tuple[np.ndarray, np.ndarray]:
    d_weights = np.einsum("kt,ktm->km", grad, cache.windows)
    r = rho[:, None]
    d_raw_d_rho = cache.raw * cache.taps[None, :] ** 2 / r ** 3
    d_weights_d_rho = (d_raw_d_rho - cache.weights * d_raw_d_rho.sum(axis=1, keepdims=True)) / cache.norm[:, None]
    d_rho = np.sum(d_weights * d_weights_d_rho, axis=1)

    width = 2 * cache.support + 1
    d_padded = np.zeros((grad.shape[0], cache.n_samples + 2 * cache.support), dtype=grad.dtype)
    for t in range(grad.shape[1]):
        d_padded[:, t * hop:t * hop + width] += grad[:, t:t + 1] * cache.weights
    return reflect_pad_adjoint(d_padded, cache.support), d_rho


def _compress(pooled: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, CompressCache]:
    if np.any(pooled < 0):
        raise InputError("Log compression requires nonnegative input")
    gain = 10.0 ** a
    return np.log1p(gain[:, None] * pooled), CompressCache(pooled, gain)


def _compress_backward(grad: np.ndarray, cache: CompressCache) -> Tuple[np.ndarray, np.ndarray]:
    scaled = cache.gain[:, None] * cache.pooled
    d_pooled = grad * cache.gain[:, None] / (1.0 + scaled)
    d_a = np.sum(grad * LN10 * scaled / (1.0 + scaled), axis=-1)
    return d_pooled, d_a


# ---------------------------------------------------------------------------
# Typed single-stage operations
# ---------------------------------------------------------------------------

def gabor_forward(x: Union[Waveform, np.ndarray], p: GaborFilterParams) -> TimeFreqMap:
    """|x * g_k|^2 at every input sample, reflect-padded same-length convolution"""
    samples = x.samples if isinstance(x, Waveform) else np.asarray(x)
    energy, _ = _gabor_energy(samples.astype(p.mu.dtype, copy=False), p.mu, p.sigma, p.kernel_width)
    return TimeFreqMap(values=energy, stage=Stage.ENERGY)


def gaussian_pool(e: TimeFreqMap, p: PoolingParams) -> TimeFreqMap:
    """Unit-sum Gaussian smoothing per channel, sampled every hop samples"""
    if e.stage != Stage.ENERGY:
        raise InputError(f"Gaussian pooling expects an energy map, got stage {e.stage.value}")
    if e.n_channels != p.rho.shape[0]:
        raise InputError(f"Map has {e.n_channels} channels, pooling has {p.rho.shape[0]}")
    pooled, _ = _gaussian_pool(e.values, p.rho, p.hop, p.window_span)
    return TimeFreqMap(values=pooled, stage=Stage.POOLED)


def compress_normalize(
        x: Union[TimeFreqMap, Sequence[TimeFreqMap]],
        c: CompressionParams,
        mode: str = "train"
) -> Union[TimeFreqMap, List[TimeFreqMap]]:
    """
    y = log(1 + 10^a x) followed by Temporal BatchNorm

    A sequence of maps is treated as one batch: statistics run over (batch x time).
    """
    maps = [x] if isinstance(x, TimeFreqMap) else list(x)
    for m in maps:
        if m.stage != Stage.POOLED:
            raise InputError(f"Compression expects pooled maps, got stage {m.stage.value}")
    compressed = np.stack([_compress(m.values, c.a)[0] for m in maps])
    normalized, _ = BatchNorm(c, name="tbn").forward(compressed, train=_is_train(mode))
    out = [TimeFreqMap(values=v, stage=Stage.NORMALIZED) for v in normalized]
    return out[0] if isinstance(x, TimeFreqMap) else out


def _is_train(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise InputError(f"Unknown mode {mode!r}; expected 'train' or 'eval'")
    return mode == "train"


# ---------------------------------------------------------------------------
# Batched frontend with backward pass
# ---------------------------------------------------------------------------

class FrontendCache(NamedTuple):
    frontend: "GaborFrontend"
    clips: List[ClipCache]
    tbn: Optional[BatchNormCache]
    stage: Stage
    shape: Tuple[int, int, int]


class GaborFrontend:
    """
    Batched frontend F_psi over waveforms of shape (B, N)

    Parameters (psi): mu, sigma, rho, a, gamma, beta, each of shape (K,).
    """

    PARAMETER_NAMES = ("mu", "sigma", "rho", "a", "gamma", "beta")

    def __init__(
            self,
            params: FrontendParams,
            bounds: Optional[Dict[str, Tuple[float, float]]] = None,
            n_jobs: int = 1
    ):
        self.params = params
        self.tbn = BatchNorm(params.compression, name="frontend.tbn")
        self.n_jobs = n_jobs
        kernel_width = params.gabor.kernel_width
        self.bounds = bounds or {
            "mu": (2 * math.pi * 10.0 / params.sample_rate, math.pi * 0.999),
            "sigma": (1.5, kernel_width / 2.0),
            "rho": (1.0, math.inf),
        }

    @classmethod
    def from_config(cls, config: FrontendConfig, dtype=np.float64, n_jobs: int = 1) -> "GaborFrontend":
        params = init_filterbank_from_config(config, dtype=dtype)
        bounds = {
            "mu": config.mu_bounds,
            "sigma": (config.sigma_min, config.sigma_max),
            "rho": config.rho_bounds,
        }
        return cls(params, bounds=bounds, n_jobs=n_jobs)

    @property
    def n_filters(self) -> int:
        return self.params.gabor.n_filters

    @property
    def dtype(self):
        return self.params.gabor.mu.dtype

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.params.pooling.hop

    def parameters(self) -> Dict[str, np.ndarray]:
        p = self.params
        return {
            "mu": p.gabor.mu,
            "sigma": p.gabor.sigma,
            "rho": p.pooling.rho,
            "a": p.compression.a,
            "gamma": p.compression.gamma,
            "beta": p.compression.beta,
        }

    def buffers(self) -> Dict[str, np.ndarray]:
        return self.tbn.buffers()

    def clamp_(self) -> None:
        """Project mu, sigma, rho back onto their legal ranges in place"""
        params = self.parameters()
        for name, (lo, hi) in self.bounds.items():
            np.clip(params[name], lo, hi, out=params[name])

    def check_constraints(self) -> List[str]:
        params = self.parameters()
        violations = []
        for name, (lo, hi) in self.bounds.items():
            values = params[name]
            if np.any(values < lo) or np.any(values > hi):
                violations.append(f"{name} outside [{lo}, {hi}]")
        if np.any(params["mu"] <= 0) or np.any(params["mu"] >= math.pi):
            violations.append("mu outside (0, pi)")
        if np.any(params["rho"] <= 0):
            violations.append("rho not positive")
        return violations

    def _map(self, fn, items):
        if self.n_jobs > 1 and len(items) > 1:
            return Parallel(n_jobs=self.n_jobs, backend="threading")(delayed(fn)(item) for item in items)
        return [fn(item) for item in items]

    def _clip_forward(self, x: np.ndarray, stage: Stage) -> Tuple[np.ndarray, ClipCache]:
        p = self.params
        energy, g_cache = _gabor_energy(x, p.gabor.mu, p.gabor.sigma, p.gabor.kernel_width)
        pooled, p_cache = _gaussian_pool(energy, p.pooling.rho, p.pooling.hop, p.pooling.window_span)
        if stage == Stage.POOLED:
            return pooled, ClipCache(g_cache, p_cache, None)
        compressed, c_cache = _compress(pooled, p.compression.a)
        return compressed, ClipCache(g_cache, p_cache, c_cache)

    def forward(self, x: np.ndarray, mode: str = "train", stage: Stage = Stage.NORMALIZED) -> Tuple[np.ndarray, FrontendCache]:
        """
        Run the frontend on a batch of waveforms

        Args:
            x: waveforms, shape (B, N)
            mode: "train" uses batch statistics, "eval" running statistics
            stage: stop after pooling (Stage.POOLED) or run to the end (Stage.NORMALIZED)

        Returns:
            (maps of shape (B, K, T), cache for backward)
        """
        train = _is_train(mode)
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2:
            raise InputError(f"Frontend expects a (batch, samples) array, got shape {x.shape}")
        results = self._map(lambda clip: self._clip_forward(clip, stage), list(x))
        maps = np.stack([r[0] for r in results])
        clip_caches = [r[1] for r in results]
        tbn_cache = None
        if stage == Stage.NORMALIZED:
            maps, tbn_cache = self.tbn.forward(maps, train=train)
        elif stage != Stage.POOLED:
            raise InputError(f"Frontend can stop at 'pooled' or 'normalized', not {stage.value}")
        return maps, FrontendCache(self, clip_caches, tbn_cache, stage, maps.shape)

    def _clip_backward(self, grad: np.ndarray, cache: ClipCache, need_input_grad: bool):
        p = self.params
        d_a = None
        if cache.compress is not None:
            grad, d_a = _compress_backward(grad, cache.compress)
        d_energy, d_rho = _gaussian_pool_backward(grad, cache.pool, p.pooling.rho, p.pooling.hop)
        d_mu, d_sigma, d_x = _gabor_energy_backward(d_energy, cache.gabor, p.gabor.sigma, need_input_grad)
        return d_mu, d_sigma, d_rho, d_a, d_x

    def backward(
            self,
            grad_out: np.ndarray,
            cache: FrontendCache,
            need_input_grad: bool = False
    ) -> Tuple[Dict[str, np.ndarray], Optional[np.ndarray]]:
        """
        Gradients of a scalar loss w.r.t. every psi component (and optionally the input)

        Per-clip gradients are accumulated in clip-index order.

        Raises:
            InternalError: gradient shape does not match the cached forward pass
        """
        if grad_out.shape != cache.shape:
            raise InternalError(f"Frontend gradient shape {grad_out.shape} does not match forward output {cache.shape}")
        grads = {name: np.zeros_like(value) for name, value in self.parameters().items()}
        if cache.stage == Stage.NORMALIZED:
            grad_out, tbn_grads = self.tbn.backward(grad_out, cache.tbn)
            grads.update(tbn_grads)

        pairs = list(zip(grad_out, cache.clips))
        results = self._map(lambda pair: self._clip_backward(pair[0], pair[1], need_input_grad), pairs)
        inputs = []
        for d_mu, d_sigma, d_rho, d_a, d_x in results:
            grads["mu"] += d_mu
            grads["sigma"] += d_sigma
            grads["rho"] += d_rho
            if d_a is not None:
                grads["a"] += d_a
            inputs.append(d_x)
        d_input = np.stack(inputs) if need_input_grad else None
        logger.bind(batch=len(pairs)).trace("frontend backward complete")
        return grads, d_input


def frontend_backward(grad_out: np.ndarray, cache: FrontendCache) -> Dict[str, np.ndarray]:
    """Analytic gradients for mu, sigma, rho, a, gamma, beta and the input waveform ('input')"""
    grads, d_input = cache.frontend.backward(grad_out, cache, need_input_grad=True)
    grads["input"] = d_input
    return grads
