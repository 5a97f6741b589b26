from typing import Callable, Dict, Optional

import numpy as np
from loguru import logger

from app.core.exceptions import InternalError, NumericalError


class AdamState:
    """
    Adam moment accumulators keyed by parameter name

    Attributes:
        m, v: first and second moment estimates
        step: number of updates applied
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}


def _group(name: str) -> str:
    return name.split(".")[0]


def adam_step(
        params: Dict[str, np.ndarray],
        grads: Dict[str, np.ndarray],
        state: AdamState,
        clamp: Optional[Callable[[], None]] = None
) -> None:
    """
    One bias-corrected Adam update, applied to the parameter arrays in place

    Every gradient is checked before any parameter moves, so a failed step
    leaves the model untouched. `clamp` runs right after the update.

    Raises:
        NumericalError: a gradient holds NaN/Inf; the message names the parameter group
        InternalError: gradient missing or shaped differently from its parameter
    """
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None or grad.shape != value.shape:
            raise InternalError(f"Gradient for {name} missing or mis-shaped")
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"Non-finite gradient in parameter group '{_group(name)}' ({name})")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, value in params.items():
        grad = grads[name]
        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype, copy=False)

    if clamp is not None:
        clamp()
    logger.bind(step=t).trace("adam step applied")
