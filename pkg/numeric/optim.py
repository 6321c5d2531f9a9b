"""
Adam optimizer over named parameters
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from numeric.tensor import Param, Tensor
from utils.error_handler import ConfigError


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name."""

    m: Dict[str, Tensor] = field(default_factory=dict)
    v: Dict[str, Tensor] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Iterable[Param],
    lr: float,
    state: AdamState,
    t: int,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> AdamState:
    """
    One bias-corrected Adam update; gradients are zeroed afterwards.

    Args:
        params: Parameters with populated `grad`
        lr: Learning rate (> 0)
        state: Moment buffers, updated in place
        t: 1-based step index used for bias correction

    Returns:
        The updated state
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if t < 1:
        raise ConfigError(f"Adam step index starts at 1, got {t}")

    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    for param in params:
        g = param.grad
        if param.name not in state.m:
            state.m[param.name] = np.zeros_like(param.value)
            state.v[param.name] = np.zeros_like(param.value)
        m = state.m[param.name]
        v = state.v[param.name]

        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)

        param.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        param.zero_grad()

    state.t = t
    return state


class Adam:
    """Stateful wrapper around `adam_step`."""

    def __init__(self, lr: float, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, params: Iterable[Param]) -> None:
        adam_step(params, self.lr, self.state, self.state.t + 1, self.beta1, self.beta2, self.eps)
