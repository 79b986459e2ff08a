"""First-order ascent with Adam moment estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteObjective


@dataclass(frozen=True)
class AdamConfig:
    epochs: int = 1000
    learning_rate: float = 0.0015
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class AscentResult:
    x: np.ndarray
    objective: float
    trace: np.ndarray  # objective at the start of every epoch, plus the final value


def adam_ascent(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0,
                config: AdamConfig) -> AscentResult:
    """Maximize ``fun`` (returning value and gradient) for ``config.epochs`` steps.

    The returned point is the final iterate, not the best one seen.
    """
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace = np.empty(config.epochs + 1)
    b1, b2 = config.beta1, config.beta2
    for epoch in range(config.epochs):
        value, grad = fun(x)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NonFiniteObjective(f"objective became non-finite at epoch {epoch}")
        trace[epoch] = value
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        m_hat = m / (1 - b1 ** (epoch + 1))
        v_hat = v / (1 - b2 ** (epoch + 1))
        x = x + config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    value, _ = fun(x)
    if not np.isfinite(value):
        raise NonFiniteObjective("objective became non-finite at the final iterate")
    trace[-1] = value
    return AscentResult(x, float(value), trace)
