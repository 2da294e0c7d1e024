"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import ShapeError, Tensor


class NumericError(RuntimeError):
    """Raised on non-finite gradients or losses."""


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for tensor in params.values():
        tensor.zero_grad()


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; a missing grad counts as all-zero.

    Parameter values are replaced, not mutated in place, so arrays captured
    by an earlier tape stay valid.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, tensor in params.items():
        grad = tensor.grad
        if grad is None:
            grad = np.zeros_like(tensor.values)
        elif grad.shape != tensor.values.shape:
            raise ShapeError(f"parameter '{name}': value shape {tensor.values.shape} "
                             f"vs grad shape {grad.shape}")
        elif not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(tensor.values)
            state.v[name] = np.zeros_like(tensor.values)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bias1
        v_hat = v / bias2
        tensor.values = tensor.values - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
