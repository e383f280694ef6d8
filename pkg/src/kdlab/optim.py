"""AdamW with decoupled weight decay.

The decay never touches the gradient path: after the bias-corrected Adam
update, parameters are shrunk multiplicatively by ``lr * weight_decay``.
With zero gradients and zero decay a step is the identity.

Update rule per parameter:

    m_t = beta1 * m_{t-1} + (1 - beta1) * g
    v_t = beta2 * v_{t-1} + (1 - beta2) * g^2
    w  -= lr * (m_t / (1 - beta1^t)) / (sqrt(v_t / (1 - beta2^t)) + eps)
    w  *= 1 - lr * weight_decay
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamWState", "adamw_step"]


@dataclass
class AdamWState:
    """Moment estimates plus hyperparameters for one optimized parameter set."""

    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0.0 < self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in (0, 1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in (0, 1), got {self.beta2}")
        if not 0.0 < self.epsilon <= 1e-4:
            raise ValueError(f"epsilon must be in (0, 1e-4], got {self.epsilon}")

    @classmethod
    def for_params(cls, params: dict[str, Tensor], learning_rate: float,
                   weight_decay: float, **kwargs) -> "AdamWState":
        state = cls(learning_rate=learning_rate, weight_decay=weight_decay, **kwargs)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        return state


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: AdamWState) -> None:
    """Apply one in-place AdamW update to every parameter.

    Every parameter must have a gradient of the matching shape; moment
    buffers are created lazily for parameters the state has not seen.
    """
    for name in params:
        if name not in grads:
            raise ValueError(f"adamw_step: missing gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(
                f"adamw_step: gradient shape {g.shape} does not match parameter "
                f"{name!r} of shape {p.data.shape}")
        m = state.first_moment.setdefault(name, np.zeros_like(p.data))
        v = state.second_moment.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        p.data -= state.learning_rate * update
        if state.weight_decay:
            p.data *= 1.0 - state.learning_rate * state.weight_decay
