from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr: float = 1e-4

    @classmethod
    def for_param(cls, param: Tensor, lr: float = 1e-4, beta1: float = 0.9,
                  beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(np.zeros(param.shape), np.zeros(param.shape), 0, beta1, beta2, epsilon, lr)


def adam_step(param: Tensor, state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``param`` in place."""
    g = param.grad
    if g is None:
        raise ContractError(f"adam_step: {param!r} has no gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    denom = np.sqrt(state.v / (1.0 - state.beta2**state.t))
    denom += state.epsilon
    m_hat *= state.lr
    m_hat /= denom
    param.data = param.data - m_hat


@dataclass
class Adam:
    """Adam over a named parameter set. Parameters without a gradient are skipped."""

    params: dict[str, Tensor]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.states:
                self.states[name] = AdamState.for_param(
                    p, self.lr, self.beta1, self.beta2, self.epsilon
                )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None:
                adam_step(p, self.states[name])
