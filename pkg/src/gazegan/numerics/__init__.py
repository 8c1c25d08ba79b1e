"""Small float64 tensor library with a gradient tape, 1D conv layers and Adam."""

from .ops import (
    activation,
    add,
    bce_loss,
    concat,
    conv1d,
    conv1d_transpose,
    cross_entropy,
    dense,
    embedding_lookup,
    leaky_relu,
    log_softmax,
    mean,
    mul,
    reshape,
    sigmoid,
    softmax,
    sub,
    tanh,
)
from .ops import sum as tsum
from .optim import Adam, AdamState, adam_step
from .tensor import (
    ContractError,
    GradTape,
    InvalidIndexError,
    InvalidShapeError,
    Tensor,
    backward,
    current_tape,
)


def init_normal(rng, shape, std: float = 0.02, name: str | None = None) -> Tensor:
    """DCGAN-style N(0, std) initialisation."""
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, name=name)


def init_zeros(shape, name: str | None = None) -> Tensor:
    import numpy as np

    return Tensor(np.zeros(shape), requires_grad=True, name=name)


__all__ = [
    "Adam",
    "AdamState",
    "ContractError",
    "GradTape",
    "InvalidIndexError",
    "InvalidShapeError",
    "Tensor",
    "activation",
    "adam_step",
    "add",
    "backward",
    "bce_loss",
    "concat",
    "conv1d",
    "conv1d_transpose",
    "cross_entropy",
    "current_tape",
    "dense",
    "embedding_lookup",
    "init_normal",
    "init_zeros",
    "leaky_relu",
    "log_softmax",
    "mean",
    "mul",
    "reshape",
    "sigmoid",
    "softmax",
    "sub",
    "tanh",
    "tsum",
]
