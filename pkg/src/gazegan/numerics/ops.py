"""Differentiable operations.

Layer ops accept an optional leading batch dimension. Every op returns a new
``Tensor`` and, when an input requires grad and a tape is active, records a
closure mapping the output gradient to input gradients.
"""

from __future__ import annotations

import numpy as np

from .tensor import InvalidIndexError, InvalidShapeError, Tensor, as_tensor, result

BCE_EPS = 1e-7


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return result(
        np.asarray(x.data.mean()),
        (x,),
        lambda g: (np.full(x.shape, float(g) / n),),
    )


# shape manipulation


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)
    return result(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


# layers


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``W @ x + b`` for ``x`` of shape (N,) or (B, N)."""
    if weights.ndim != 2 or bias.shape != (weights.shape[0],):
        raise InvalidShapeError(f"dense: weights {weights.shape} / bias {bias.shape}")
    if x.ndim not in (1, 2) or x.shape[-1] != weights.shape[1]:
        raise InvalidShapeError(f"dense: input {x.shape} vs weights {weights.shape}")
    W = weights.data
    out = x.data @ W.T + bias.data

    def bwd(g):
        g2 = g.reshape(-1, W.shape[0])
        x2 = x.data.reshape(-1, W.shape[1])
        return (g @ W, g2.T @ x2, g2.sum(axis=0))

    return result(out, (x, weights, bias), bwd)


def embedding_lookup(table: Tensor, index) -> Tensor:
    """Row ``index`` of ``table``; ``index`` may be an int or an int array."""
    V = table.shape[0]
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise InvalidIndexError(f"embedding index must be integer, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise InvalidIndexError(f"embedding index out of range [0, {V}): {index!r}")

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return result(table.data[idx], (table,), bwd)


def _batched(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise InvalidShapeError(f"expected (C, T) or (B, C, T), got {x.shape}")


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (C_in, T) input with (C_out, C_in, K) kernels."""
    xd, single = _batched(x)
    B, C_in, T = xd.shape
    C_out, C_k, K = kernels.shape
    if C_k != C_in:
        raise InvalidShapeError(f"conv1d: input has {C_in} channels, kernels expect {C_k}")
    if bias.shape != (C_out,):
        raise InvalidShapeError(f"conv1d: bias {bias.shape} for {C_out} output channels")
    if stride < 1 or padding < 0 or T + 2 * padding < K:
        raise InvalidShapeError(f"conv1d: T={T}, K={K}, stride={stride}, padding={padding}")
    T_out = (T + 2 * padding - K) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    span = stride * (T_out - 1) + 1
    # cols[b, t, c, k] = xp[b, c, t*stride + k]
    cols = np.empty((B, T_out, C_in, K))
    for k in range(K):
        cols[..., k] = xp[:, :, k : k + span : stride].transpose(0, 2, 1)
    cols = cols.reshape(B * T_out, C_in * K)
    Wm = kernels.data.reshape(C_out, C_in * K)
    out = (cols @ Wm.T).reshape(B, T_out, C_out).transpose(0, 2, 1) + bias.data[:, None]
    if single:
        out = out[0]

    def bwd(g):
        gb = g[None] if single else g
        g2 = gb.transpose(0, 2, 1).reshape(B * T_out, C_out)
        dW = (g2.T @ cols).reshape(kernels.shape)
        db = gb.sum(axis=(0, 2))
        dx = None
        if x.requires_grad:
            dcols = (g2 @ Wm).reshape(B, T_out, C_in, K)
            dxp = np.zeros_like(xp)
            for k in range(K):
                dxp[:, :, k : k + span : stride] += dcols[..., k].transpose(0, 2, 1)
            dx = dxp[:, :, padding : padding + T] if padding else dxp
            if single:
                dx = dx[0]
        return (dx, dW, db)

    return result(np.ascontiguousarray(out), (x, kernels, bias), bwd)


def conv1d_transpose(
    x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """Adjoint of :func:`conv1d`; ``kernels`` has shape (C_in, C_out, K)."""
    xd, single = _batched(x)
    B, C_in, T = xd.shape
    C_k, C_out, K = kernels.shape
    if C_k != C_in:
        raise InvalidShapeError(
            f"conv1d_transpose: input has {C_in} channels, kernels expect {C_k}"
        )
    if bias.shape != (C_out,):
        raise InvalidShapeError(f"conv1d_transpose: bias {bias.shape} for {C_out} channels")
    if stride < 1 or padding < 0:
        raise InvalidShapeError(f"conv1d_transpose: stride={stride}, padding={padding}")
    T_out = (T - 1) * stride - 2 * padding + K
    if T_out <= 0:
        raise InvalidShapeError(f"conv1d_transpose: computed output length {T_out}")
    full_len = (T - 1) * stride + K
    span = stride * (T - 1) + 1
    W = kernels.data
    # contrib[b, o, t, k] = sum_c x[b, c, t] * W[c, o, k]
    contrib = np.tensordot(xd, W, axes=([1], [0]))  # (B, T, C_out, K)
    full = np.zeros((B, C_out, full_len))
    for k in range(K):
        full[:, :, k : k + span : stride] += contrib[:, :, :, k].transpose(0, 2, 1)
    out = full[:, :, padding : padding + T_out] + bias.data[:, None]
    if single:
        out = out[0]

    def bwd(g):
        gb = g[None] if single else g
        gfull = np.zeros((B, C_out, full_len))
        gfull[:, :, padding : padding + T_out] = gb
        # gsl[b, o, t, k] = gfull[b, o, t*stride + k]
        gsl = np.stack([gfull[:, :, k : k + span : stride] for k in range(K)], axis=-1)
        dW = np.tensordot(xd, gsl, axes=([0, 2], [0, 2]))  # (C_in, C_out, K)
        db = gb.sum(axis=(0, 2))
        dx = None
        if x.requires_grad:
            dx = np.tensordot(gsl, W, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
            if single:
                dx = dx[0]
        return (dx, dW, db)

    return result(np.ascontiguousarray(out), (x, kernels, bias), bwd)


# activations


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    d = x.data
    y = np.maximum(d, alpha * d) if 0 <= alpha <= 1 else np.where(d >= 0, d, alpha * d)
    return result(y, (x,), lambda g: (np.where(d >= 0, g, alpha * g),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return result(y, (x,), lambda g: (g * y * (1.0 - y),))


def activation(x: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# losses


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy with ``pred`` clamped to [1e-7, 1 - 1e-7]."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise InvalidShapeError(f"bce_loss: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    y = target.data
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)

    def bwd(g):
        gp = float(g) / n * (p - y) / (p * (1.0 - p))
        return (np.where(inside, gp, 0.0), None)

    return result(np.asarray(loss), (pred, target), bwd)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    soft = np.exp(out)
    return result(out, (logits,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    lsm = log_softmax(logits)
    rows = np.arange(labels.size)
    picked = lsm.data.reshape(-1, lsm.shape[-1])[rows, labels.reshape(-1)]
    n = labels.size

    def bwd(g):
        gl = np.zeros_like(lsm.data).reshape(-1, lsm.shape[-1])
        gl[rows, labels.reshape(-1)] = -float(g) / n
        return (gl.reshape(lsm.shape),)

    return result(np.asarray(-picked.mean()), (lsm,), bwd)
