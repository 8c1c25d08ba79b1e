"""Dense autoencoder for the binary blink channel.

The decoder turns a continuous latent into a per-frame blink probability and
sits between the generator and discriminator so blink output stays
differentiable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_io
from . import numerics as nx
from .numerics import ContractError, GradTape, Tensor

log = logging.getLogger(__name__)

WINDOW = 300


@dataclass
class BlinkCodecParams:
    params: dict[str, Tensor]
    latent_dim: int = 30
    hidden: int = 128
    history: list[dict] = field(default_factory=list)

    @classmethod
    def init(cls, rng: np.random.Generator, latent_dim: int = 30, hidden: int = 128,
             length: int = WINDOW) -> "BlinkCodecParams":
        # Glorot-scaled weights; N(0, 0.02) stalls the 300-wide dense stack
        def w(shape):
            return nx.Tensor(rng.normal(0.0, np.sqrt(2.0 / sum(shape)), size=shape),
                             requires_grad=True)

        params = {
            "enc_w1": w((hidden, length)),
            "enc_b1": nx.init_zeros(hidden),
            "enc_w2": w((latent_dim, hidden)),
            "enc_b2": nx.init_zeros(latent_dim),
            "dec_w1": w((hidden, latent_dim)),
            "dec_b1": nx.init_zeros(hidden),
            "dec_w2": w((length, hidden)),
            "dec_b2": nx.init_zeros(length),
        }
        for name, t in params.items():
            t.name = name
        return cls(params, latent_dim, hidden)

    def freeze(self) -> "BlinkCodecParams":
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None
        return self


def _encode(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    h = nx.leaky_relu(nx.dense(x, p["enc_w1"], p["enc_b1"]), 0.2)
    return nx.dense(h, p["enc_w2"], p["enc_b2"])


def decode(latent, codec: BlinkCodecParams) -> Tensor:
    """Blink probabilities in (0, 1) for a (L,) or (B, L) latent.

    Differentiable with respect to ``latent`` when it requires grad.
    """
    p = codec.params
    z = nx.Tensor(latent) if not isinstance(latent, Tensor) else latent
    h = nx.leaky_relu(nx.dense(z, p["dec_w1"], p["dec_b1"]), 0.2)
    return nx.sigmoid(nx.dense(h, p["dec_w2"], p["dec_b2"]))


def encode(blink, codec: BlinkCodecParams) -> np.ndarray:
    blink = np.asarray(blink, dtype=float)
    if not np.all((blink == 0) | (blink == 1)):
        raise ContractError("encode: blink channel must be binary")
    return _encode(Tensor(blink), codec.params).data


def binarize(continuous, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(continuous) >= threshold).astype(float)


def reconstruct(blink, codec: BlinkCodecParams) -> np.ndarray:
    return binarize(decode(encode(blink, codec), codec).data)


def frame_accuracy(blink, codec: BlinkCodecParams) -> float:
    blink = np.asarray(blink, dtype=float)
    return float(np.mean(reconstruct(blink, codec) == blink))


@dataclass
class CodecConfig:
    latent_dim: int = 30
    hidden: int = 128
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


def _loss(batch: np.ndarray, codec: BlinkCodecParams) -> Tensor:
    x = Tensor(batch)
    return nx.bce_loss(decode(_encode(x, codec.params), codec), x)


def train_autoencoder(blinks: np.ndarray, config: CodecConfig | None = None) -> BlinkCodecParams:
    """Fit the codec by minimising reconstruction BCE with Adam."""
    config = config or CodecConfig()
    blinks = np.asarray(blinks, dtype=float)
    if blinks.ndim != 2 or len(blinks) == 0:
        raise ValueError("train_autoencoder needs at least one (300,) blink window")
    if not np.all((blinks == 0) | (blinks == 1)):
        raise ContractError("train_autoencoder: blink windows must be binary")
    rng = np.random.default_rng(config.seed)
    codec = BlinkCodecParams.init(rng, config.latent_dim, config.hidden, blinks.shape[1])
    opt = nx.Adam(codec.params, lr=config.lr)
    n = len(blinks)
    bs = min(config.batch_size, n)
    codec.history.append({"epoch": 0, "loss": _loss(blinks, codec).item(),
                          "accuracy": _batch_accuracy(blinks, codec)})
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            batch = blinks[order[start : start + bs]]
            opt.zero_grad()
            with GradTape() as tape:
                loss = _loss(batch, codec)
            tape.backward(loss)
            opt.step()
        entry = {"epoch": epoch, "loss": _loss(blinks, codec).item(),
                 "accuracy": _batch_accuracy(blinks, codec)}
        codec.history.append(entry)
        log.info("codec epoch %d loss %.6f acc %.5f", epoch, entry["loss"], entry["accuracy"])
    opt.zero_grad()
    return codec


def _batch_accuracy(blinks: np.ndarray, codec: BlinkCodecParams) -> float:
    return float(np.mean(binarize(decode(_encode(Tensor(blinks), codec.params), codec).data)
                         == blinks))


def save_codec(codec: BlinkCodecParams, path) -> str:
    ck = ckpt_io.ModelCheckpoint(
        "codec", "blink", {k: t.data for k, t in codec.params.items()},
        epoch=max(len(codec.history) - 1, 0),
        metadata={"latent_dim": codec.latent_dim, "hidden": codec.hidden},
    )
    return ckpt_io.save(ck, path)


def load_codec(path) -> BlinkCodecParams:
    ck = ckpt_io.load(path, "codec")
    params = {k: Tensor(v.copy(), name=k) for k, v in ck.params.items()}
    return BlinkCodecParams(params, ck.metadata["latent_dim"], ck.metadata["hidden"])
