"""Personality-conditioned generator/discriminator and the adversarial loop.

Networks work channels-first, ``(B, 4, 300)``; the public ``generate`` and
``discriminate`` helpers take and return ``(300, 4)`` windows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import numerics as nx
from .blinkcodec import BlinkCodecParams, binarize, decode
from .dataio import ALL_DIMS, WINDOW, ClassLabel, LabelMode, NormStats, denormalize
from .numerics import GradTape, Tensor

log = logging.getLogger(__name__)

CHANNELS = 4
CONTINUOUS = 3


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg: str, checkpoint_dir: Path | None = None):
        super().__init__(msg)
        self.checkpoint_dir = checkpoint_dir


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 50
    seed: int = 0
    mode: str = "all_dims"
    latent_dim: int = 100
    embed_dim: int = 50
    g_channels: tuple[int, int] = (128, 64)
    d_channels: tuple[int, int] = (64, 128)
    g_loss_form: str = "non_saturating"
    fake_labels: str = "uniform"
    checkpoint_every: int = 0

    def __post_init__(self):
        self.g_channels = tuple(self.g_channels)
        self.d_channels = tuple(self.d_channels)
        for name in ("batch_size", "epochs", "latent_dim", "embed_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.g_loss_form not in ("non_saturating", "minimax"):
            raise ValueError(f"unknown g_loss_form {self.g_loss_form!r}")
        if self.fake_labels not in ("uniform", "empirical"):
            raise ValueError(f"unknown fake_labels {self.fake_labels!r}")
        LabelMode.parse(self.mode)

    @property
    def label_mode(self) -> LabelMode:
        return LabelMode.parse(self.mode)


def _w(rng, shape, name):
    return nx.init_normal(rng, shape, 0.02, name)


def _embedding(rng, n_classes, dim, name):
    # unit-scale rows so classes are separable from the first step
    return Tensor(rng.normal(0.0, 1.0, size=(n_classes, dim)), requires_grad=True, name=name)


def _check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"class labels must be integers in [0, {n_classes})")
    return labels


def _set_trainable(params: dict[str, Tensor], flag: bool) -> None:
    for t in params.values():
        t.requires_grad = flag


@dataclass
class Generator:
    params: dict[str, Tensor]
    n_classes: int
    latent_dim: int = 100
    embed_dim: int = 50
    channels: tuple[int, int] = (128, 64)
    codec_latent: int = 30

    base_len = WINDOW // 4

    @classmethod
    def init(cls, rng, n_classes: int, latent_dim=100, embed_dim=50, channels=(128, 64),
             codec_latent=30) -> "Generator":
        c0, c1 = channels
        flat = c0 * cls.base_len
        params = {
            "embed": _embedding(rng, n_classes, embed_dim, "embed"),
            "proj_w": _w(rng, (flat, latent_dim + embed_dim), "proj_w"),
            "proj_b": nx.init_zeros(flat, "proj_b"),
            "up1_w": _w(rng, (c0, c1, 4), "up1_w"),
            "up1_b": nx.init_zeros(c1, "up1_b"),
            "up2_w": _w(rng, (c1, CONTINUOUS, 4), "up2_w"),
            "up2_b": nx.init_zeros(CONTINUOUS, "up2_b"),
            "blink_w": _w(rng, (codec_latent, flat), "blink_w"),
            "blink_b": nx.init_zeros(codec_latent, "blink_b"),
        }
        return cls(params, n_classes, latent_dim, embed_dim, tuple(channels), codec_latent)

    def forward(self, z: Tensor, labels, codec: BlinkCodecParams) -> Tensor:
        """(B, latent) noise and B labels to a (B, 4, 300) normalised batch."""
        p = self.params
        labels = _check_labels(labels, self.n_classes)
        B = z.shape[0]
        emb = nx.embedding_lookup(p["embed"], labels)
        h = nx.leaky_relu(nx.dense(nx.concat([z, emb], axis=1), p["proj_w"], p["proj_b"]))
        h0 = nx.reshape(h, (B, self.channels[0], self.base_len))
        h1 = nx.leaky_relu(nx.conv1d_transpose(h0, p["up1_w"], p["up1_b"], 2, 1))
        cont = nx.tanh(nx.conv1d_transpose(h1, p["up2_w"], p["up2_b"], 2, 1))
        blink_code = nx.dense(h, p["blink_w"], p["blink_b"])
        blink = decode(blink_code, codec) * 2.0 - 1.0
        return nx.concat([cont, nx.reshape(blink, (B, 1, WINDOW))], axis=1)


@dataclass
class Discriminator:
    params: dict[str, Tensor]
    n_classes: int
    embed_dim: int = 50
    channels: tuple[int, int] = (64, 128)

    @classmethod
    def init(cls, rng, n_classes: int, embed_dim=50, channels=(64, 128)) -> "Discriminator":
        c0, c1 = channels
        params = {
            "embed": _embedding(rng, n_classes, embed_dim, "embed"),
            "label_w": _w(rng, (WINDOW, embed_dim), "label_w"),
            "label_b": nx.init_zeros(WINDOW, "label_b"),
            "conv1_w": _w(rng, (c0, CHANNELS + 1, 4), "conv1_w"),
            "conv1_b": nx.init_zeros(c0, "conv1_b"),
            "conv2_w": _w(rng, (c1, c0, 4), "conv2_w"),
            "conv2_b": nx.init_zeros(c1, "conv2_b"),
            "out_w": _w(rng, (1, c1 * WINDOW // 4), "out_w"),
            "out_b": nx.init_zeros(1, "out_b"),
        }
        return cls(params, n_classes, embed_dim, tuple(channels))

    def forward(self, x: Tensor, labels) -> Tensor:
        """(B, 4, 300) batch and labels to (B, 1) probabilities of being real."""
        p = self.params
        labels = _check_labels(labels, self.n_classes)
        B = x.shape[0]
        emb = nx.embedding_lookup(p["embed"], labels)
        lab = nx.reshape(nx.dense(emb, p["label_w"], p["label_b"]), (B, 1, WINDOW))
        h = nx.concat([x, lab], axis=1)
        h = nx.leaky_relu(nx.conv1d(h, p["conv1_w"], p["conv1_b"], 2, 1))
        h = nx.leaky_relu(nx.conv1d(h, p["conv2_w"], p["conv2_b"], 2, 1))
        h = nx.reshape(h, (B, -1))
        return nx.sigmoid(nx.dense(h, p["out_w"], p["out_b"]))


def _label_index(label, n_classes: int) -> int:
    idx = label.index if isinstance(label, ClassLabel) else int(label)
    if not 0 <= idx < n_classes:
        raise ValueError(f"class index {idx} invalid for a {n_classes}-class model")
    return idx


def generate(z, label, g: Generator, codec: BlinkCodecParams) -> np.ndarray:
    """One normalised (300, 4) window for noise ``z`` and ``label``."""
    idx = _label_index(label, g.n_classes)
    out = g.forward(Tensor(np.asarray(z, dtype=float).reshape(1, -1)), [idx], codec)
    return out.data[0].T.copy()


def discriminate(window, label, d: Discriminator) -> float:
    idx = _label_index(label, d.n_classes)
    x = Tensor(np.asarray(window, dtype=float).T[None].copy())
    return float(d.forward(x, [idx]).data[0, 0])


def d_loss(real: Tensor, fake: Tensor, labels, d: Discriminator, fake_labels=None) -> Tensor:
    """BCE of D on real (target 1) plus fake (target 0); ``fake`` is detached."""
    if real.shape[0] != fake.shape[0]:
        raise ValueError(f"real batch {real.shape[0]} != fake batch {fake.shape[0]}")
    fake_labels = labels if fake_labels is None else fake_labels
    B = real.shape[0]
    p_real = d.forward(real, labels)
    p_fake = d.forward(Tensor(fake.data), fake_labels)
    return nx.bce_loss(p_real, np.ones((B, 1))) + nx.bce_loss(p_fake, np.zeros((B, 1)))


def g_loss(z: Tensor, labels, g: Generator, d: Discriminator, codec: BlinkCodecParams,
           form: str = "non_saturating") -> Tensor:
    p_fake = d.forward(g.forward(z, labels, codec), labels)
    B = z.shape[0]
    if form == "non_saturating":
        return nx.bce_loss(p_fake, np.ones((B, 1)))
    # literal value-function form: minimise mean log(1 - D(G(z, y), y))
    return nx.bce_loss(p_fake, np.zeros((B, 1))) * -1.0


@dataclass
class GanState:
    g: Generator
    d: Discriminator
    opt_g: nx.Adam
    opt_d: nx.Adam
    rng: np.random.Generator
    epoch: int = 0
    seen_classes: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    label_probs: np.ndarray | None = None
    log: list[dict] = field(default_factory=list)


def init_state(config: TrainConfig, codec: BlinkCodecParams, labels: np.ndarray) -> GanState:
    rng = np.random.default_rng(config.seed)
    n_classes = config.label_mode.n_classes
    g = Generator.init(rng, n_classes, config.latent_dim, config.embed_dim,
                       config.g_channels, codec.latent_dim)
    d = Discriminator.init(rng, n_classes, config.embed_dim, config.d_channels)
    seen, counts = np.unique(labels, return_counts=True)
    probs = counts / counts.sum() if config.fake_labels == "empirical" else None
    return GanState(
        g, d,
        nx.Adam(g.params, config.lr_g, config.beta1, config.beta2),
        nx.Adam(d.params, config.lr_d, config.beta1, config.beta2),
        rng, 0, seen, probs,
    )


def _sample_fake_labels(state: GanState, n: int) -> np.ndarray:
    return state.rng.choice(state.seen_classes, size=n, p=state.label_probs)


def train_step(state: GanState, real: np.ndarray, real_labels: np.ndarray,
               codec: BlinkCodecParams, config: TrainConfig) -> tuple[float, float]:
    """One discriminator update followed by one generator update."""
    B = len(real)
    g, d = state.g, state.d

    # discriminator: generator runs outside the tape
    z = state.rng.standard_normal((B, config.latent_dim))
    fake_labels = _sample_fake_labels(state, B)
    fake = g.forward(Tensor(z), fake_labels, codec)
    state.opt_d.zero_grad()
    with GradTape() as tape:
        loss_d = d_loss(Tensor(real), fake, real_labels, d, fake_labels)
    tape.backward(loss_d)
    state.opt_d.step()

    # generator: gradients pass through D and the frozen decoder, D stays fixed
    z = state.rng.standard_normal((B, config.latent_dim))
    fake_labels = _sample_fake_labels(state, B)
    _set_trainable(d.params, False)
    state.opt_g.zero_grad()
    with GradTape() as tape:
        loss_g = g_loss(Tensor(z), fake_labels, g, d, codec, config.g_loss_form)
    tape.backward(loss_g)
    state.opt_g.step()
    _set_trainable(d.params, True)
    return loss_d.item(), loss_g.item()


def save_state(state: GanState, config: TrainConfig, out_dir) -> dict[str, str]:
    """Write generator and discriminator checkpoints; returns file hashes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = ckpt_io.rng_state(state.rng)
    meta = {
        "config": _config_dict(config),
        "seen_classes": [int(c) for c in state.seen_classes],
        "label_probs": None if state.label_probs is None else list(map(float, state.label_probs)),
        "log": state.log,
    }
    hashes = {}
    for tag, net, opt in (("generator", state.g, state.opt_g),
                          ("discriminator", state.d, state.opt_d)):
        ck = ckpt_io.ModelCheckpoint(
            tag, config.mode, {k: t.data for k, t in net.params.items()},
            opt.states, rng, state.epoch, meta,
        )
        hashes[tag] = ckpt_io.save(ck, out_dir / f"{tag}.ggan")
    return hashes


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["g_channels"] = list(config.g_channels)
    d["d_channels"] = list(config.d_channels)
    return d


def load_generator(path) -> tuple[Generator, dict]:
    ck = ckpt_io.load(path, "generator")
    cfg = ck.metadata["config"]
    n_classes = ck.params["embed"].shape[0]
    g = Generator(
        {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in ck.params.items()},
        n_classes, cfg["latent_dim"], cfg["embed_dim"], tuple(cfg["g_channels"]),
        ck.params["blink_w"].shape[0],
    )
    return g, ck.metadata


def load_state(ckpt_dir, codec: BlinkCodecParams) -> tuple[GanState, TrainConfig]:
    ckpt_dir = Path(ckpt_dir)
    gk = ckpt_io.load(ckpt_dir / "generator.ggan", "generator")
    dk = ckpt_io.load(ckpt_dir / "discriminator.ggan", "discriminator")
    config = TrainConfig(**gk.metadata["config"])
    g, _ = load_generator(ckpt_dir / "generator.ggan")
    d = Discriminator(
        {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in dk.params.items()},
        dk.params["embed"].shape[0], config.embed_dim, config.d_channels,
    )
    probs = gk.metadata["label_probs"]
    state = GanState(
        g, d,
        nx.Adam(g.params, config.lr_g, config.beta1, config.beta2, states=dict(gk.optimizer)),
        nx.Adam(d.params, config.lr_d, config.beta1, config.beta2, states=dict(dk.optimizer)),
        ckpt_io.restore_rng(gk.rng_state), gk.epoch,
        np.array(gk.metadata["seen_classes"]),
        None if probs is None else np.array(probs),
        list(gk.metadata["log"]),
    )
    return state, config


def discriminator_input(frames: np.ndarray) -> np.ndarray:
    """Normalised (n, 300, 4) windows to the (n, 4, 300) layout D consumes.

    Real blinks in {0, 1} get the same ``2v - 1`` map the generator applies
    to decoder output, so both sides share one blink scale.
    """
    data = np.ascontiguousarray(np.asarray(frames, dtype=float).transpose(0, 2, 1))
    data[:, 3, :] = 2.0 * data[:, 3, :] - 1.0
    return data


def train_gan(frames: np.ndarray, labels: np.ndarray, codec: BlinkCodecParams,
              config: TrainConfig, checkpoint_dir=None, state: GanState | None = None,
              epochs: int | None = None) -> GanState:
    """Adversarial training on normalised ``(n, 300, 4)`` windows.

    Pass ``state`` (from :func:`load_state`) to resume. ``epochs`` caps the
    number of epochs run in this call; training stops at ``config.epochs``.
    """
    frames = np.asarray(frames, dtype=float)
    labels = np.asarray(labels)
    if len(frames) == 0:
        raise ValueError("train_gan: empty dataset")
    codec.freeze()
    data = discriminator_input(frames)
    n = len(data)
    B = min(config.batch_size, n)
    if state is None:
        state = init_state(config, codec, labels)
    stop = config.epochs if epochs is None else min(config.epochs, state.epoch + epochs)
    while state.epoch < stop:
        order = state.rng.permutation(n)
        d_losses, g_losses = [], []
        for start in range(0, n - B + 1, B):
            idx = order[start : start + B]
            ld, lg = train_step(state, data[idx], labels[idx], codec, config)
            if not (math.isfinite(ld) and math.isfinite(lg)):
                diag = None
                if checkpoint_dir is not None:
                    diag = Path(checkpoint_dir) / "diverged"
                    save_state(state, config, diag)
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {state.epoch + 1} (d={ld}, g={lg})", diag
                )
            d_losses.append(ld)
            g_losses.append(lg)
        state.epoch += 1
        entry = {"epoch": state.epoch, "steps": len(d_losses),
                 "d_loss": float(np.mean(d_losses)), "g_loss": float(np.mean(g_losses))}
        state.log.append(entry)
        log.info("epoch %d d_loss %.5f g_loss %.5f", state.epoch, entry["d_loss"], entry["g_loss"])
        if checkpoint_dir is not None and config.checkpoint_every and (
            state.epoch % config.checkpoint_every == 0 or state.epoch == config.epochs
        ):
            save_state(state, config, checkpoint_dir)
    return state


def synthesize_batch(n: int, label, g: Generator, codec: BlinkCodecParams, stats: NormStats,
                     rng: np.random.Generator, chunk: int = 250) -> np.ndarray:
    """``n`` device-space (300, 4) windows for one class.

    Gaze is clamped to [0, 1] after denormalising and the blink channel is
    binarised. Class indices unseen during training are accepted.
    """
    idx = _label_index(label, g.n_classes)
    out = []
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        z = rng.standard_normal((m, g.latent_dim))
        batch = g.forward(Tensor(z), np.full(m, idx), codec).data.transpose(0, 2, 1)
        out.append(batch)
    if not out:
        return np.zeros((0, WINDOW, CHANNELS))
    norm = np.concatenate(out)
    dev = denormalize(norm, stats, binarize_blink=False)
    dev[..., 0:2] = np.clip(dev[..., 0:2], 0.0, 1.0)
    # tanh stays inside (-1, 1), so pupil lands strictly above pupil_min
    dev[..., 2] = np.maximum(dev[..., 2], np.nextafter(stats.pupil_min, np.inf))
    dev[..., 3] = binarize((norm[..., 3] + 1.0) / 2.0)
    return dev


__all__ = [
    "ALL_DIMS",
    "Discriminator",
    "GanState",
    "Generator",
    "TrainConfig",
    "TrainingDivergedError",
    "d_loss",
    "discriminate",
    "g_loss",
    "generate",
    "init_state",
    "load_generator",
    "load_state",
    "save_state",
    "synthesize_batch",
    "train_gan",
    "train_step",
]
