"""Classifier-based evaluation: inception score and per-class average curves."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import numerics as nx
from .dataio import GX, GY, PUPIL, SAMPLE_RATE, WINDOW
from .numerics import GradTape, Tensor

log = logging.getLogger(__name__)


class InsufficientClassError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    channels: tuple[int, int] = (16, 32)
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    holdout: float = 0.2
    seed: int = 0


@dataclass
class ClassifierParams:
    """1D-CNN over normalised windows; ``class_map[k]`` is the label of output k."""

    params: dict[str, Tensor]
    class_map: list[int]
    channels: tuple[int, int] = (16, 32)
    heldout_accuracy: float = float("nan")
    train_hashes: frozenset = field(default_factory=frozenset)

    @property
    def n_classes(self) -> int:
        return len(self.class_map)

    @classmethod
    def init(cls, rng, class_map, channels=(16, 32)) -> "ClassifierParams":
        c0, c1 = channels
        K = len(class_map)
        params = {
            "conv1_w": nx.init_normal(rng, (c0, 4, 4), np.sqrt(2.0 / (4 * 4)), "conv1_w"),
            "conv1_b": nx.init_zeros(c0, "conv1_b"),
            "conv2_w": nx.init_normal(rng, (c1, c0, 4), np.sqrt(2.0 / (c0 * 4)), "conv2_w"),
            "conv2_b": nx.init_zeros(c1, "conv2_b"),
            "out_w": nx.init_normal(rng, (K, c1 * WINDOW // 4), 0.01, "out_w"),
            "out_b": nx.init_zeros(K, "out_b"),
        }
        return cls(params, [int(c) for c in class_map], tuple(channels))

    def logits(self, windows: np.ndarray) -> Tensor:
        p = self.params
        x = Tensor(np.ascontiguousarray(np.asarray(windows, dtype=float).transpose(0, 2, 1)))
        h = nx.leaky_relu(nx.conv1d(x, p["conv1_w"], p["conv1_b"], 2, 1))
        h = nx.leaky_relu(nx.conv1d(h, p["conv2_w"], p["conv2_b"], 2, 1))
        return nx.dense(nx.reshape(h, (len(windows), -1)), p["out_w"], p["out_b"])

    def predict_proba(self, windows: np.ndarray, chunk: int = 500) -> np.ndarray:
        """Class probabilities, rows summing to one, for normalised windows."""
        windows = np.asarray(windows, dtype=float)
        parts = [nx.softmax(self.logits(windows[i : i + chunk]).data)
                 for i in range(0, len(windows), chunk)]
        return np.concatenate(parts) if parts else np.zeros((0, self.n_classes))

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return np.asarray(self.class_map)[self.predict_proba(windows).argmax(axis=1)]

    def accuracy(self, windows: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(windows) == np.asarray(labels)))


def window_digest(window: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(window, dtype=np.float64).tobytes()).hexdigest()


def _stratified_holdout(labels, fraction, rng):
    hold = np.zeros(len(labels), bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = min(len(idx) - 1, max(1, int(round(fraction * len(idx)))))
        hold[rng.choice(idx, size=k, replace=False)] = True
    return hold


def train_classifier(windows: np.ndarray, labels: np.ndarray,
                     config: ClassifierConfig | None = None) -> ClassifierParams:
    """Fit the classifier on real normalised windows.

    A stratified slice of the input is held out to report accuracy; every
    class therefore needs at least two windows.
    """
    config = config or ClassifierConfig()
    windows = np.asarray(windows, dtype=float)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    for c, n in zip(classes, counts):
        if n < 2:
            raise InsufficientClassError(f"class {int(c)} has {n} window(s); need at least 2")
    rng = np.random.default_rng(config.seed)
    hold = _stratified_holdout(labels, config.holdout, rng)
    x_tr, y_tr = windows[~hold], labels[~hold]
    to_out = {int(c): k for k, c in enumerate(classes)}
    y_idx = np.array([to_out[int(c)] for c in y_tr])
    clf = ClassifierParams.init(rng, classes, config.channels)
    opt = nx.Adam(clf.params, lr=config.lr)
    n = len(x_tr)
    bs = min(config.batch_size, n)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            idx = order[start : start + bs]
            opt.zero_grad()
            with GradTape() as tape:
                loss = nx.cross_entropy(clf.logits(x_tr[idx]), y_idx[idx])
            tape.backward(loss)
            opt.step()
        log.debug("classifier epoch %d loss %.5f", epoch + 1, loss.item())
    opt.zero_grad()
    clf.heldout_accuracy = clf.accuracy(windows[hold], labels[hold])
    clf.train_hashes = frozenset(window_digest(w) for w in x_tr)
    log.info("classifier held-out accuracy %.4f", clf.heldout_accuracy)
    return clf


def inception_score_from_probs(probs: np.ndarray) -> float:
    """exp of the mean KL divergence from each row to the mean row."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValueError("inception score needs a non-empty (n, K) probability matrix")
    marginal = probs.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * (np.log(probs) - np.log(marginal)), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))


def inception_score(classifier: ClassifierParams, windows: np.ndarray) -> float:
    if len(windows) == 0:
        raise ValueError("inception score of an empty set")
    return inception_score_from_probs(classifier.predict_proba(windows))


@dataclass
class ClassCurve:
    """Per-timestep means of one class; ``kind`` is 'trajectory' or 'pupil'."""

    class_id: str
    kind: str
    means: np.ndarray
    n: int

    @property
    def channels(self) -> tuple[str, ...]:
        return ("mean_x", "mean_y") if self.kind == "trajectory" else ("mean_pupil",)


def _check_set(windows) -> np.ndarray:
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or len(windows) == 0:
        raise ValueError("average over an empty window set")
    return windows


def average_trajectory(windows, class_id: str = "") -> ClassCurve:
    w = _check_set(windows)
    return ClassCurve(class_id, "trajectory", w[:, :, [GX, GY]].mean(axis=0), len(w))


def average_pupil(windows, class_id: str = "") -> ClassCurve:
    w = _check_set(windows)
    return ClassCurve(class_id, "pupil", w[:, :, [PUPIL]].mean(axis=0), len(w))


def emit_plot_data(curves, out_dir) -> list[Path]:
    """One ``<kind>_<class_id>.csv`` per curve with a seconds column."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in curves:
        path = out_dir / f"{c.kind}_{c.class_id}.csv"
        lines = ["t," + ",".join(c.channels)]
        for k, row in enumerate(c.means):
            lines.append(",".join([f"{k / SAMPLE_RATE:.17g}"] + [f"{v:.17g}" for v in row]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(path)
    return paths


def save_classifier(clf: ClassifierParams, path, mode: str) -> str:
    ck = ckpt_io.ModelCheckpoint(
        "classifier", mode, {k: t.data for k, t in clf.params.items()},
        metadata={"class_map": clf.class_map, "channels": list(clf.channels),
                  "heldout_accuracy": clf.heldout_accuracy},
    )
    return ckpt_io.save(ck, path)


def load_classifier(path) -> ClassifierParams:
    ck = ckpt_io.load(path, "classifier")
    params = {k: Tensor(v.copy(), name=k) for k, v in ck.params.items()}
    return ClassifierParams(params, list(ck.metadata["class_map"]),
                            tuple(ck.metadata["channels"]), ck.metadata["heldout_accuracy"])
