"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

from .dataio import LabelMode

SEED_ENV = "GAZE_GAN_SEED"


class ConfigError(ValueError):
    pass


def _opt(default, doc):
    return field(default=default, metadata={"doc": doc})


@dataclass
class RunConfig:
    data_dir: str = field(metadata={"doc": "directory of per-participant recording CSVs"})
    personality_file: str = field(metadata={"doc": "CSV with participant_id,O,C,E,A,N"})
    output_dir: str = field(metadata={"doc": "where every command writes its artifacts"})

    mode: str = _opt("all_dims", "all_dims or single_dim:<O|C|E|A|N>")
    window_stride: int = _opt(60, "frames between window starts")
    test_fraction: float = _opt(0.2, "share of participants held out for testing")
    seed: int = _opt(0, "master seed (overridden by $GAZE_GAN_SEED)")

    batch_size: int = _opt(64, "GAN mini-batch size")
    lr_g: float = _opt(1e-4, "generator Adam learning rate")
    lr_d: float = _opt(1e-4, "discriminator Adam learning rate")
    beta1: float = _opt(0.9, "Adam beta1")
    beta2: float = _opt(0.999, "Adam beta2")
    epochs: int = _opt(50, "GAN training epochs")
    latent_dim: int = _opt(100, "generator noise dimension")
    embed_dim: int = _opt(50, "label embedding size")
    g_channels: str = _opt("128,64", "generator channels after projection and first upsampling")
    d_channels: str = _opt("64,128", "discriminator conv channels")
    g_loss_form: str = _opt("non_saturating", "non_saturating or minimax")
    fake_labels: str = _opt("uniform", "uniform or empirical label sampling for fakes")
    checkpoint_every: int = _opt(10, "epochs between GAN checkpoints (0 = only at the end)")

    codec_latent_dim: int = _opt(30, "blink autoencoder latent size")
    codec_hidden: int = _opt(128, "blink autoencoder hidden width")
    codec_epochs: int = _opt(60, "blink autoencoder epochs")
    codec_lr: float = _opt(1e-3, "blink autoencoder learning rate")

    classifier_channels: str = _opt("16,32", "evaluation classifier conv channels")
    classifier_epochs: int = _opt(30, "evaluation classifier epochs")
    classifier_lr: float = _opt(1e-3, "evaluation classifier learning rate")
    eval_samples: int = _opt(1000, "synthetic windows per class during eval")

    eye_x: float = _opt(0.0, "eye midpoint x (world units)")
    eye_y: float = _opt(0.0, "eye midpoint y")
    eye_z: float = _opt(0.0, "eye midpoint z")
    rig_distance: float = _opt(1.0, "viewing distance d")
    h_fov: float = _opt(60.0, "horizontal field of view, degrees")
    v_fov: float = _opt(46.0, "vertical field of view, degrees")
    baseline_mm: float = _opt(0.0, "pupil baseline; 0 uses the training-set mean")
    eyelid_slope: float = _opt(-1.0, "eyelid weight slope in gaze y")
    eyelid_intercept: float = _opt(1.0, "eyelid weight at y = 0")

    def __post_init__(self):
        try:
            LabelMode.parse(self.mode)
            self.g_tuple, self.d_tuple, self.classifier_tuple
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        for name in ("window_stride", "batch_size", "epochs", "eval_samples", "codec_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def label_mode(self) -> LabelMode:
        return LabelMode.parse(self.mode)

    @staticmethod
    def _pair(text: str) -> tuple[int, int]:
        parts = [int(p) for p in text.split(",")]
        if len(parts) != 2 or min(parts) < 1:
            raise ValueError(f"expected two positive channel counts, got {text!r}")
        return parts[0], parts[1]

    @property
    def g_tuple(self):
        return self._pair(self.g_channels)

    @property
    def d_tuple(self):
        return self._pair(self.d_channels)

    @property
    def classifier_tuple(self):
        return self._pair(self.classifier_channels)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def _coerce(name: str, typ, raw: str):
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config_text(text: str, base_dir: Path | None = None) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, known[key].type, raw)
    missing = [n for n, f in known.items() if f.default is MISSING and n not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    if base_dir is not None:
        for key in ("data_dir", "personality_file", "output_dir"):
            p = Path(values[key])
            if not p.is_absolute():
                values[key] = str(base_dir / p)
    if os.environ.get(SEED_ENV):
        values["seed"] = _coerce(SEED_ENV, int, os.environ[SEED_ENV])
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, path.parent)


def describe() -> str:
    """Every key with its default and meaning, as a commented config file."""
    lines = []
    for f in fields(RunConfig):
        default = "<required>" if f.default is MISSING else f.default
        lines.append(f"# {f.metadata['doc']}")
        lines.append(f"{f.name} = {default}")
    return "\n".join(lines) + "\n"
