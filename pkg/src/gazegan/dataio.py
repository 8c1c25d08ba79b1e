"""Recording ingestion, windowing, quality filtering, normalisation and labels.

Windows are ``(300, 4)`` float arrays with channel order
``gaze_x, gaze_y, pupil, blink``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

WINDOW = 300
SAMPLE_RATE = 60
DEFAULT_STRIDE = 60
DIMENSIONS = ("O", "C", "E", "A", "N")
BIN_NAMES = ("low", "medium", "high")
N_CLASSES_ALL = 3**5

GX, GY, PUPIL, BLINK = range(4)


class ParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


class SchemaError(ValueError):
    pass


class DegenerateStatsError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class GazeSample:
    t: float
    gaze_x: float
    gaze_y: float
    pupil: float
    blink: int


@dataclass
class GazeWindow:
    frames: np.ndarray
    label: "ClassLabel"
    participant_id: str


@dataclass(frozen=True)
class PersonalityProfile:
    """Ternary bins (0 low, 1 medium, 2 high) in O, C, E, A, N order."""

    bins: tuple[int, int, int, int, int]

    def __post_init__(self):
        if len(self.bins) != 5 or any(b not in (0, 1, 2) for b in self.bins):
            raise ValueError(f"personality bins must be five values in {{0,1,2}}: {self.bins}")

    def bin(self, dim: str) -> int:
        return self.bins[DIMENSIONS.index(dim)]


@dataclass(frozen=True)
class LabelMode:
    """``all_dims`` (243 classes) or ``single_dim`` over one trait (3 classes)."""

    kind: str = "all_dims"
    dim: str | None = None

    def __post_init__(self):
        if self.kind == "all_dims" and self.dim is None:
            return
        if self.kind == "single_dim" and self.dim in DIMENSIONS:
            return
        raise ValueError(f"invalid label mode {self.kind!r}/{self.dim!r}")

    @property
    def n_classes(self) -> int:
        return N_CLASSES_ALL if self.kind == "all_dims" else 3

    @classmethod
    def parse(cls, text: str) -> "LabelMode":
        text = text.strip()
        if text == "all_dims":
            return cls()
        if text.startswith("single_dim:"):
            return cls("single_dim", text.split(":", 1)[1].strip().upper())
        raise ValueError(f"mode must be all_dims or single_dim:<O|C|E|A|N>, got {text!r}")

    def __str__(self) -> str:
        return "all_dims" if self.kind == "all_dims" else f"single_dim:{self.dim}"


ALL_DIMS = LabelMode()


@dataclass(frozen=True)
class ClassLabel:
    mode: LabelMode
    index: int

    def __post_init__(self):
        if not 0 <= self.index < self.mode.n_classes:
            raise ValueError(f"class index {self.index} out of range for {self.mode}")


@dataclass(frozen=True)
class NormStats:
    pupil_min: float
    pupil_max: float

    def __post_init__(self):
        if not self.pupil_min < self.pupil_max:
            raise DegenerateStatsError(
                f"pupil_min ({self.pupil_min}) must be below pupil_max ({self.pupil_max})"
            )


# parsing

_REQUIRED = ("t", "gaze_x", "gaze_y", "blink")


def parse_recording(path, participant_id: str | None = None) -> list[GazeSample]:
    """Read one recording CSV.

    Accepts either a single ``pupil_left`` (or ``pupil``) column or both
    ``pupil_left`` and ``pupil_right``, in which case the two are averaged.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header") from None
        missing = [c for c in _REQUIRED if c not in header]
        pupil_cols = [c for c in ("pupil_left", "pupil_right") if c in header]
        if not pupil_cols and "pupil" in header:
            pupil_cols = ["pupil"]
        if missing or not pupil_cols:
            raise SchemaError(f"{path}: missing columns {missing or ['pupil_left']}")
        col = {name: header.index(name) for name in header}
        pcols = [col[c] for c in pupil_cols]
        log.debug(
            "%s (%s): pupil from %s", path.name, participant_id, "+".join(pupil_cols)
        )
        samples: list[GazeSample] = []
        prev_t = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                t = float(row[col["t"]])
                x = float(row[col["gaze_x"]])
                y = float(row[col["gaze_y"]])
                pupil = sum(float(row[i]) for i in pcols) / len(pcols)
                blink_raw = row[col["blink"]].strip()
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if blink_raw not in ("0", "1"):
                raise ParseError(path, lineno, f"blink must be 0 or 1, got {blink_raw!r}")
            if t < prev_t:
                raise ParseError(path, lineno, f"time goes backwards ({t} < {prev_t})")
            prev_t = t
            samples.append(GazeSample(t, x, y, pupil, int(blink_raw)))
    return samples


def samples_to_array(samples: Sequence[GazeSample]) -> np.ndarray:
    if not samples:
        return np.zeros((0, 4))
    return np.array([(s.gaze_x, s.gaze_y, s.pupil, s.blink) for s in samples], dtype=float)


def parse_personality(path) -> dict[str, PersonalityProfile]:
    path = Path(path)
    out: dict[str, PersonalityProfile] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in reader.fieldnames or []]
        if fields[:1] != ["participant_id"] or any(d not in fields for d in DIMENSIONS):
            raise SchemaError(f"{path}: header must be participant_id,O,C,E,A,N")
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): v for k, v in row.items()}
            try:
                bins = tuple(int(row[d]) for d in DIMENSIONS)
                out[row["participant_id"].strip()] = PersonalityProfile(bins)
            except (ValueError, TypeError) as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return out


# windows


def window_stream(samples, size: int = WINDOW, stride: int = DEFAULT_STRIDE) -> list[np.ndarray]:
    """Full windows starting at 0, stride, 2*stride, ...; the tail is dropped."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    data = samples if isinstance(samples, np.ndarray) else samples_to_array(samples)
    n = len(data)
    if n < size:
        return []
    return [data[s : s + size].copy() for s in range(0, n - size + 1, stride)]


def quality_filter(window: np.ndarray) -> bool:
    """True iff every row has gaze x, y within [0, 1] and a non-zero pupil."""
    gx, gy, pupil = window[:, GX], window[:, GY], window[:, PUPIL]
    return bool(
        np.all((gx >= 0) & (gx <= 1)) and np.all((gy >= 0) & (gy <= 1)) and np.all(pupil > 0)
    )


def compute_stats(windows: Iterable[np.ndarray]) -> NormStats:
    lo, hi = math.inf, -math.inf
    for w in windows:
        lo = min(lo, float(w[:, PUPIL].min()))
        hi = max(hi, float(w[:, PUPIL].max()))
    if not math.isfinite(lo):
        raise DegenerateStatsError("no windows to compute pupil statistics from")
    return NormStats(lo, hi)


def normalize(window: np.ndarray, stats: NormStats) -> np.ndarray:
    out = np.array(window, dtype=float, copy=True)
    out[..., GX] = 2.0 * out[..., GX] - 1.0
    out[..., GY] = 2.0 * out[..., GY] - 1.0
    span = stats.pupil_max - stats.pupil_min
    out[..., PUPIL] = np.clip(2.0 * (out[..., PUPIL] - stats.pupil_min) / span - 1.0, -1.0, 1.0)
    return out


def denormalize(window: np.ndarray, stats: NormStats, binarize_blink: bool = True) -> np.ndarray:
    """Inverse of :func:`normalize`.

    The blink channel passes through unchanged; with ``binarize_blink`` it is
    thresholded at 0.5 so continuous decoder output maps back to {0, 1}.
    """
    from .blinkcodec import binarize

    out = np.array(window, dtype=float, copy=True)
    out[..., GX] = (out[..., GX] + 1.0) / 2.0
    out[..., GY] = (out[..., GY] + 1.0) / 2.0
    span = stats.pupil_max - stats.pupil_min
    out[..., PUPIL] = (out[..., PUPIL] + 1.0) / 2.0 * span + stats.pupil_min
    if binarize_blink:
        out[..., BLINK] = binarize(out[..., BLINK])
    return out


def save_stats(stats: NormStats, path) -> None:
    Path(path).write_text(
        f"format_version=1\npupil_min={stats.pupil_min:.17g}\npupil_max={stats.pupil_max:.17g}\n",
        encoding="utf-8",
    )


def load_stats(path) -> NormStats:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    if values.get("format_version") != "1":
        raise SchemaError(f"{path}: unsupported stats format {values.get('format_version')!r}")
    return NormStats(float(values["pupil_min"]), float(values["pupil_max"]))


# labels


def encode_label(profile: PersonalityProfile, mode: LabelMode = ALL_DIMS) -> ClassLabel:
    if mode.kind == "single_dim":
        return ClassLabel(mode, profile.bin(mode.dim))
    index = 0
    for b in profile.bins:
        index = 3 * index + b
    return ClassLabel(mode, index)


def decode_label(index: int) -> PersonalityProfile:
    """Inverse of the all-dims encoding."""
    if not 0 <= index < N_CLASSES_ALL:
        raise ValueError(f"class index {index} out of range")
    bins = []
    for _ in DIMENSIONS:
        index, b = divmod(index, 3)
        bins.append(b)
    return PersonalityProfile(tuple(reversed(bins)))


def parse_class_spec(text: str, mode: LabelMode) -> ClassLabel:
    """Parse ``O=2,C=1,E=0,A=1,N=2`` (or ``E=2`` in single-dim mode)."""
    pairs = {}
    for part in text.split(","):
        key, sep, val = part.partition("=")
        key = key.strip().upper()
        if not sep or key not in DIMENSIONS:
            raise ValueError(f"bad class spec element {part!r}")
        pairs[key] = int(val)
    if mode.kind == "single_dim":
        if mode.dim not in pairs:
            raise ValueError(f"class spec must set {mode.dim}")
        return ClassLabel(mode, pairs[mode.dim])
    if set(pairs) != set(DIMENSIONS):
        raise ValueError("class spec must set all of O,C,E,A,N")
    return encode_label(PersonalityProfile(tuple(pairs[d] for d in DIMENSIONS)), mode)


# dataset


@dataclass
class WindowSet:
    """Stacked windows with integer labels and participant ids."""

    frames: np.ndarray  # (n, 300, 4)
    labels: np.ndarray  # (n,) int
    participants: np.ndarray  # (n,) str

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, mask) -> "WindowSet":
        return WindowSet(self.frames[mask], self.labels[mask], self.participants[mask])

    def save(self, path) -> None:
        np.savez(path, frames=self.frames, labels=self.labels, participants=self.participants)

    @classmethod
    def load(cls, path) -> "WindowSet":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["frames"], z["labels"], z["participants"])

    @classmethod
    def from_windows(cls, windows: Sequence[GazeWindow]) -> "WindowSet":
        if not windows:
            return cls(np.zeros((0, WINDOW, 4)), np.zeros(0, int), np.zeros(0, "<U1"))
        return cls(
            np.stack([w.frames for w in windows]),
            np.array([w.label.index for w in windows]),
            np.array([w.participant_id for w in windows]),
        )


@dataclass
class PrepareReport:
    total_windows: int
    rejected: int
    per_participant: dict[str, tuple[int, int]]


def build_windows(
    recordings: dict[str, Sequence[GazeSample] | np.ndarray],
    profiles: dict[str, PersonalityProfile],
    mode: LabelMode = ALL_DIMS,
    stride: int = DEFAULT_STRIDE,
) -> tuple[list[GazeWindow], PrepareReport]:
    """Window every recording and keep the ones that pass the quality test."""
    kept: list[GazeWindow] = []
    per: dict[str, tuple[int, int]] = {}
    total = rejected = 0
    for pid in sorted(recordings):
        if pid not in profiles:
            raise SchemaError(f"no personality entry for participant {pid!r}")
        label = encode_label(profiles[pid], mode)
        wins = window_stream(recordings[pid], WINDOW, stride)
        good = [w for w in wins if quality_filter(w)]
        per[pid] = (len(wins), len(wins) - len(good))
        total += len(wins)
        rejected += len(wins) - len(good)
        kept.extend(GazeWindow(w, label, pid) for w in good)
    return kept, PrepareReport(total, rejected, per)


def split_dataset(windows: Sequence[GazeWindow], test_fraction: float, seed: int):
    """Split by participant so nobody appears on both sides."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    pids = sorted({w.participant_id for w in windows})
    if len(pids) < 2:
        raise SplitError(f"need at least 2 participants to split, got {len(pids)}")
    order = np.random.default_rng(seed).permutation(len(pids))
    n_test = min(max(1, int(len(pids) * test_fraction)), len(pids) - 1)
    test_ids = {pids[i] for i in order[:n_test]}
    train = [w for w in windows if w.participant_id not in test_ids]
    test = [w for w in windows if w.participant_id in test_ids]
    return train, test
