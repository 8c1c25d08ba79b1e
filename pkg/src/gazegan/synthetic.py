"""Synthetic corpora for desk-scale runs and fixtures.

Nothing here is meant to resemble real eye-tracking statistics closely; the
generators only need known ground truth (class means, blink runs).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataio import DIMENSIONS, SAMPLE_RATE, WINDOW


def blink_trains(n: int, rng: np.random.Generator, length: int = WINDOW,
                 rate_hz: float = 0.3, min_len: int = 3, max_len: int = 10) -> np.ndarray:
    """``n`` binary blink channels with Poisson blink counts and 3-10 frame runs."""
    out = np.zeros((n, length))
    expected = rate_hz * length / SAMPLE_RATE
    for i in range(n):
        for _ in range(rng.poisson(expected)):
            dur = int(rng.integers(min_len, max_len + 1))
            start = int(rng.integers(0, length - dur + 1))
            out[i, start : start + dur] = 1.0
    return out


def toy_class_means(n_classes: int = 3, length: int = WINDOW) -> np.ndarray:
    """Per-class mean trajectories, shape (n_classes, length, 2), in device units.

    Class ``c`` sits at a c-dependent offset with a slow shared sway.
    """
    t = np.arange(length) / SAMPLE_RATE
    sway = 0.05 * np.sin(2 * np.pi * t / 5.0)
    means = np.zeros((n_classes, length, 2))
    for c in range(n_classes):
        means[c, :, 0] = 0.3 + 0.2 * c + sway
        means[c, :, 1] = 0.7 - 0.2 * c + 0.5 * sway
    return means


def toy_windows(n_per_class: int, rng: np.random.Generator, n_classes: int = 3,
                noise: float = 0.03) -> tuple[np.ndarray, np.ndarray]:
    """Device-space toy windows (n, 300, 4) and their class labels."""
    means = toy_class_means(n_classes)
    frames, labels = [], []
    for c in range(n_classes):
        for _ in range(n_per_class):
            w = np.empty((WINDOW, 4))
            w[:, :2] = means[c] + noise * rng.standard_normal((WINDOW, 2))
            w[:, :2] += 0.02 * rng.standard_normal(2)
            w[:, 2] = 3.0 + 0.5 * c + 0.1 * rng.standard_normal() + 0.05 * rng.standard_normal(WINDOW)
            w[:, 3] = blink_trains(1, rng)[0]
            frames.append(np.clip(w, [0, 0, 0.5, 0], [1, 1, 10, 1]))
            labels.append(c)
    return np.stack(frames), np.array(labels)


def write_recording(path, frames: np.ndarray, two_pupils: bool = False) -> None:
    """Write (n, 4) device-space samples in the recording CSV layout."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if two_pupils:
            w.writerow(["t", "gaze_x", "gaze_y", "pupil_left", "pupil_right", "blink"])
        else:
            w.writerow(["t", "gaze_x", "gaze_y", "pupil_left", "blink"])
        for k, (x, y, p, b) in enumerate(frames):
            row = [f"{k / SAMPLE_RATE:.17g}", f"{x:.17g}", f"{y:.17g}"]
            row += [f"{p:.17g}", f"{p:.17g}"] if two_pupils else [f"{p:.17g}"]
            w.writerow(row + [str(int(b))])


def write_personality(path, profiles: dict[str, tuple[int, ...]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["participant_id", *DIMENSIONS])
        for pid, bins in sorted(profiles.items()):
            w.writerow([pid, *bins])


def write_toy_corpus(root, n_participants: int = 6, seconds: float = 60.0, seed: int = 0,
                     dim: str = "E") -> dict[str, tuple[int, ...]]:
    """Create ``recordings/<pid>.csv`` plus ``personality.csv`` under ``root``.

    Participants cycle through the three bins of ``dim`` and gaze follows the
    toy class means, so a single-dimension run has learnable structure.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    (root / "recordings").mkdir(parents=True, exist_ok=True)
    means = toy_class_means(3, WINDOW)
    n = int(seconds * SAMPLE_RATE)
    profiles = {}
    for i in range(n_participants):
        pid = f"p{i:02d}"
        c = i % 3
        bins = [int(v) for v in rng.integers(0, 3, size=5)]
        bins[DIMENSIONS.index(dim)] = c
        profiles[pid] = tuple(bins)
        reps = int(np.ceil(n / WINDOW))
        base = np.tile(means[c], (reps, 1))[:n]
        frames = np.empty((n, 4))
        frames[:, :2] = np.clip(base + 0.03 * rng.standard_normal((n, 2)), 0, 1)
        frames[:, 2] = 3.0 + 0.5 * c + 0.05 * rng.standard_normal(n)
        frames[:, 3] = blink_trains(1, rng, length=n)[0]
        write_recording(root / "recordings" / f"{pid}.csv", frames)
    write_personality(root / "personality.csv", profiles)
    return profiles
