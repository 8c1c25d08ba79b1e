"""Device-space gaze windows to world-space animation frames."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import BLINK, GX, GY, PUPIL, SAMPLE_RATE


@dataclass(frozen=True)
class EyeRig:
    eye_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    distance: float = 1.0
    h_fov: float = 60.0
    v_fov: float = 46.0

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("viewing distance must be positive")
        for fov in (self.h_fov, self.v_fov):
            if not 0 < fov < 180:
                raise ValueError(f"field of view must lie in (0, 180) degrees, got {fov}")


@dataclass(frozen=True)
class AnimFrame:
    t: float
    target: tuple[float, float, float]
    eyelid_weight: float
    pupil_scale: float
    blink: int


def gaze_to_world(x: float, y: float, rig: EyeRig) -> np.ndarray:
    """Look-at target for normalised gaze (x, y) on a plane at ``rig.distance``."""
    x = min(max(x, 0.0), 1.0)
    y = min(max(y, 0.0), 1.0)
    d = rig.distance
    ex, ey, ez = rig.eye_position
    return np.array([
        (2 * x - 1) * d * abs(math.tan(math.radians(rig.h_fov / 2))) + ex,
        (2 * y - 1) * d * abs(math.tan(math.radians(rig.v_fov / 2))) + ey,
        d + ez,
    ])


@dataclass(frozen=True)
class EyelidMap:
    """weight = intercept + slope * y, clipped to [0, 1]."""

    slope: float = -1.0
    intercept: float = 1.0


def eyelid_weight(y: float, blink: int = 0, lid: EyelidMap = EyelidMap()) -> float:
    if blink:
        return 1.0
    y = min(max(y, 0.0), 1.0)
    return min(max(lid.intercept + lid.slope * y, 0.0), 1.0)


def pupil_scale(pupil_mm: float, baseline_mm: float) -> float:
    if not (pupil_mm > 0 and baseline_mm > 0):
        raise ValueError(f"pupil sizes must be positive (got {pupil_mm}, {baseline_mm})")
    return pupil_mm / baseline_mm


def blink_events(blink) -> list[tuple[int, int]]:
    """Maximal runs of ones as (start_frame, duration_frames)."""
    b = np.asarray(blink).astype(int)
    edges = np.diff(np.concatenate([[0], b, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


def window_frames(window: np.ndarray, rig: EyeRig, baseline_mm: float,
                  lid: EyelidMap = EyelidMap()) -> list[AnimFrame]:
    frames = []
    for k, row in enumerate(np.asarray(window, dtype=float)):
        blink = int(row[BLINK] >= 0.5)
        frames.append(AnimFrame(
            k / SAMPLE_RATE,
            tuple(float(v) for v in gaze_to_world(row[GX], row[GY], rig)),
            eyelid_weight(row[GY], blink, lid),
            pupil_scale(row[PUPIL], baseline_mm),
            blink,
        ))
    return frames


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def format_frame(f: AnimFrame) -> str:
    vals = [f.t, *f.target, f.eyelid_weight, f.pupil_scale]
    return " ".join(_fmt(v) for v in vals) + f" {f.blink}\n"


def export_animation(window: np.ndarray, rig: EyeRig, baseline_mm: float, path,
                     lid: EyelidMap = EyelidMap()) -> Path:
    """Write one line per frame: ``t tx ty tz eyelid pupil_scale blink``."""
    path = Path(path)
    text = "".join(format_frame(f) for f in window_frames(window, rig, baseline_mm, lid))
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def parse_animation(path) -> list[AnimFrame]:
    frames = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"animation record needs 7 fields, got {len(parts)}: {line!r}")
        t, x, y, z, lid, scale = map(float, parts[:6])
        frames.append(AnimFrame(t, (x, y, z), lid, scale, int(parts[6])))
    return frames
