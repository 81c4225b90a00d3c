"""Derivatives, stroke segmentation and the 27 per-stroke features.

Feature order is fixed by ``FEATURE_NAMES``; every extractor, scaler and
model in the package relies on that column order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from .core import PenSample, Stroke, TaskRecording

FEATURE_NAMES = (
    "segment",
    "start_time",
    "duration",
    "start_y",
    "vertical_size",
    "peak_vertical_velocity",
    "peak_vertical_acceleration",
    "start_x",
    "horizontal_size",
    "straightness_error",
    "slant",
    "loop_surface",
    "relative_initial_slant",
    "relative_time_to_peak_velocity",
    "pen_up_ratio",
    "absolute_size",
    "mean_speed",
    "road_length",
    "abs_y_jerk",
    "norm_y_jerk",
    "avg_norm_y_jerk",
    "abs_jerk",
    "norm_jerk",
    "avg_norm_jerk",
    "n_acc_peaks",
    "mean_pressure",
    "n_strokes",
)
N_FEATURES = len(FEATURE_NAMES)
SPEED_COLUMN = FEATURE_NAMES.index("mean_speed")

MIN_SAMPLES = 5
INITIAL_SLANT_SAMPLES = 16  # 80 ms at 200 Hz
CLOSED_CHORD = 1e-9
PEAK_PROMINENCE = 0.05
INVERSION_FLOOR = 0.05


class StrokeTooShort(ValueError):
    pass


class DegenerateStroke(ValueError):
    pass


class SegmentMode(enum.Enum):
    PEN_STATE = "pen_state"
    VELOCITY_INVERSION = "pen_state+velocity_inversion"


@dataclass(frozen=True)
class KinematicSeries:
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    jx: np.ndarray
    jy: np.ndarray

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)


def _deriv(f: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Central differences inside, one-sided at both ends."""
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (t[2:] - t[:-2])
    out[0] = (f[1] - f[0]) / (t[1] - t[0])
    out[-1] = (f[-1] - f[-2]) / (t[-1] - t[-2])
    return out


def differentiate_xy(t, x, y) -> KinematicSeries:
    t = np.asarray(t, dtype=float)
    if len(t) < MIN_SAMPLES:
        raise StrokeTooShort(f"need >= {MIN_SAMPLES} samples, got {len(t)}")
    vx, vy = _deriv(np.asarray(x, float), t), _deriv(np.asarray(y, float), t)
    ax, ay = _deriv(vx, t), _deriv(vy, t)
    jx, jy = _deriv(ax, t), _deriv(ay, t)
    return KinematicSeries(vx, vy, ax, ay, jx, jy)


def differentiate(stroke: Stroke) -> KinematicSeries:
    a = stroke.arrays()
    return differentiate_xy(a["t"], a["x"], a["y"])


# -- segmentation -------------------------------------------------------------

def _inversion_cuts(run: Sequence[PenSample]) -> list[int]:
    """Start indices of sub-strokes inside one on-paper run."""
    n = len(run)
    if n < 3:
        return []
    t = np.array([p.t for p in run])
    x = np.array([p.x for p in run])
    y = np.array([p.y for p in run])
    vx, vy = _deriv(x, t), _deriv(y, t)
    speed = np.hypot(vx, vy)
    floor = INVERSION_FLOOR * speed.max()

    # sign changes of vy; exact zeros inherit the previous sign
    sign = np.sign(vy)
    for i in range(1, n):
        if sign[i] == 0:
            sign[i] = sign[i - 1]
    crossings = [i for i in range(1, n) if sign[i] != 0 and sign[i - 1] != 0 and sign[i] != sign[i - 1]]
    if not crossings:
        return []

    bounds = [0] + crossings + [n]
    peaks = [speed[bounds[k]:bounds[k + 1]].max() for k in range(len(bounds) - 1)]
    cuts = []
    for k, c in enumerate(crossings):
        if peaks[k] > floor and peaks[k + 1] > floor:
            cuts.append(c)
    return cuts


def segment_strokes(samples: Sequence[PenSample], mode: SegmentMode = SegmentMode.PEN_STATE) -> list[Stroke]:
    """Split time-ordered samples into strokes; every sample lands in exactly one stroke."""
    if not samples:
        return []
    runs: list[list[PenSample]] = [[samples[0]]]
    for p in samples[1:]:
        if p.on_paper != runs[-1][-1].on_paper:
            runs.append([p])
        else:
            runs[-1].append(p)

    pieces: list[list[PenSample]] = []
    for run in runs:
        if mode is SegmentMode.VELOCITY_INVERSION and run[0].on_paper:
            starts = [0] + _inversion_cuts(run) + [len(run)]
            pieces.extend(run[a:b] for a, b in zip(starts[:-1], starts[1:]))
        else:
            pieces.append(run)
    return [Stroke(tuple(p), i) for i, p in enumerate(pieces, start=1)]


# -- geometric helpers ------------------------------------------------------

def straightness_error_xy(x: np.ndarray, y: np.ndarray, chord: float | None = None) -> float:
    """Std of perpendicular distances to the total-least-squares line over ``chord``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if chord is None:
        chord = math.hypot(x[-1] - x[0], y[-1] - y[0])
        if chord < CLOSED_CHORD:
            raise DegenerateStroke("coincident endpoints")
    pts = np.column_stack([x - x.mean(), y - y.mean()])
    # smallest right singular vector is the line normal
    _, _, vt = np.linalg.svd(pts, full_matrices=False)
    dist = pts @ vt[-1]
    return float(dist.std() / chord)


def straightness_error(stroke: Stroke) -> float:
    a = stroke.arrays()
    if len(a["x"]) < 2:
        raise DegenerateStroke("need >= 2 samples")
    return straightness_error_xy(a["x"], a["y"])


def arc_length(x, y) -> float:
    return float(np.hypot(np.diff(x), np.diff(y)).sum())


def shoelace_area(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def _trapezoid(f: np.ndarray, t: np.ndarray) -> float:
    return float(np.sum((f[1:] + f[:-1]) * np.diff(t)) / 2.0)


def normalized_jerk(series: KinematicSeries, t, duration: float, road_length: float, axis: str = "both") -> float:
    """sqrt(0.5 * integral(j^2 dt) * duration^5 / length^2), dimensionless."""
    if road_length <= 0:
        raise DegenerateStroke("zero road length")
    if duration <= 0:
        raise DegenerateStroke("zero duration")
    if axis == "y":
        j2 = series.jy ** 2
    elif axis == "both":
        j2 = series.jx ** 2 + series.jy ** 2
    else:
        raise ValueError(f"axis must be 'y' or 'both', got {axis!r}")
    integral = _trapezoid(j2, np.asarray(t, float))
    return math.sqrt(0.5 * integral * duration ** 5 / road_length ** 2)


def count_extrema(signal: np.ndarray, rel_prominence: float = PEAK_PROMINENCE) -> int:
    """Local maxima plus local minima whose prominence is >= rel_prominence * std."""
    sd = float(np.std(signal))
    if sd == 0.0:
        return 0
    prom = rel_prominence * sd
    up, _ = find_peaks(signal, prominence=prom)
    down, _ = find_peaks(-signal, prominence=prom)
    return int(len(up) + len(down))


def _wrap(angle: float) -> float:
    """Map to (-pi, pi]."""
    a = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if a == -math.pi else a


# -- feature extraction ----------------------------------------------------

def extract_stroke_features(
    stroke: Stroke,
    prev_stroke: Stroke | None,
    task_total_strokes: int,
    recording_start: float | None = None,
    task_jerk_means: tuple[float, float] | None = None,
) -> np.ndarray:
    """The 27-feature vector of one stroke.

    ``task_jerk_means`` holds the task averages of the y and full normalized
    jerk (features 21 and 24); when omitted the stroke's own values are used.
    ``recording_start`` defaults to the stroke's own start time.
    """
    a = stroke.arrays()
    t, x, y, pressure, on = a["t"], a["x"], a["y"], a["pressure"], a["on_paper"]
    ks = differentiate_xy(t, x, y)
    speed = ks.speed

    duration = float(t[-1] - t[0])
    if duration <= 0:
        raise DegenerateStroke("zero duration")
    t0 = float(t[0]) if recording_start is None else recording_start
    v_size = float(y.max() - y.min())
    h_size = float(x.max() - x.min())
    chord = math.hypot(x[-1] - x[0], y[-1] - y[0])
    length = arc_length(x, y)
    diag = math.hypot(h_size, v_size)
    closed = chord < CLOSED_CHORD
    if closed and diag < CLOSED_CHORD:
        raise DegenerateStroke("stationary stroke")
    ref = diag if closed else chord

    slant = _wrap(math.atan2(y[-1] - y[0], x[-1] - x[0]))
    k = min(INITIAL_SLANT_SAMPLES, len(x)) - 1
    initial = math.atan2(y[k] - y[0], x[k] - x[0])

    if prev_stroke is None:
        loop = 0.0
    else:
        pa = prev_stroke.arrays()
        loop = shoelace_area(np.concatenate([pa["x"], x]), np.concatenate([pa["y"], y]))

    dt = np.diff(t)
    pen_up = float(dt[~on[:-1]].sum() / duration)
    paper_p = pressure[on]

    nj_y = normalized_jerk(ks, t, duration, length, "y")
    nj = normalized_jerk(ks, t, duration, length, "both")
    avg_y, avg = task_jerk_means if task_jerk_means is not None else (nj_y, nj)
    jmag = np.hypot(ks.jx, ks.jy)
    amag = np.hypot(ks.ax, ks.ay)

    return np.array([
        stroke.index,
        float(t[0]) - t0,
        duration,
        float(y[0]),
        v_size,
        float(ks.vy.max()),
        float(ks.ay.max()),
        float(x[0]),
        h_size,
        straightness_error_xy(x, y, ref),
        slant,
        loop,
        _wrap(initial - slant),
        float(t[int(np.argmax(speed))] - t[0]) / duration,
        pen_up,
        diag,
        float(speed.mean()),
        length / ref,
        float(np.sqrt(np.mean(ks.jy ** 2))),
        nj_y,
        avg_y,
        float(np.sqrt(np.mean(jmag ** 2))),
        nj,
        avg,
        count_extrema(amag),
        float(paper_p.mean()) if len(paper_p) else 0.0,
        task_total_strokes,
    ], dtype=float)


def extract_task_features(rec: TaskRecording) -> np.ndarray:
    """Feature matrix (n_strokes, 27) for a whole task, rows in stroke order."""
    strokes = rec.strokes
    n = len(strokes)
    if n == 0:
        return np.empty((0, N_FEATURES))
    start = strokes[0].samples[0].t
    rows = []
    prev = None
    for s in strokes:
        rows.append(extract_stroke_features(s, prev, n, recording_start=start))
        prev = s
    m = np.vstack(rows)
    iy, ib = FEATURE_NAMES.index("norm_y_jerk"), FEATURE_NAMES.index("norm_jerk")
    m[:, iy + 1] = m[:, iy].mean()
    m[:, ib + 1] = m[:, ib].mean()
    return m
