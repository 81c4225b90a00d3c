"""Seeded synthetic cohorts with class-conditional handwriting kinematics.

A task trajectory is a chain of smooth segments alternating pen-down and
pen-up.  Each segment is a bowed line traversed with a minimum-jerk (or
constant-speed) time profile; Gaussian position noise is added at render
time.  AD subjects get their trajectories re-timed and noisier via
``inject_class_effect`` before rendering on the 200 Hz grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (AD, HC, N_TASKS, SAMPLE_RATE, SEXES, WORKS, PenSample, Stroke,
                   SubjectRecord, TaskRecording)

# tablet units are millimetres
TABLET_WIDTH = 210.0
LINE_HEIGHT = 18.0
BASE_NOISE_SD = 0.04
STROKE_SPEED = (25.0, 55.0)  # mm/s, pen down, before effects
AR_COEF = 0.8  # stroke-to-stroke persistence of size/speed within a task


@dataclass(frozen=True)
class ClassEffect:
    velocity_scale: float = 0.7
    jerk_scale: float = 1.5
    pause_scale: float = 1.4
    drift: float = 0.0  # fractional slow-down reached by the last stroke of a task

    def __post_init__(self):
        for name in ("velocity_scale", "jerk_scale", "pause_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.drift < 1.0:
            raise ValueError("drift must be in [0, 1)")


NULL_EFFECT = ClassEffect(1.0, 1.0, 1.0, 0.0)


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 7
    n_ad: int = 30
    n_hc: int = 30
    tasks: tuple[int, ...] = tuple(range(1, N_TASKS + 1))
    samples_per_stroke: tuple[int, int] = (12, 40)
    strokes_per_task: tuple[int, int] = (8, 30)
    effect: ClassEffect = field(default_factory=ClassEffect)

    def __post_init__(self):
        if self.n_ad < 1 or self.n_hc < 1:
            raise ValueError("single-class cohort: n_ad and n_hc must both be >= 1")
        for name in ("samples_per_stroke", "strokes_per_task"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name} must be a non-empty range, got {(lo, hi)}")
        if self.samples_per_stroke[0] < 5:
            raise ValueError("samples_per_stroke must start at >= 5")
        if not self.tasks or any(not 1 <= t <= N_TASKS for t in self.tasks):
            raise ValueError(f"tasks must be a non-empty subset of 1..{N_TASKS}")


@dataclass(frozen=True)
class Segment:
    start: tuple[float, float]
    end: tuple[float, float]
    bow: float  # lateral bulge, fraction of the chord
    duration: float  # seconds
    on_paper: bool
    pressure: float = 0.0  # peak pressure when on paper
    profile: str = "minjerk"  # or "constant"


@dataclass(frozen=True)
class Trajectory:
    segments: tuple[Segment, ...]
    noise_sd: float
    noise_seed: int


def _time_profile(u: np.ndarray, profile: str) -> np.ndarray:
    if profile == "constant":
        return u
    return u ** 3 * (10 - 15 * u + 6 * u ** 2)


def _segment_points(seg: Segment, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # n samples at u = 0, 1/n, ..., (n-1)/n; the end point belongs to the next segment
    u = _time_profile(np.arange(n) / n, seg.profile)
    (x0, y0), (x1, y1) = seg.start, seg.end
    dx, dy = x1 - x0, y1 - y0
    bulge = seg.bow * np.sin(np.pi * u)
    x = x0 + dx * u - dy * bulge
    y = y0 + dy * u + dx * bulge
    if seg.on_paper:
        p = seg.pressure * (0.35 + 0.65 * np.sin(np.pi * np.clip(u, 0, 1)))
    else:
        p = np.zeros(n)
    return x, y, p


def segment_samples(seg: Segment) -> int:
    return max(2, int(round(seg.duration * SAMPLE_RATE)))


def render(traj: Trajectory, t0: float = 0.0) -> list[list[PenSample]]:
    """Sample every segment on the global 200 Hz grid; one list per segment."""
    rng = np.random.default_rng(traj.noise_seed)
    out = []
    k = 0
    for seg in traj.segments:
        n = segment_samples(seg)
        x, y, p = _segment_points(seg, n)
        if traj.noise_sd > 0:
            x = x + rng.normal(0.0, traj.noise_sd, n)
            y = y + rng.normal(0.0, traj.noise_sd, n)
        t = t0 + (k + np.arange(n)) / SAMPLE_RATE
        out.append([PenSample(float(t[i]), float(x[i]), float(y[i]), float(p[i]), seg.on_paper)
                    for i in range(n)])
        k += n
    return out


def inject_class_effect(traj: Trajectory, label: int, effect: ClassEffect) -> Trajectory:
    """Re-time and roughen an HC-baseline trajectory for an AD subject.

    Pen speed drops by ``velocity_scale`` everywhere, in-air segments are
    further stretched by ``pause_scale``, position noise grows by
    ``jerk_scale`` and, with ``drift`` > 0, pen-down segments slow down
    progressively over the task.
    """
    if label == HC:
        return traj
    n = len(traj.segments)
    segs = []
    for i, seg in enumerate(traj.segments):
        d = seg.duration / effect.velocity_scale
        if not seg.on_paper:
            d *= effect.pause_scale
        elif effect.drift and n > 1:
            d /= 1.0 - effect.drift * i / (n - 1)
        segs.append(replace(seg, duration=d))
    return replace(traj, segments=tuple(segs), noise_sd=traj.noise_sd * effect.jerk_scale)


@dataclass(frozen=True)
class _Style:
    size: float
    speed: float
    slant: float
    noise: float
    pressure: float
    x0: float
    y0: float


def _subject_style(rng: np.random.Generator) -> _Style:
    return _Style(
        size=float(rng.lognormal(0.0, 0.12)),
        speed=float(rng.lognormal(0.0, 0.08)),
        slant=float(rng.normal(0.15, 0.1)),
        noise=float(BASE_NOISE_SD * rng.lognormal(0.0, 0.1)),
        pressure=float(rng.uniform(350.0, 700.0)),
        x0=float(rng.uniform(15.0, 30.0)),
        y0=float(rng.uniform(110.0, 130.0)),
    )


def baseline_trajectory(cfg: GeneratorConfig, style: _Style, task_id: int,
                        rng: np.random.Generator) -> Trajectory:
    """HC-baseline trajectory for one task."""
    # task-level scale drawn from a stream that depends on the task only
    task_rng = np.random.default_rng([cfg.seed, 0, task_id])
    task_size = float(task_rng.uniform(0.7, 1.4))

    n_strokes = int(rng.integers(cfg.strokes_per_task[0], cfg.strokes_per_task[1] + 1))
    lo, hi = cfg.samples_per_stroke
    x, y = style.x0, style.y0
    line_y = style.y0
    ar_size = ar_speed = 0.0
    segs = []
    up = True
    for i in range(n_strokes):
        ar_size = AR_COEF * ar_size + math.sqrt(1 - AR_COEF ** 2) * rng.normal(0.0, 0.15)
        ar_speed = AR_COEF * ar_speed + math.sqrt(1 - AR_COEF ** 2) * rng.normal(0.0, 0.15)
        if i % 2 == 0:
            # pen down: near-vertical up/down stroke
            length = 6.0 * style.size * task_size * math.exp(ar_size) * rng.uniform(0.6, 1.4)
            speed = style.speed * math.exp(ar_speed) * rng.uniform(*STROKE_SPEED)
            n = int(np.clip(round(length / speed * SAMPLE_RATE), lo, hi))
            length = speed * n / SAMPLE_RATE
            ang = math.pi / 2 - style.slant + rng.normal(0.0, 0.15)
            if not up:
                ang += math.pi
            up = not up
            end = (x + length * math.cos(ang), y + length * math.sin(ang))
            segs.append(Segment((x, y), end, float(rng.uniform(-0.25, 0.25)), n / SAMPLE_RATE,
                                True, style.pressure * float(rng.uniform(0.8, 1.0))))
        else:
            # pen up: hop right, pulled back toward the current line
            if x > TABLET_WIDTH - 30.0:
                nx, line_y = style.x0, line_y - LINE_HEIGHT
                ny = line_y
            else:
                nx = x + rng.uniform(2.0, 6.0) * style.size
                ny = y + 0.5 * (line_y - y) + rng.normal(0.0, 1.0)
            dist = math.hypot(nx - x, ny - y)
            speed = 1.5 * style.speed * math.exp(ar_speed) * rng.uniform(*STROKE_SPEED)
            n = int(np.clip(round(dist / speed * SAMPLE_RATE), lo, hi))
            end = (nx, ny)
            segs.append(Segment((x, y), end, float(rng.uniform(-0.2, 0.2)), n / SAMPLE_RATE, False))
        x, y = end
    return Trajectory(tuple(segs), style.noise, int(rng.integers(0, 2 ** 63 - 1)))


def _demographics(rng: np.random.Generator) -> tuple[str, float, str, float]:
    sex = SEXES[int(rng.integers(0, 2))]
    age = round(float(np.clip(rng.normal(70.0, 9.0), 45.0, 95.0)), 1)
    work = WORKS[int(rng.integers(0, 2))]
    edu = round(float(np.clip(rng.normal(11.5, 4.5), 0.0, 25.0)), 1)
    return sex, age, work, edu


def generate_subject(cfg: GeneratorConfig, ordinal: int, label: int) -> tuple[SubjectRecord, list[TaskRecording]]:
    """One subject; the random stream derives from (seed, ordinal) only."""
    rng = np.random.default_rng([cfg.seed, ordinal + 1])
    sid = f"S{ordinal + 1:03d}"
    sex, age, work, edu = _demographics(rng)
    style = _subject_style(rng)
    recs = []
    for task in sorted(cfg.tasks):
        trng = np.random.default_rng([cfg.seed, ordinal + 1, task])
        traj = inject_class_effect(baseline_trajectory(cfg, style, task, trng), label, cfg.effect)
        pieces = render(traj)
        strokes = tuple(Stroke(tuple(p), i) for i, p in enumerate(pieces, start=1))
        recs.append(TaskRecording(sid, task, strokes))
    return SubjectRecord(sid, label, sex, age, work, edu), recs


def subject_labels(cfg: GeneratorConfig) -> list[int]:
    """Label per subject ordinal: the first n_ad are AD, the rest HC."""
    return [AD] * cfg.n_ad + [HC] * cfg.n_hc


def generate_cohort(cfg: GeneratorConfig, jobs: int = 1) -> tuple[list[SubjectRecord], list[TaskRecording]]:
    """All subjects and recordings, sorted by (subject, task)."""
    labels = subject_labels(cfg)
    args = [(cfg, i, lab) for i, lab in enumerate(labels)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_generate_star, args))
    else:
        results = [generate_subject(*a) for a in args]
    subjects = [r[0] for r in results]
    recs = [rec for r in results for rec in r[1]]
    return subjects, recs


def _generate_star(a):
    return generate_subject(*a)


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    na, nb = len(a), len(b)
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    return float((a.mean() - b.mean()) / math.sqrt(pooled))
