"""Domain types shared by every stage of the pipeline, plus CSV I/O.

All containers are frozen dataclasses; arrays are stored as tuples or
read-only numpy arrays so they can be handed to worker processes safely.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SAMPLE_RATE = 200.0
SAMPLE_PERIOD = 1.0 / SAMPLE_RATE
PERIOD_TOLERANCE = 0.01
N_TASKS = 34

HC, AD = 0, 1
SEXES = ("female", "male")
WORKS = ("intellectual", "manual")

RECORDING_HEADER = ("subject_id", "task_id", "stroke_index", "t", "x", "y", "pressure", "on_paper")
SUBJECT_HEADER = ("subject_id", "label", "sex", "age", "work", "education")


class DataError(ValueError):
    """Malformed input data (bad CSV row, missing field, unknown category)."""


@dataclass(frozen=True)
class PenSample:
    t: float
    x: float
    y: float
    pressure: float
    on_paper: bool


@dataclass(frozen=True)
class Stroke:
    samples: tuple[PenSample, ...]
    index: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def on_paper(self) -> bool:
        return self.samples[0].on_paper

    def arrays(self) -> dict[str, np.ndarray]:
        """Column view of the samples: t, x, y, pressure, on_paper."""
        s = self.samples
        return {
            "t": np.array([p.t for p in s], dtype=float),
            "x": np.array([p.x for p in s], dtype=float),
            "y": np.array([p.y for p in s], dtype=float),
            "pressure": np.array([p.pressure for p in s], dtype=float),
            "on_paper": np.array([p.on_paper for p in s], dtype=bool),
        }


@dataclass(frozen=True)
class TaskRecording:
    subject_id: str
    task_id: int
    strokes: tuple[Stroke, ...]

    @property
    def samples(self) -> list[PenSample]:
        return [p for s in self.strokes for p in s.samples]


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    label: int
    sex: str
    age: float
    work: str
    education: float


@dataclass(frozen=True)
class WindowBatch:
    """One fixed-length window of per-stroke features ready for an encoder."""

    window: np.ndarray  # (WS, F)
    task_id: int
    statics: np.ndarray  # (4,)
    subject_id: str
    label: int
    offset: int = 0


@dataclass(frozen=True)
class Violation:
    kind: str
    where: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.where}"


def validate_recording(rec: TaskRecording) -> list[Violation]:
    """Check the type invariants of a recording; returns one entry per violation."""
    out: list[Violation] = []
    if not (1 <= rec.task_id <= N_TASKS):
        out.append(Violation("task id out of range", f"task {rec.task_id}"))
    for expect, stroke in enumerate(rec.strokes, start=1):
        where = f"stroke {stroke.index}"
        if stroke.index != expect:
            out.append(Violation("non-contiguous stroke index", where))
        if len(stroke.samples) < 2:
            out.append(Violation("stroke too short", where))
        states = {p.on_paper for p in stroke.samples}
        if len(states) > 1:
            out.append(Violation("mixed pen state", where))
    prev = None
    for i, p in enumerate(rec.samples):
        where = f"sample {i}"
        if p.pressure < 0 or not math.isfinite(p.pressure):
            out.append(Violation("negative pressure", where))
        if not p.on_paper and p.pressure != 0:
            out.append(Violation("in-air pressure", where))
        if prev is not None:
            dt = p.t - prev.t
            if dt < 0:
                out.append(Violation("non-monotonic time", where))
            elif abs(dt - SAMPLE_PERIOD) > PERIOD_TOLERANCE * SAMPLE_PERIOD:
                out.append(Violation("irregular sampling period", where))
        prev = p
    return out


def encode_statics(s: SubjectRecord) -> np.ndarray:
    """Numeric (sex, age, work, education) vector; raw values, no scaling."""
    for name in ("sex", "age", "work", "education"):
        if getattr(s, name, None) is None:
            raise DataError(f"subject {s.subject_id}: missing {name}")
    if s.sex not in SEXES:
        raise DataError(f"subject {s.subject_id}: unknown sex {s.sex!r}")
    if s.work not in WORKS:
        raise DataError(f"subject {s.subject_id}: unknown work {s.work!r}")
    return np.array(
        [SEXES.index(s.sex), float(s.age), WORKS.index(s.work), float(s.education)],
        dtype=float,
    )


# -- CSV -----------------------------------------------------------------

def _fmt(v: float) -> str:
    # repr gives the shortest string that round-trips exactly
    return repr(float(v))


def write_recordings(recs: Iterable[TaskRecording], path_or_buf) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORDING_HEADER)
        for rec in recs:
            for stroke in rec.strokes:
                for p in stroke.samples:
                    w.writerow([rec.subject_id, rec.task_id, stroke.index, _fmt(p.t),
                                _fmt(p.x), _fmt(p.y), _fmt(p.pressure), int(p.on_paper)])
    _with_text(path_or_buf, "w", _write)


def read_recordings(path_or_buf) -> list[TaskRecording]:
    """Parse a recording CSV; rows are grouped by (subject, task, stroke) in file order."""
    def _read(fh):
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RECORDING_HEADER:
            raise DataError(f"line 1: expected header {','.join(RECORDING_HEADER)}")
        groups: dict[tuple[str, int], dict[int, list[PenSample]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RECORDING_HEADER):
                raise DataError(f"line {lineno}: expected {len(RECORDING_HEADER)} fields, got {len(row)}")
            try:
                sid, task, idx = row[0], int(row[1]), int(row[2])
                t, x, y, pr = (float(v) for v in row[3:7])
                if row[7] not in ("0", "1"):
                    raise ValueError(f"on_paper must be 0 or 1, got {row[7]!r}")
                on = row[7] == "1"
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            groups.setdefault((sid, task), {}).setdefault(idx, []).append(PenSample(t, x, y, pr, on))
        return [
            TaskRecording(sid, task, tuple(Stroke(tuple(v), k) for k, v in sorted(strokes.items())))
            for (sid, task), strokes in groups.items()
        ]
    return _with_text(path_or_buf, "r", _read)


def write_subjects(subjects: Iterable[SubjectRecord], path_or_buf) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUBJECT_HEADER)
        for s in subjects:
            w.writerow([s.subject_id, s.label, s.sex, _fmt(s.age), s.work, _fmt(s.education)])
    _with_text(path_or_buf, "w", _write)


def read_subjects(path_or_buf) -> list[SubjectRecord]:
    def _read(fh):
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SUBJECT_HEADER:
            raise DataError(f"line 1: expected header {','.join(SUBJECT_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(SUBJECT_HEADER) or any(v == "" for v in row):
                raise DataError(f"line {lineno}: missing field")
            try:
                label = int(row[1])
                age, edu = float(row[3]), float(row[5])
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if label not in (HC, AD):
                raise DataError(f"line {lineno}: label must be 0 or 1")
            if row[2] not in SEXES or row[4] not in WORKS:
                raise DataError(f"line {lineno}: unknown category")
            if not (age > 0 and edu >= 0):
                raise DataError(f"line {lineno}: age must be > 0 and education >= 0")
            out.append(SubjectRecord(row[0], label, row[2], age, row[4], edu))
        return out
    return _with_text(path_or_buf, "r", _read)


def _with_text(path_or_buf, mode, fn):
    if isinstance(path_or_buf, (str, Path)):
        with open(path_or_buf, mode, newline="") as fh:
            return fn(fh)
    return fn(path_or_buf)


def recordings_to_bytes(recs: Sequence[TaskRecording]) -> bytes:
    buf = io.StringIO()
    write_recordings(recs, buf)
    return buf.getvalue().encode()
