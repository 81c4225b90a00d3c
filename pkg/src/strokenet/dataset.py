"""Per-task feature tables, their CSV form, and fold-wise window assembly."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import DataError, SubjectRecord, TaskRecording, encode_statics
from .kinematics import FEATURE_NAMES, N_FEATURES, extract_task_features
from .preprocessing import RobustScaleParams, make_windows, robust_fit, robust_transform, window_standardize

FEATURE_HEADER = ("subject_id", "task_id", "stroke_index") + FEATURE_NAMES


@dataclass(frozen=True)
class TaskFeatures:
    subject_id: str
    task_id: int
    features: np.ndarray  # (n_strokes, 27)


def extract_all(recs: Iterable[TaskRecording], jobs: int = 1) -> list[TaskFeatures]:
    recs = list(recs)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            mats = list(ex.map(extract_task_features, recs, chunksize=16))
    else:
        mats = [extract_task_features(r) for r in recs]
    out = [TaskFeatures(r.subject_id, r.task_id, m) for r, m in zip(recs, mats)]
    return sorted(out, key=lambda tf: (tf.subject_id, tf.task_id))


def write_features(table: Sequence[TaskFeatures], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_HEADER)
        for tf in table:
            for i, row in enumerate(tf.features, start=1):
                w.writerow([tf.subject_id, tf.task_id, i] + [repr(float(v)) for v in row])


def read_features(path) -> list[TaskFeatures]:
    groups: dict[tuple[str, int], list[np.ndarray]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != FEATURE_HEADER:
            raise DataError(f"{path}: line 1: unexpected feature header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(FEATURE_HEADER):
                raise DataError(f"{path}: line {lineno}: expected {len(FEATURE_HEADER)} fields, got {len(row)}")
            try:
                key = (row[0], int(row[1]))
                vals = np.array([float(v) for v in row[3:]])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}: line {lineno}: non-finite feature value")
            groups.setdefault(key, []).append(vals)
    return [TaskFeatures(s, t, np.vstack(rows)) for (s, t), rows in sorted(groups.items())]


def stack_rows(table: Iterable[TaskFeatures], subjects: set | frozenset | None = None) -> np.ndarray:
    mats = [tf.features for tf in table if subjects is None or tf.subject_id in subjects]
    return np.vstack(mats) if mats else np.empty((0, N_FEATURES))


def fit_scaler(table: Sequence[TaskFeatures], train_subjects) -> RobustScaleParams:
    """Robust scaler fitted on training-subject stroke rows only."""
    return robust_fit(stack_rows(table, set(train_subjects)))


@dataclass
class WindowArrays:
    X: np.ndarray  # (N, WS, F)
    task_ids: np.ndarray
    statics: np.ndarray
    subject_ids: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "WindowArrays":
        return WindowArrays(self.X[idx], self.task_ids[idx], self.statics[idx],
                            self.subject_ids[idx], self.labels[idx])


def build_windows(table: Sequence[TaskFeatures], subjects: Mapping[str, SubjectRecord], keep,
                  params: RobustScaleParams, ws: int, stride: int, standardize: bool = True) -> WindowArrays:
    """Robust-scale, window and (optionally) standardize every recording of ``keep`` subjects."""
    keep = set(keep)
    X, tids, stat, sids, labs = [], [], [], [], []
    for tf in table:
        if tf.subject_id not in keep:
            continue
        subj = subjects[tf.subject_id]
        seq = robust_transform(tf.features, params)
        for wb in make_windows(seq, ws, stride, tf.task_id, encode_statics(subj), subj.subject_id, subj.label):
            X.append(window_standardize(wb.window) if standardize else wb.window)
            tids.append(wb.task_id)
            stat.append(wb.statics)
            sids.append(wb.subject_id)
            labs.append(wb.label)
    n_feat = table[0].features.shape[1] if table else N_FEATURES
    return WindowArrays(
        np.array(X, dtype=float).reshape(len(X), ws, n_feat),
        np.array(tids, dtype=int),
        np.array(stat, dtype=float).reshape(len(stat), 4),
        np.array(sids, dtype=object),
        np.array(labs, dtype=int),
    )
