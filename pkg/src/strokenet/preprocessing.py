"""Global robust scaling, sliding windows and per-window standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import WindowBatch

IQR_GUARD = 1e-12
STD_GUARD = 1e-12


class EmptyFit(ValueError):
    pass


@dataclass(frozen=True)
class RobustScaleParams:
    median: np.ndarray
    iqr: np.ndarray


def robust_fit(train_features) -> RobustScaleParams:
    """Per-column median and IQR (linear-interpolation quantiles) of training rows."""
    x = np.asarray(train_features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyFit("robust_fit needs a non-empty 2-D array")
    if x.shape[0] < 2:
        raise EmptyFit("robust_fit needs at least 2 rows")
    q1, med, q3 = np.percentile(x, [25, 50, 75], axis=0)
    iqr = q3 - q1
    iqr = np.where(iqr < IQR_GUARD, 1.0, iqr)
    return RobustScaleParams(med, iqr)


def robust_transform(features, params: RobustScaleParams) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != params.median.shape[0]:
        raise ValueError(f"feature width {x.shape[-1]} != fitted width {params.median.shape[0]}")
    return (x - params.median) / params.iqr


def window_offsets(length: int, ws: int, stride: int) -> list[int]:
    if ws < 1 or stride < 1:
        raise ValueError("window size and stride must be >= 1")
    if length < ws:
        return [0]
    return list(range(0, length - ws + 1, stride))


def window_count(length: int, ws: int, stride: int) -> int:
    return max(1, (length - ws) // stride + 1)


def pad_front(seq: np.ndarray, ws: int) -> np.ndarray:
    """Left-pad by repeating the first row up to ``ws`` rows."""
    seq = np.asarray(seq, dtype=float)
    if len(seq) >= ws:
        return seq
    return np.vstack([np.repeat(seq[:1], ws - len(seq), axis=0), seq])


def make_windows(seq, ws: int, stride: int, task_id: int = 0, statics=None,
                 subject_id: str = "", label: int = 0) -> list[WindowBatch]:
    """Slide a ``ws``-row window over one task's per-stroke features."""
    seq = np.asarray(seq, dtype=float)
    if len(seq) == 0:
        return []
    statics = np.zeros(4) if statics is None else np.asarray(statics, dtype=float)
    padded = pad_front(seq, ws)
    return [
        WindowBatch(padded[o:o + ws], task_id, statics, subject_id, label, o)
        for o in window_offsets(len(seq), ws, stride)
    ]


def window_standardize(window) -> np.ndarray:
    """Zero-mean, unit population-std columns; near-constant columns become 0."""
    w = np.asarray(window, dtype=float)
    mu = w.mean(axis=-2, keepdims=True)
    sd = w.std(axis=-2, keepdims=True)
    safe = np.where(sd < STD_GUARD, 1.0, sd)
    return np.where(sd < STD_GUARD, 0.0, (w - mu) / safe)
