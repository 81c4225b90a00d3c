"""Temporal Stability Score over a (stride, window) grid.

The score is D_s(w) + A(w) - R(s, w) + E(w) with the estimators below:

* D_s: 1 / (1 + CV) of per-recording window counts at stride 1.
* A: smallest lag where the recording-averaged biased ACF of the per-stroke
  mean-speed sequence drops below 0.2, normalized as min(lag, w) / w.
* R: arithmetic-mean NMI between consecutive windows (16 equal-width bins),
  averaged over all consecutive pairs.
* E: Shannon entropy of the 16-bin histogram of each z-scored window over
  log(16), averaged over windows.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kinematics import SPEED_COLUMN
from .preprocessing import pad_front, window_count, window_offsets

log = logging.getLogger(__name__)

N_BINS = 16
ACF_THRESHOLD = 0.2
SURFACE_HEADER = ("stride", "window", "d_s", "a", "r", "e", "tss")


@dataclass(frozen=True)
class TssComponents:
    stride: int
    window: int
    d_s: float
    a: float
    r: float
    e: float

    @property
    def tss(self) -> float:
        return self.d_s + self.a - self.r + self.e


def _as_sequences(dataset) -> list[np.ndarray]:
    return [np.asarray(s, dtype=float) for s in dataset]


def stroke_count_stability(dataset: Sequence[np.ndarray], w: int) -> float:
    counts = np.array([window_count(len(s), w, 1) for s in dataset], dtype=float)
    if len(counts) == 0:
        raise ValueError("empty dataset")
    mean = counts.mean()
    cv = counts.std() / mean
    return float(1.0 / (1.0 + cv))


def acf_biased(x, max_lag: int) -> np.ndarray:
    """ACF(0..max_lag) with the 1/n normalization; lags past the data are 0."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    d = x - x.mean()
    var = float(np.dot(d, d)) / n
    out = np.zeros(max_lag + 1)
    if var == 0.0:
        return out * np.nan
    for k in range(min(max_lag, n - 1) + 1):
        out[k] = np.dot(d[:n - k], d[k:]) / n / var
    return out


def autocorr_persistence(signal, w: int, threshold: float = ACF_THRESHOLD,
                         max_lag: int | None = None) -> tuple[int, float]:
    """Decay lag of the ACF and its normalized score min(lag, w) / w.

    ``signal`` is one 1-D sequence or a list of per-recording sequences whose
    ACFs are averaged (constant sequences are skipped).  If every sequence is
    constant the ACF is undefined and (0, 0.0) is returned with a warning.
    """
    if max_lag is None:
        max_lag = w
    seqs = [np.asarray(signal, float)] if np.ndim(signal[0]) == 0 else [np.asarray(s, float) for s in signal]
    acfs = [acf_biased(s, max_lag) for s in seqs if len(s) > 1]
    acfs = [a for a in acfs if not np.isnan(a[0])]
    if not acfs:
        log.warning("autocorrelation undefined for a constant signal; A set to 0")
        return 0, 0.0
    acf = np.mean(acfs, axis=0)
    below = np.nonzero(acf[1:] < threshold)[0]
    lag = int(below[0]) + 1 if len(below) else max_lag
    return lag, min(lag, w) / w


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def _bin_index(v: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros(len(v), dtype=int)
    idx = np.floor((v - lo) / (hi - lo) * bins).astype(int)
    return np.minimum(idx, bins - 1)


def normalized_mutual_information(a, b, bins: int = N_BINS) -> float:
    """2 I(a;b) / (H(a) + H(b)) from equal-width histograms over each variable's range."""
    a, b = np.ravel(a).astype(float), np.ravel(b).astype(float)
    ia, ib = _bin_index(a, bins), _bin_index(b, bins)
    joint = np.zeros((bins, bins))
    np.add.at(joint, (ia, ib), 1.0)
    ha, hb = _entropy(joint.sum(axis=1)), _entropy(joint.sum(axis=0))
    if ha + hb == 0.0:
        return 0.0
    mi = ha + hb - _entropy(joint.ravel())
    return float(np.clip(2.0 * mi / (ha + hb), 0.0, 1.0))


def stride_redundancy(dataset: Sequence[np.ndarray], w: int, s: int) -> float:
    vals = []
    for seq in _as_sequences(dataset):
        if len(seq) <= w:
            continue
        offs = window_offsets(len(seq), w, s)
        for o1, o2 in zip(offs[:-1], offs[1:]):
            vals.append(normalized_mutual_information(seq[o1:o1 + w], seq[o2:o2 + w]))
    return float(np.mean(vals)) if vals else 0.0


def window_entropy(dataset: Sequence[np.ndarray], w: int, stride: int = 1) -> float:
    vals = []
    for seq in _as_sequences(dataset):
        if len(seq) == 0:
            continue
        padded = pad_front(seq, w)
        for o in window_offsets(len(seq), w, stride):
            v = padded[o:o + w].ravel()
            sd = v.std()
            if sd == 0.0:
                vals.append(0.0)
                continue
            z = (v - v.mean()) / sd
            counts = np.bincount(_bin_index(z, N_BINS), minlength=N_BINS).astype(float)
            vals.append(_entropy(counts) / math.log(N_BINS))
    return float(np.mean(vals)) if vals else 0.0


def speed_sequences(dataset: Sequence[np.ndarray], column: int = SPEED_COLUMN) -> list[np.ndarray]:
    return [np.asarray(s, float)[:, column] for s in dataset if len(s)]


def tss_cell(dataset: Sequence[np.ndarray], w: int, s: int, speed_column: int = SPEED_COLUMN) -> TssComponents:
    seqs = _as_sequences(dataset)
    _, a = autocorr_persistence(speed_sequences(seqs, speed_column), w)
    return TssComponents(
        stride=s,
        window=w,
        d_s=stroke_count_stability(seqs, w),
        a=a,
        r=stride_redundancy(seqs, w, s),
        e=window_entropy(seqs, w),
    )


def tss_grid_scan(dataset: Sequence[np.ndarray], w_grid: Sequence[int], s_grid: Sequence[int],
                  speed_column: int = SPEED_COLUMN) -> tuple[list[TssComponents], TssComponents]:
    """Score every (stride, window) cell; returns (cells, argmax cell).

    Cells are ordered by stride then window; ties in the argmax go to the
    first cell in that order.
    """
    if not w_grid or not s_grid:
        raise ValueError("grids must be non-empty")
    seqs = _as_sequences(dataset)
    cells = [tss_cell(seqs, w, s, speed_column) for s in sorted(s_grid) for w in sorted(w_grid)]
    best = max(cells, key=lambda c: c.tss)
    return cells, best


def write_surface(cells: Sequence[TssComponents], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SURFACE_HEADER)
        for c in cells:
            wr.writerow([c.stride, c.window, repr(c.d_s), repr(c.a), repr(c.r), repr(c.e), repr(c.tss)])


def read_surface(path) -> list[TssComponents]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [TssComponents(int(r["stride"]), int(r["window"]), float(r["d_s"]), float(r["a"]),
                          float(r["r"]), float(r["e"])) for r in rows]
