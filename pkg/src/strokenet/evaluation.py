"""Subject-level stratified folds, decisions, metrics and fold aggregation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import AD, HC, SubjectRecord

log = logging.getLogger(__name__)

METRICS = ("accuracy", "sensitivity", "specificity", "f1")
RESULTS_SCHEMA = 1
VAL_FRACTION = 0.15


@dataclass(frozen=True)
class FoldAssignment:
    fold: int
    train: frozenset
    val: frozenset
    test: frozenset


def fold_seed(seed_base: int, fold_index: int) -> int:
    return seed_base + fold_index


def stratified_subject_folds(subjects: Sequence[SubjectRecord], k: int = 5, seed_base: int = 42,
                             val_fraction: float = VAL_FRACTION) -> list[FoldAssignment]:
    """Round-robin assignment of per-class shuffled subjects to ``k`` test folds.

    The round-robin counter carries over from AD to HC so fold sizes differ
    by at most one subject overall.

    Within each fold a stratified holdout of ``val_fraction`` of the training
    subjects (at least one per class) becomes the validation set, drawn with
    the fold's own seed.
    """
    by_class = {HC: [], AD: []}
    for s in sorted(subjects, key=lambda s: s.subject_id):
        by_class[s.label].append(s.subject_id)
    for lab, ids in by_class.items():
        if len(ids) < k:
            raise ValueError(f"class {lab} has {len(ids)} subjects, need >= {k}")
    rng = np.random.default_rng(seed_base)
    test_sets = [[] for _ in range(k)]
    slot = 0
    for lab in (AD, HC):
        ids = by_class[lab]
        for i in rng.permutation(len(ids)):
            test_sets[slot % k].append(ids[i])
            slot += 1

    folds = []
    for f in range(k):
        test = set(test_sets[f])
        frng = np.random.default_rng(fold_seed(seed_base, f))
        val = set()
        for lab in (AD, HC):
            pool = [i for i in by_class[lab] if i not in test]
            n_val = max(1, int(round(val_fraction * len(pool))))
            pick = frng.permutation(len(pool))[:n_val]
            val.update(pool[i] for i in sorted(pick))
        train = {s.subject_id for s in subjects} - test - val
        folds.append(FoldAssignment(f, frozenset(train), frozenset(val), frozenset(test)))
    return folds


def subject_decision(window_probs) -> int:
    """Mean window probability thresholded at 0.5; exactly 0.5 counts as AD."""
    p = np.asarray(window_probs, dtype=float)
    if p.size == 0:
        raise ValueError("no window probabilities")
    return AD if p.mean() >= 0.5 else HC


def confusion_metrics(decisions, labels) -> dict[str, float]:
    """Percent accuracy, sensitivity, specificity and F1 with AD as positive.

    A metric whose denominator is zero is NaN and excluded later by
    ``aggregate_folds``.
    """
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    tp = int(((d == 1) & (y == 1)).sum())
    tn = int(((d == 0) & (y == 0)).sum())
    fp = int(((d == 1) & (y == 0)).sum())
    fn = int(((d == 0) & (y == 1)).sum())

    def ratio(a, b):
        if b == 0:
            log.warning("undefined metric (empty class in fold)")
            return math.nan
        return 100.0 * a / b

    return {
        "accuracy": ratio(tp + tn, len(y)),
        "sensitivity": ratio(tp, tp + fn),
        "specificity": ratio(tn, tn + fp),
        "f1": ratio(2 * tp, 2 * tp + fp + fn),
    }


def f1_score(decisions, labels) -> float:
    """F1 on a 0..1 scale; 0 when there are no positives at all."""
    m = confusion_metrics(decisions, labels)["f1"]
    return 0.0 if math.isnan(m) else m / 100.0


@dataclass(frozen=True)
class FoldReport:
    per_fold: tuple[Mapping[str, float], ...]
    mean: Mapping[str, float]
    std: Mapping[str, float]

    def formatted(self, metric: str, digits: int = 1) -> str:
        return f"{self.mean[metric]:.{digits}f} ({self.std[metric]:.{digits}f})"


def aggregate_folds(per_fold: Sequence[Mapping[str, float]]) -> FoldReport:
    """Mean and sample standard deviation per metric, skipping undefined folds."""
    if len(per_fold) < 2:
        raise ValueError("need >= 2 folds")
    mean, std = {}, {}
    for m in METRICS:
        vals = np.array([f[m] for f in per_fold if not math.isnan(f[m])], dtype=float)
        if len(vals) < len(per_fold):
            log.warning("%s undefined in %d fold(s); excluded", m, len(per_fold) - len(vals))
        mean[m] = float(vals.mean()) if len(vals) else math.nan
        std[m] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return FoldReport(tuple(dict(f) for f in per_fold), mean, std)


def format_mean_std(mean: float, std: float, digits: int = 1) -> str:
    return f"{mean:.{digits}f} ({std:.{digits}f})"


def accuracy_identity(sens: float, spec: float, n_pos: int, n_neg: int) -> float:
    """Accuracy implied by sensitivity/specificity and class counts."""
    return (sens * n_pos + spec * n_neg) / (n_pos + n_neg)


# -- results file --------------------------------------------------------------

def _clean(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def results_dict(model: str, ws: int | None, stride: int | None, report: FoldReport,
                 window_level: FoldReport | None = None, extra: Mapping | None = None) -> dict:
    out = {
        "schema": RESULTS_SCHEMA,
        "model": model,
        "ws": ws,
        "stride": stride,
        "per_fold": [{m: _clean(f[m]) for m in METRICS} for f in report.per_fold],
        "mean": {m: _clean(report.mean[m]) for m in METRICS},
        "std": {m: _clean(report.std[m]) for m in METRICS},
    }
    if window_level is not None:
        out["window_level"] = {
            "per_fold": [{m: _clean(f[m]) for m in METRICS} for f in window_level.per_fold],
            "mean": {m: _clean(window_level.mean[m]) for m in METRICS},
            "std": {m: _clean(window_level.std[m]) for m in METRICS},
        }
    if extra:
        out.update(extra)
    return out


def dump_results(results: dict) -> str:
    return json.dumps(results, indent=2, sort_keys=True) + "\n"


def load_results(path) -> dict:
    with open(path) as fh:
        res = json.load(fh)
    if res.get("schema") != RESULTS_SCHEMA:
        raise ValueError(f"{path}: results schema {res.get('schema')} != {RESULTS_SCHEMA}")
    return res


def report_from_results(res: Mapping) -> FoldReport:
    def _num(v):
        return math.nan if v is None else float(v)
    per_fold = tuple({m: _num(f[m]) for m in METRICS} for f in res["per_fold"])
    return FoldReport(per_fold, {m: _num(res["mean"][m]) for m in METRICS},
                      {m: _num(res["std"][m]) for m in METRICS})
