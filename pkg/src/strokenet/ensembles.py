"""Stroke-level base learners and subject-level aggregation (MV, WMV, ranking, stacking).

Each task gets its own pool of base learners trained on that task's strokes
(robust-scaled with the fold's training statistics).  Every strategy reads
the same pools, so differences between them come from aggregation alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import AD, HC, SubjectRecord
from .dataset import TaskFeatures, fit_scaler
from .evaluation import (FoldAssignment, aggregate_folds, confusion_metrics, fold_seed,
                         results_dict, stratified_subject_folds)
from .preprocessing import robust_transform

log = logging.getLogger(__name__)

STRATEGIES = ("mv", "wmv", "ranking", "stacking")
LEARNER_KINDS = ("logistic", "decision_stump_forest")
MIN_TASK_STROKES = 10
MISSING_TASK_PROB = 0.5


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LogisticModel:
    """L2-regularized logistic regression fitted by Newton-Raphson (IRLS)."""

    def __init__(self, l2: float = 1.0, max_iter: int = 50, tol: float = 1e-8):
        self.l2, self.max_iter, self.tol = l2, max_iter, tol
        self.coef: np.ndarray | None = None
        self.intercept = 0.0

    def fit(self, X, y) -> "LogisticModel":
        X = np.asarray(X, float)
        y = np.asarray(y, float)
        n, d = X.shape
        A = np.hstack([X, np.ones((n, 1))])
        w = np.zeros(d + 1)
        reg = np.full(d + 1, self.l2)
        reg[-1] = 0.0  # intercept is not penalized
        for _ in range(self.max_iter):
            p = _sigmoid(A @ w)
            g = A.T @ (p - y) + reg * w
            Hm = (A * (p * (1 - p))[:, None]).T @ A + np.diag(reg) + 1e-9 * np.eye(d + 1)
            delta = np.linalg.solve(Hm, g)
            w -= delta
            if np.max(np.abs(delta)) < self.tol:
                break
        self.coef, self.intercept = w[:-1], float(w[-1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        if self.coef is None:
            raise RuntimeError("model is not trained")
        return _sigmoid(np.asarray(X, float) @ self.coef + self.intercept)


class StumpForest:
    """Bagged one-split trees on random feature subsets; probability = mean leaf frequency."""

    def __init__(self, n_stumps: int = 50, max_features: int | None = None, seed: int = 0):
        self.n_stumps, self.max_features, self.seed = n_stumps, max_features, seed
        self.stumps: list[tuple[int, float, float, float]] = []

    @staticmethod
    def _best_split(x, y):
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], y[order]
        n = len(ys)
        pos_left = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        total = ys.sum()
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            return None
        pl = pos_left / n_left
        pr = (total - pos_left) / (n - n_left)
        gini = n_left * pl * (1 - pl) + (n - n_left) * pr * (1 - pr)
        gini = np.where(valid, gini, np.inf)
        k = int(np.argmin(gini))
        return 0.5 * (xs[k] + xs[k + 1]), pl[k], pr[k], gini[k]

    def fit(self, X, y) -> "StumpForest":
        X, y = np.asarray(X, float), np.asarray(y, float)
        n, d = X.shape
        m = self.max_features or max(1, int(round(math.sqrt(d))))
        rng = np.random.default_rng(self.seed)
        self.stumps = []
        prior = float(y.mean())
        for _ in range(self.n_stumps):
            rows = rng.integers(0, n, n)
            cols = rng.choice(d, m, replace=False)
            best = None
            for c in sorted(cols):
                s = self._best_split(X[rows, c], y[rows])
                if s is not None and (best is None or s[3] < best[1][3]):
                    best = (c, s)
            if best is None:
                self.stumps.append((0, math.inf, prior, prior))
            else:
                c, (thr, pl, pr, _) = best
                self.stumps.append((int(c), float(thr), float(pl), float(pr)))
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not self.stumps:
            raise RuntimeError("model is not trained")
        X = np.asarray(X, float)
        out = np.zeros(len(X))
        for c, thr, pl, pr in self.stumps:
            out += np.where(X[:, c] <= thr, pl, pr)
        return out / len(self.stumps)


@dataclass
class BaseLearner:
    kind: str
    task_id: int
    model: object
    val_accuracy: float = math.nan

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.model.predict_proba(X), 0.0, 1.0)


def _make(kind: str, seed: int):
    if kind == "logistic":
        return LogisticModel()
    if kind == "decision_stump_forest":
        return StumpForest(seed=seed)
    raise ValueError(f"unknown learner kind {kind!r}")


def _rows(table, keep, labels_of, params):
    """Per-task stacked (X, y, subject ids) for the kept subjects."""
    out: dict[int, list] = {}
    for tf in table:
        if tf.subject_id in keep:
            X = robust_transform(tf.features, params)
            out.setdefault(tf.task_id, []).append((X, np.full(len(X), labels_of[tf.subject_id]),
                                                   np.full(len(X), tf.subject_id, dtype=object)))
    return {t: tuple(np.concatenate(p) for p in zip(*parts)) for t, parts in out.items()}


def train_base_learners(table: Sequence[TaskFeatures], subjects: Mapping[str, SubjectRecord],
                        fold: FoldAssignment, seed: int, kinds=LEARNER_KINDS, params=None) -> dict[int, list[BaseLearner]]:
    """One learner per (task, kind) on the fold's training strokes; accuracy on the holdout."""
    labels_of = {k: s.label for k, s in subjects.items()}
    if params is None:
        params = fit_scaler(table, fold.train)
    train = _rows(table, fold.train, labels_of, params)
    val = _rows(table, fold.val, labels_of, params)
    pools: dict[int, list[BaseLearner]] = {}
    for task in sorted(train):
        X, y, _ = train[task]
        if len(y) < MIN_TASK_STROKES or len(set(y.tolist())) < 2:
            log.warning("task %d: %d training strokes, learner skipped", task, len(y))
            continue
        pool = []
        for kind in kinds:
            learner = BaseLearner(kind, task, _make(kind, seed * 1000 + task).fit(X, y))
            if task in val:
                Xv, yv, _ = val[task]
                learner.val_accuracy = float(((learner.predict_proba(Xv) >= 0.5) == yv).mean())
            pool.append(learner)
        pools[task] = pool
    return pools


# -- aggregation -----------------------------------------------------------

def majority_vote(votes) -> int:
    v = np.asarray(votes, dtype=int)
    if v.size == 0:
        raise ValueError("no votes")
    ad = int((v == AD).sum())
    return AD if ad >= len(v) - ad else HC


def weighted_majority_vote(votes, weights) -> int:
    v = np.asarray(votes, dtype=int)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be >= 0")
    if not np.any(w > 0):
        log.warning("all weights are zero; falling back to majority vote")
        return majority_vote(v)
    ad, hc = w[v == AD].sum(), w[v == HC].sum()
    return AD if ad >= hc else HC


def ranking_aggregate(task_probs: Sequence[float], val_accuracies: Sequence[float]) -> int:
    """Borda-weighted mean of per-task probabilities; best-ranked task gets weight R."""
    p = np.asarray(task_probs, dtype=float)
    acc = np.asarray(val_accuracies, dtype=float)
    if p.size == 0:
        raise ValueError("no contributing tasks")
    R = len(p)
    order = np.argsort(-acc, kind="stable")  # rank 1 = highest accuracy
    weights = np.empty(R)
    weights[order] = R - np.arange(R)
    score = float(np.dot(weights, p) / weights.sum())
    return AD if score >= 0.5 else HC


def stacking_aggregate(task_vector, meta: LogisticModel | None) -> int:
    if meta is None or meta.coef is None:
        raise RuntimeError("meta-learner is not trained")
    p = float(meta.predict_proba(np.atleast_2d(task_vector))[0])
    return AD if p >= 0.5 else HC


# -- per-subject base outputs --------------------------------------------------

@dataclass
class SubjectOutputs:
    votes: list = field(default_factory=list)
    vote_weights: list = field(default_factory=list)
    task_probs: dict = field(default_factory=dict)  # task -> mean stroke probability over the pool


def _pool_accuracy(pool: Sequence[BaseLearner]) -> float:
    accs = [l.val_accuracy for l in pool if not math.isnan(l.val_accuracy)]
    return float(np.mean(accs)) if accs else 0.5


def subject_outputs(table, keep, pools, params) -> dict[str, SubjectOutputs]:
    out: dict[str, SubjectOutputs] = {}
    for tf in table:
        if tf.subject_id not in keep or tf.task_id not in pools:
            continue
        X = robust_transform(tf.features, params)
        so = out.setdefault(tf.subject_id, SubjectOutputs())
        probs = []
        for learner in pools[tf.task_id]:
            p = learner.predict_proba(X)
            probs.append(p)
            so.votes.extend((p >= 0.5).astype(int).tolist())
            w = 0.0 if math.isnan(learner.val_accuracy) else learner.val_accuracy
            so.vote_weights.extend([w] * len(p))
        so.task_probs[tf.task_id] = float(np.mean(probs))
    return out


def task_vector(so: SubjectOutputs, tasks: Sequence[int]) -> np.ndarray:
    return np.array([so.task_probs.get(t, MISSING_TASK_PROB) for t in tasks])


@dataclass
class EnsembleFoldResult:
    fold: int
    decisions: dict  # strategy -> {subject: label}
    labels: dict
    metrics: dict  # strategy -> metrics dict


def run_ensemble_fold(fold: FoldAssignment, table: Sequence[TaskFeatures], subjects: Mapping[str, SubjectRecord],
                      seed_base: int) -> EnsembleFoldResult:
    seed = fold_seed(seed_base, fold.fold)
    params = fit_scaler(table, fold.train)
    pools = train_base_learners(table, subjects, fold, seed, params=params)
    tasks = sorted(pools)
    task_acc = {t: _pool_accuracy(pools[t]) for t in tasks}

    train_out = subject_outputs(table, fold.train, pools, params)
    ids = sorted(train_out)
    meta = LogisticModel().fit(np.vstack([task_vector(train_out[s], tasks) for s in ids]),
                               np.array([subjects[s].label for s in ids]))

    test_out = subject_outputs(table, fold.test, pools, params)
    decisions = {k: {} for k in STRATEGIES}
    labels = {}
    for sid in sorted(test_out):
        so = test_out[sid]
        labels[sid] = subjects[sid].label
        decisions["mv"][sid] = majority_vote(so.votes)
        decisions["wmv"][sid] = weighted_majority_vote(so.votes, so.vote_weights)
        ts = sorted(so.task_probs)
        decisions["ranking"][sid] = ranking_aggregate([so.task_probs[t] for t in ts], [task_acc[t] for t in ts])
        decisions["stacking"][sid] = stacking_aggregate(task_vector(so, tasks), meta)
    order = sorted(labels)
    y = [labels[s] for s in order]
    metrics = {k: confusion_metrics([decisions[k][s] for s in order], y) for k in STRATEGIES}
    return EnsembleFoldResult(fold.fold, decisions, labels, metrics)


def run_ensemble_cv(table: Sequence[TaskFeatures], subjects: Sequence[SubjectRecord], seed_base: int,
                    k: int = 5) -> list[EnsembleFoldResult]:
    by_id = {s.subject_id: s for s in subjects}
    return [run_ensemble_fold(f, table, by_id, seed_base) for f in stratified_subject_folds(subjects, k, seed_base)]


def ensemble_results(results: Sequence[EnsembleFoldResult], strategy: str) -> dict:
    report = aggregate_folds([r.metrics[strategy] for r in results])
    return results_dict(strategy, None, None, report)
