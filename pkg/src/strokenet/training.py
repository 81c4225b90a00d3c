"""Fold training loop for the recurrent models and the 5-fold driver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import neural
from .core import SubjectRecord
from .dataset import TaskFeatures, WindowArrays, build_windows, fit_scaler
from .evaluation import (FoldAssignment, aggregate_folds, confusion_metrics, f1_score, fold_seed,
                         results_dict, stratified_subject_folds, subject_decision)
from .optim import (DECISION_THRESHOLD, EarlyStopping, OptimState, PlateauScheduler, adamw_step,
                    class_weights, clip_gradients, weighted_bce, weighted_bce_grad_logit)

log = logging.getLogger(__name__)

LOG_HEADER = ("step", "split", "loss", "f1", "lr", "grad_norm")


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 5e-5
    clip: float = 1.0
    early_stop_patience: int = 10
    plateau_patience: int = 5
    standardize_windows: bool = True
    k: int = 5


@dataclass
class FoldResult:
    fold: int
    params: dict
    log_rows: list = field(default_factory=list)
    window_probs: np.ndarray | None = None
    window_subjects: np.ndarray | None = None
    window_labels: np.ndarray | None = None
    subject_metrics: dict | None = None
    window_metrics: dict | None = None


def _decide(probs) -> np.ndarray:
    return (np.asarray(probs) >= DECISION_THRESHOLD).astype(int)


def subject_level(probs, subject_ids, labels) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Aggregate window probabilities into one decision per subject (sorted by id)."""
    ids = sorted(set(subject_ids))
    dec, lab = [], []
    for s in ids:
        m = subject_ids == s
        dec.append(subject_decision(probs[m]))
        lab.append(int(labels[m][0]))
    return ids, np.array(dec), np.array(lab)


def train_fold(fold: FoldAssignment, table: Sequence[TaskFeatures], subjects: Mapping[str, SubjectRecord],
               enc: neural.EncoderConfig, tc: TrainConfig, ws: int, stride: int, seed_base: int) -> FoldResult:
    seed = fold_seed(seed_base, fold.fold)
    rng = np.random.default_rng(seed)
    scaler = fit_scaler(table, fold.train)
    mk = lambda ids: build_windows(table, subjects, ids, scaler, ws, stride, tc.standardize_windows)
    train, val, test = mk(fold.train), mk(fold.val), mk(fold.test)
    if len(train) == 0:
        raise ValueError(f"fold {fold.fold}: no training windows")

    params = neural.init_params(enc, rng)
    weights = class_weights(train.labels)
    state = OptimState(lr=tc.lr, weight_decay=tc.weight_decay)
    sched = PlateauScheduler(patience=tc.plateau_patience)
    stopper = EarlyStopping(patience=tc.early_stop_patience)
    best_params = {k: v.copy() for k, v in params.items()}
    best_f1 = -math.inf
    rows = []

    n = len(train)
    n_batches = max(1, math.ceil(n / tc.batch_size))
    checkpoints = {n_batches // 2, n_batches} if n_batches > 1 else {1}
    step = 0
    stop = False
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        val_f1 = None
        for b in range(n_batches):
            idx = order[b * tc.batch_size:(b + 1) * tc.batch_size]
            batch = train.subset(idx)
            prob, trace = neural.forward(params, enc, batch.X, batch.task_ids, batch.statics,
                                         train_mode=True, rng=rng)
            loss = weighted_bce(prob, batch.labels, weights)
            if not math.isfinite(loss):
                raise NumericalFailure(f"fold {fold.fold}: non-finite loss at step {step}")
            grads = neural.backward(params, enc, trace,
                                    dlogit=weighted_bce_grad_logit(prob, batch.labels, weights))
            grads, gnorm = clip_gradients(grads, tc.clip)
            try:
                adamw_step(params, grads, state)
            except FloatingPointError as exc:
                raise NumericalFailure(f"fold {fold.fold}: {exc}") from None
            step += 1
            rows.append((step, "train", loss, f1_score(_decide(prob), batch.labels), state.lr, gnorm))

            if b + 1 in checkpoints and len(val):
                vp = neural.predict(params, enc, val.X, val.task_ids, val.statics)
                val_f1 = f1_score(_decide(vp), val.labels)
                rows.append((step, "val", weighted_bce(vp, val.labels, weights), val_f1, state.lr, gnorm))
                if val_f1 > best_f1:
                    best_f1 = val_f1
                    best_params = {k: v.copy() for k, v in params.items()}
                if stopper.update(val_f1) == "stop":
                    stop = True
                    break
        if val_f1 is not None:
            sched.step(state, val_f1)
        if stop:
            log.info("fold %d: early stop after epoch %d", fold.fold, epoch + 1)
            break
    if not len(val):
        best_params = params

    res = FoldResult(fold.fold, best_params, rows)
    if len(test):
        _score(res, best_params, enc, test)
    return res


def _score(res: FoldResult, params, enc: neural.EncoderConfig, test: WindowArrays) -> FoldResult:
    tp = neural.predict(params, enc, test.X, test.task_ids, test.statics)
    res.window_probs, res.window_subjects, res.window_labels = tp, test.subject_ids, test.labels
    _, dec, lab = subject_level(tp, test.subject_ids, test.labels)
    res.subject_metrics = confusion_metrics(dec, lab)
    res.window_metrics = confusion_metrics(_decide(tp), test.labels)
    return res


def evaluate_fold(fold: FoldAssignment, params, table: Sequence[TaskFeatures], subjects: Mapping[str, SubjectRecord],
                  enc: neural.EncoderConfig, ws: int, stride: int, standardize: bool = True) -> FoldResult:
    """Score saved fold parameters on that fold's test subjects (same scaler and windows as training)."""
    scaler = fit_scaler(table, fold.train)
    test = build_windows(table, subjects, fold.test, scaler, ws, stride, standardize)
    if not len(test):
        raise ValueError(f"fold {fold.fold}: no test windows")
    return _score(FoldResult(fold.fold, params), params, enc, test)


def _train_fold_star(args):
    return train_fold(*args)


def run_cv(table: Sequence[TaskFeatures], subjects: Sequence[SubjectRecord], enc: neural.EncoderConfig,
           tc: TrainConfig, ws: int, stride: int, seed_base: int, jobs: int = 1) -> list[FoldResult]:
    by_id = {s.subject_id: s for s in subjects}
    folds = stratified_subject_folds(subjects, tc.k, seed_base)
    args = [(f, table, by_id, enc, tc, ws, stride, seed_base) for f in folds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_train_fold_star, args))
    return [train_fold(*a) for a in args]


def cv_results(model_name: str, results: Sequence[FoldResult], ws: int, stride: int) -> dict:
    subj = aggregate_folds([r.subject_metrics for r in results])
    win = aggregate_folds([r.window_metrics for r in results])
    return results_dict(model_name, ws, stride, subj, win)
