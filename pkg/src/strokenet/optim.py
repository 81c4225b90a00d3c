"""Weighted BCE, AdamW, global-norm clipping, plateau LR schedule, early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PROB_CLAMP = 1e-7
DECISION_THRESHOLD = 0.5


def class_weights(labels) -> tuple[float, float]:
    """Inverse-frequency weights (w_HC, w_AD) = N / (2 N_c)."""
    y = np.asarray(labels).astype(int)
    n = len(y)
    n_ad = int((y == 1).sum())
    n_hc = n - n_ad
    if n_ad == 0 or n_hc == 0:
        raise ValueError("class_weights needs both classes present")
    return n / (2.0 * n_hc), n / (2.0 * n_ad)


def weighted_bce(probs, labels, weights=(1.0, 1.0)) -> float:
    p = np.clip(np.asarray(probs, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=float)
    w = np.where(y > 0.5, weights[1], weights[0])
    return float(np.mean(-w * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def weighted_bce_grad_logit(probs, labels, weights=(1.0, 1.0)) -> np.ndarray:
    """dL/dlogit of the batch-mean loss: w (p - y) / N."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    w = np.where(y > 0.5, weights[1], weights[0])
    return w * (p - y) / len(p)


@dataclass
class OptimState:
    lr: float = 1e-4
    weight_decay: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: OptimState) -> dict:
    """In-place AdamW update with decoupled decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, theta in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * theta
        theta -= state.lr * update
    return params


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: dict, max_norm: float = 1.0) -> tuple[dict, float]:
    """Scale all gradients by max_norm / norm when the global L2 norm exceeds max_norm.

    Returns the (possibly scaled) gradients and the pre-clip norm.
    """
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class PlateauScheduler:
    patience: int = 5
    factor: float = 0.5
    min_lr: float = 1e-6
    best: float = -math.inf
    bad_epochs: int = 0

    def step(self, state: OptimState, val_f1: float) -> float:
        if val_f1 > self.best:
            self.best = val_f1
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                state.lr = max(state.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return state.lr


def plateau_step(sched: PlateauScheduler, state: OptimState, val_f1: float) -> float:
    return sched.step(state, val_f1)


@dataclass
class EarlyStopping:
    patience: int = 10  # validations, i.e. 5 epochs at two per epoch
    best: float = -math.inf
    counter: int = 0

    def update(self, current: float) -> str:
        """Returns 'continue' or 'stop'."""
        if current > self.best:
            self.best = current
            self.counter = 0
            return "continue"
        self.counter += 1
        return "stop" if self.counter >= self.patience else "continue"


def early_stop_update(best_f1: float, current_f1: float, counter: int, patience: int = 10) -> tuple[str, float, int]:
    """Functional form of ``EarlyStopping.update``: (decision, best, counter)."""
    es = EarlyStopping(patience, best_f1, counter)
    return es.update(current_f1), es.best, es.counter
