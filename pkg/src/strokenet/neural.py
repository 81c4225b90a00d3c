"""Bidirectional RNN / LSTM / GRU encoders with exact hand-written gradients.

Everything is batched over the leading axis: inputs are ``(B, T, F)``
windows, ``(B,)`` task ids and ``(B, 4)`` statics.  Parameters live in a flat
``dict[str, ndarray]`` so the optimizer and the checkpoint writer can treat
them uniformly.

Gate matrices of the LSTM and GRU act on the concatenation ``[h_prev, x]``
and are stored as ``(H, H + D)``; the plain RNN keeps ``W_ih`` and ``W_hh``
separate.  With layer norm enabled, every gate pre-activation is normalized
and then scaled/shifted by its own gain and offset.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"SNCK"
CHECKPOINT_VERSION = 1

GATES = {"rnn": ("h",), "lstm": ("f", "i", "c", "o"), "gru": ("r", "z", "h")}


@dataclass(frozen=True)
class EncoderConfig:
    cell: str = "gru"
    hidden: int = 128
    bidirectional: bool = True
    dropout: float = 0.3
    embed_dim: int = 32
    n_tasks: int = 34
    feature_dim: int = 27
    n_statics: int = 4
    layer_norm: bool = True

    def __post_init__(self):
        if self.cell not in GATES:
            raise ValueError(f"cell must be one of {sorted(GATES)}, got {self.cell!r}")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.feature_dim + self.embed_dim

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)

    @property
    def fused_dim(self) -> int:
        return len(self.directions) * self.hidden + self.n_statics


# -- parameters -------------------------------------------------------------

def init_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    H, D = cfg.hidden, cfg.input_dim
    bound = 1.0 / np.sqrt(H)
    p: dict[str, np.ndarray] = {"embed": rng.normal(0.0, 1.0, (cfg.n_tasks, cfg.embed_dim))}
    for d in cfg.directions:
        if cfg.cell == "rnn":
            p[f"{d}.W_ih"] = rng.uniform(-bound, bound, (H, D))
            p[f"{d}.W_hh"] = rng.uniform(-bound, bound, (H, H))
            p[f"{d}.b_h"] = np.zeros(H)
        else:
            for g in GATES[cfg.cell]:
                p[f"{d}.W_{g}"] = rng.uniform(-bound, bound, (H, H + D))
                if cfg.cell == "lstm":
                    p[f"{d}.b_{g}"] = np.ones(H) if g == "f" else np.zeros(H)
        if cfg.layer_norm:
            for g in GATES[cfg.cell]:
                p[f"{d}.ln_g_{g}"] = np.ones(H)
                # a constant bias is cancelled by the normalization, so the
                # forget-gate offset carries the +1 instead
                p[f"{d}.ln_b_{g}"] = np.ones(H) if (cfg.cell, g) == ("lstm", "f") else np.zeros(H)
    nh = len(cfg.directions) * H
    w = np.zeros(cfg.fused_dim)
    w[:nh] = rng.uniform(-1.0 / np.sqrt(nh), 1.0 / np.sqrt(nh), nh)
    p["head.w"] = w
    p["head.b"] = np.zeros(1)
    return p


def zeros_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# -- primitives -------------------------------------------------------------

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _ln_fwd(a, g, b):
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _ln_bwd(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    da = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return da, (dy * xhat).sum(axis=0), dy.sum(axis=0)


class _Direction:
    """Parameter views for one direction of one cell type."""

    def __init__(self, cfg: EncoderConfig, params: dict, prefix: str):
        self.cfg, self.p, self.pre = cfg, params, prefix
        H = cfg.hidden
        self.gates = GATES[cfg.cell]
        if cfg.cell == "rnn":
            self.Wh = {"h": params[f"{prefix}.W_hh"]}
            self.Wx = {"h": params[f"{prefix}.W_ih"]}
            self.b = {"h": params[f"{prefix}.b_h"]}
        else:
            W = {g: params[f"{prefix}.W_{g}"] for g in self.gates}
            self.Wh = {g: W[g][:, :H] for g in self.gates}
            self.Wx = {g: W[g][:, H:] for g in self.gates}
            self.b = {g: params[f"{prefix}.b_{g}"] for g in self.gates} if cfg.cell == "lstm" else {}

    def pre_activation(self, g, h_in, xw_t):
        a = h_in @ self.Wh[g].T + xw_t
        if g in self.b:
            a = a + self.b[g]
        return a

    def norm(self, g, a):
        if not self.cfg.layer_norm:
            return a, None
        return _ln_fwd(a, self.p[f"{self.pre}.ln_g_{g}"], self.p[f"{self.pre}.ln_b_{g}"])

    def norm_bwd(self, g, dn, cache, grads):
        if cache is None:
            return dn
        da, dg, db = _ln_bwd(dn, self.p[f"{self.pre}.ln_g_{g}"], cache)
        grads[f"{self.pre}.ln_g_{g}"] += dg
        grads[f"{self.pre}.ln_b_{g}"] += db
        return da

    # one step forward; returns new state and a cache for backward
    def step(self, xw_t: dict, h, c=None):
        cell = self.cfg.cell
        if cell == "rnn":
            a = self.pre_activation("h", h, xw_t["h"])
            n, ln = self.norm("h", a)
            h_new = np.tanh(n)
            return h_new, None, (h, h_new, ln)
        if cell == "lstm":
            acts, lns = {}, {}
            for g in self.gates:
                n, lns[g] = self.norm(g, self.pre_activation(g, h, xw_t[g]))
                acts[g] = np.tanh(n) if g == "c" else sigmoid(n)
            c_new = acts["f"] * c + acts["i"] * acts["c"]
            tc = np.tanh(c_new)
            h_new = acts["o"] * tc
            return h_new, c_new, (h, c, acts, lns, tc)
        # gru
        nr, ln_r = self.norm("r", self.pre_activation("r", h, xw_t["r"]))
        nz, ln_z = self.norm("z", self.pre_activation("z", h, xw_t["z"]))
        r, z = sigmoid(nr), sigmoid(nz)
        rh = r * h
        nh, ln_h = self.norm("h", self.pre_activation("h", rh, xw_t["h"]))
        ht = np.tanh(nh)
        h_new = (1.0 - z) * h + z * ht
        return h_new, None, (h, r, z, rh, ht, ln_r, ln_z, ln_h)

    def step_bwd(self, cache, dh, dc, grads, dxw_t: dict):
        """Backprop one step; writes pre-activation grads into ``dxw_t``."""
        cell, pre = self.cfg.cell, self.pre
        Whk = (lambda g: f"{pre}.W_hh") if cell == "rnn" else (lambda g: f"{pre}.W_{g}")
        H = self.cfg.hidden

        def acc_wh(g, da, h_in):
            if cell == "rnn":
                grads[Whk(g)] += da.T @ h_in
            else:
                grads[Whk(g)][:, :H] += da.T @ h_in
            if g in self.b:
                grads[f"{pre}.b_{'h' if cell == 'rnn' else g}"] += da.sum(axis=0)

        if cell == "rnn":
            h, h_new, ln = cache
            da = self.norm_bwd("h", dh * (1.0 - h_new ** 2), ln, grads)
            acc_wh("h", da, h)
            dxw_t["h"] = da
            return da @ self.Wh["h"], None
        if cell == "lstm":
            h, c, acts, lns, tc = cache
            f, i, ct, o = acts["f"], acts["i"], acts["c"], acts["o"]
            dc_tot = dc + dh * o * (1.0 - tc ** 2)
            dn = {
                "f": dc_tot * c * f * (1.0 - f),
                "i": dc_tot * ct * i * (1.0 - i),
                "c": dc_tot * i * (1.0 - ct ** 2),
                "o": dh * tc * o * (1.0 - o),
            }
            dh_prev = np.zeros_like(h)
            for g in self.gates:
                da = self.norm_bwd(g, dn[g], lns[g], grads)
                acc_wh(g, da, h)
                dxw_t[g] = da
                dh_prev += da @ self.Wh[g]
            return dh_prev, dc_tot * f
        h, r, z, rh, ht, ln_r, ln_z, ln_h = cache
        dh_prev = dh * (1.0 - z)
        da_h = self.norm_bwd("h", dh * z * (1.0 - ht ** 2), ln_h, grads)
        acc_wh("h", da_h, rh)
        drh = da_h @ self.Wh["h"]
        dh_prev += drh * r
        da_z = self.norm_bwd("z", dh * (ht - h) * z * (1.0 - z), ln_z, grads)
        acc_wh("z", da_z, h)
        da_r = self.norm_bwd("r", drh * h * r * (1.0 - r), ln_r, grads)
        acc_wh("r", da_r, h)
        dh_prev += da_z @ self.Wh["z"] + da_r @ self.Wh["r"]
        dxw_t.update(h=da_h, z=da_z, r=da_r)
        return dh_prev, None

    def run(self, X):
        """Process (B, T, D) in time order; returns final h and per-step caches."""
        B, T, _ = X.shape
        H = self.cfg.hidden
        xw = {g: X @ self.Wx[g].T for g in self.gates}
        h = np.zeros((B, H))
        c = np.zeros((B, H)) if self.cfg.cell == "lstm" else None
        caches = []
        for t in range(T):
            h, c, cache = self.step({g: xw[g][:, t] for g in self.gates}, h, c)
            caches.append(cache)
        return h, caches

    def run_bwd(self, X, caches, dh_final, grads):
        """BPTT for one direction; returns dL/dX."""
        B, T, _ = X.shape
        H = self.cfg.hidden
        dxw = {g: np.zeros((B, T, H)) for g in self.gates}
        dh = dh_final
        dc = np.zeros_like(dh) if self.cfg.cell == "lstm" else None
        for t in range(T - 1, -1, -1):
            d_t: dict = {}
            dh, dc = self.step_bwd(caches[t], dh, dc, grads, d_t)
            for g in self.gates:
                dxw[g][:, t] = d_t[g]
        dX = np.zeros_like(X)
        for g in self.gates:
            dWx = np.einsum("bth,btd->hd", dxw[g], X)
            if self.cfg.cell == "rnn":
                grads[f"{self.pre}.W_ih"] += dWx
            else:
                grads[f"{self.pre}.W_{g}"][:, H:] += dWx
            dX += dxw[g] @ self.Wx[g]
        return dX


# -- public step functions (single-direction, batched) ----------------------

def rnn_step(x, h_prev, params, cfg: EncoderConfig, direction: str = "fwd"):
    return _Direction(cfg, params, direction).step({"h": x @ params[f"{direction}.W_ih"].T}, h_prev)[0]


def _gate_inputs(x, params, cfg, direction):
    H = cfg.hidden
    return {g: x @ params[f"{direction}.W_{g}"][:, H:].T for g in GATES[cfg.cell]}


def lstm_step(x, h_prev, c_prev, params, cfg: EncoderConfig, direction: str = "fwd"):
    h, c, _ = _Direction(cfg, params, direction).step(_gate_inputs(x, params, cfg, direction), h_prev, c_prev)
    return h, c


def gru_step(x, h_prev, params, cfg: EncoderConfig, direction: str = "fwd"):
    return _Direction(cfg, params, direction).step(_gate_inputs(x, params, cfg, direction), h_prev)[0]


# -- model -----------------------------------------------------------------

def embed_and_concat(X, task_ids, params, cfg: EncoderConfig):
    """Append the task embedding row to every step: (B, T, F) -> (B, T, F + E)."""
    X = np.asarray(X, dtype=float)
    ids = np.atleast_1d(np.asarray(task_ids))
    if np.any(ids < 1) or np.any(ids > cfg.n_tasks):
        raise ValueError(f"task id outside 1..{cfg.n_tasks}: {ids}")
    if X.shape[-1] != cfg.feature_dim:
        raise ValueError(f"feature width {X.shape[-1]} != {cfg.feature_dim}")
    e = params["embed"][ids - 1]
    return np.concatenate([X, np.broadcast_to(e[:, None, :], X.shape[:2] + (cfg.embed_dim,))], axis=-1)


@dataclass
class ForwardTrace:
    Xt: np.ndarray
    task_ids: np.ndarray
    statics: np.ndarray
    caches: dict
    h_final: np.ndarray
    mask: np.ndarray | None
    z: np.ndarray
    prob: np.ndarray


def encode_bidirectional(Xt, params, cfg: EncoderConfig):
    """[h_T ; <-h_1] for each window (just h_T when unidirectional)."""
    finals, caches = [], {}
    for d in cfg.directions:
        seq = Xt if d == "fwd" else Xt[:, ::-1]
        h, caches[d] = _Direction(cfg, params, d).run(seq)
        finals.append(h)
    return np.concatenate(finals, axis=-1), caches


def fuse_and_classify(h_final, statics, params, cfg: EncoderConfig, train_mode=False, rng=None):
    """Returns (prob, z, mask); dropout touches h_final only, inverted scaling."""
    mask = None
    if train_mode and cfg.dropout > 0:
        if rng is None:
            raise ValueError("train_mode dropout needs an rng")
        mask = (rng.random(h_final.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        h_final = h_final * mask
    z = np.concatenate([h_final, np.asarray(statics, dtype=float)], axis=-1)
    logit = z @ params["head.w"] + params["head.b"][0]
    return sigmoid(logit), z, mask


def forward(params, cfg: EncoderConfig, X, task_ids, statics, train_mode=False, rng=None):
    X = np.asarray(X, dtype=float)
    task_ids = np.atleast_1d(np.asarray(task_ids, dtype=int))
    statics = np.atleast_2d(np.asarray(statics, dtype=float))
    Xt = embed_and_concat(X, task_ids, params, cfg)
    h_final, caches = encode_bidirectional(Xt, params, cfg)
    prob, z, mask = fuse_and_classify(h_final, statics, params, cfg, train_mode, rng)
    return prob, ForwardTrace(Xt, task_ids, statics, caches, h_final, mask, z, prob)


def backward(params, cfg: EncoderConfig, trace: ForwardTrace, dprob=None, dlogit=None):
    """Exact gradients of a scalar loss given dL/dprob (or dL/dlogit) per window."""
    if dlogit is None:
        p = trace.prob
        dlogit = np.asarray(dprob, dtype=float) * p * (1.0 - p)
    grads = zeros_like(params)
    grads["head.w"] += trace.z.T @ dlogit
    grads["head.b"] += dlogit.sum()
    nh = len(cfg.directions) * cfg.hidden
    dh = np.outer(dlogit, params["head.w"][:nh])
    if trace.mask is not None:
        dh = dh * trace.mask
    H = cfg.hidden
    dXt = np.zeros_like(trace.Xt)
    for k, d in enumerate(cfg.directions):
        seq = trace.Xt if d == "fwd" else trace.Xt[:, ::-1]
        dseq = _Direction(cfg, params, d).run_bwd(seq, trace.caches[d], dh[:, k * H:(k + 1) * H], grads)
        dXt += dseq if d == "fwd" else dseq[:, ::-1]
    np.add.at(grads["embed"], trace.task_ids - 1, dXt[:, :, cfg.feature_dim:].sum(axis=1))
    return grads


def predict(params, cfg: EncoderConfig, X, task_ids, statics, batch_size: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = []
    for i in range(0, len(X), batch_size):
        p, _ = forward(params, cfg, X[i:i + batch_size], task_ids[i:i + batch_size], statics[i:i + batch_size])
        out.append(p)
    return np.concatenate(out) if out else np.empty(0)


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path_or_buf, cfg: EncoderConfig, params: dict[str, np.ndarray]) -> None:
    """Magic, version, JSON header (config + manifest), then little-endian float64 data."""
    manifest = [[k, list(v.shape)] for k, v in params.items()]
    header = json.dumps({"config": asdict(cfg), "manifest": manifest}, sort_keys=True).encode()
    flat = np.concatenate([v.ravel() for v in params.values()]).astype("<f8")
    blob = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + flat.tobytes()
    if isinstance(path_or_buf, io.IOBase):
        path_or_buf.write(blob)
    else:
        with open(path_or_buf, "wb") as fh:
            fh.write(blob)


def load_checkpoint(path_or_buf) -> tuple[EncoderConfig, dict[str, np.ndarray]]:
    if isinstance(path_or_buf, io.IOBase):
        blob = path_or_buf.read()
    else:
        with open(path_or_buf, "rb") as fh:
            blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + hlen])
    flat = np.frombuffer(blob[12 + hlen:], dtype="<f8")
    params, k = {}, 0
    for name, shape in header["manifest"]:
        n = int(np.prod(shape))
        params[name] = flat[k:k + n].reshape(shape).astype(float)
        k += n
    return EncoderConfig(**header["config"]), params
