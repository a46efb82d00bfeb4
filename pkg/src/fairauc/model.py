"""Scoring functions and exact gradients of weighted pairwise surrogate risks.

The MLP is ``x -> ReLU(W1 x + b1) -> ReLU(W2 . + b2) -> w3 . + b3`` with every
hidden layer as wide as the input, followed by a batch normalization of the
scalar output with gamma=1, beta=0 held fixed.  Weight matrices are stored
(out, in).  The linear model has no output normalization.
"""
from __future__ import annotations

import base64
from dataclasses import dataclass, fields

import numpy as np

from .dataset import PAIRS
from .errors import ArgumentError, BatchTooSmallError, EmptyStratumError, NumericError
from .metrics import LOSSES
from .sampler import Batch

CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    kind = "mlp"

    @property
    def d(self) -> int:
        return self.W1.shape[1]


@dataclass
class LinearParams:
    w: np.ndarray
    b: np.ndarray

    kind = "linear"

    @property
    def d(self) -> int:
        return self.w.shape[0]


@dataclass
class NormState:
    running_mean: float = 0.0
    running_var: float = 1.0
    momentum: float = 0.1
    eps: float = 1e-5

    def copy(self) -> "NormState":
        return NormState(self.running_mean, self.running_var, self.momentum, self.eps)


def tensors(params) -> dict:
    return {f.name: getattr(params, f.name) for f in fields(params)}


def like(params, values: dict):
    return type(params)(**{k: np.asarray(v, dtype=np.float64) for k, v in values.items()})


def copy_params(params):
    return like(params, {k: v.copy() for k, v in tensors(params).items()})


def flatten(params) -> np.ndarray:
    return np.concatenate([v.ravel() for v in tensors(params).values()])


def unflatten(params, vec):
    out, start = {}, 0
    for k, v in tensors(params).items():
        out[k] = np.asarray(vec[start:start + v.size]).reshape(v.shape)
        start += v.size
    return like(params, out)


def init(d: int, seed: int, kind: str = "mlp"):
    """He-uniform weights (variance 2/fan_in), zero biases."""
    if d < 1:
        raise ArgumentError("input dimension must be >= 1")
    rng = np.random.default_rng(seed)

    def he(shape):
        bound = np.sqrt(6.0 / shape[-1])
        return rng.uniform(-bound, bound, size=shape)

    if kind == "linear":
        return LinearParams(he((d,)), np.zeros(()))
    if kind != "mlp":
        raise ArgumentError(f"unknown model kind {kind!r}")
    return MlpParams(he((d, d)), np.zeros(d), he((d, d)), np.zeros(d), he((d,)), np.zeros(()))


def _raw_forward(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ArgumentError(f"expected inputs with {params.d} columns, got shape {X.shape}")
    if isinstance(params, LinearParams):
        return X @ params.w + params.b, None
    h1 = X @ params.W1.T + params.b1
    a1 = np.maximum(h1, 0.0)
    h2 = a1 @ params.W2.T + params.b2
    a2 = np.maximum(h2, 0.0)
    r = a2 @ params.w3 + params.b3
    return r, (X, h1, a1, h2, a2)


def forward(params, norm: NormState | None, X, mode: str = "eval", update_stats: bool = True):
    """Scores for the rows of X.

    In ``train`` mode the MLP output is normalized with the batch mean and
    biased batch variance, and the running statistics move by ``momentum``
    (unless ``update_stats`` is False).  ``eval`` mode uses running statistics.
    """
    r, _ = _raw_forward(params, X)
    if isinstance(params, LinearParams):
        return r
    if mode == "train":
        if len(r) < 2:
            raise BatchTooSmallError("train-mode normalization needs at least 2 rows")
        mu, var = r.mean(), r.var()
        if update_stats:
            _update_stats(norm, mu, var)
        return (r - mu) / np.sqrt(var + norm.eps)
    if mode != "eval":
        raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    return (r - norm.running_mean) / np.sqrt(norm.running_var + norm.eps)


def _update_stats(norm, mu, var):
    norm.running_mean = (1 - norm.momentum) * norm.running_mean + norm.momentum * float(mu)
    norm.running_var = (1 - norm.momentum) * norm.running_var + norm.momentum * float(var)


def pairwise_risk_and_grad(params, norm, X, blocks, loss: str = "logistic",
                           update_stats: bool = True):
    """Risks and gradient of sum_k w_k * mean_{i in P_k, j in N_k} loss(s_i - s_j).

    ``blocks`` is a sequence of ``(pos_rows, neg_rows, weight)`` with row
    positions into X.  Scores come from one train-mode forward over all of X,
    and the gradient is back-propagated through the batch statistics.  The
    pairwise sums collapse into one coefficient per row, so the network is
    differentiated once per row rather than once per pair.
    """
    loss_fn, dloss = LOSSES[loss]
    raw, cache = _raw_forward(params, X)
    n = len(raw)
    if isinstance(params, MlpParams):
        if n < 2:
            raise BatchTooSmallError("train-mode normalization needs at least 2 rows")
        mu, var = raw.mean(), raw.var()
        sigma = np.sqrt(var + norm.eps)
        s = (raw - mu) / sigma
    else:
        s = raw
    if not np.all(np.isfinite(s)):
        raise NumericError("non-finite scores in forward pass")

    risks = np.zeros(len(blocks))
    g_s = np.zeros(n)
    for k, (P, N, w) in enumerate(blocks):
        P = np.asarray(P)
        N = np.asarray(N)
        diff = s[P][:, None] - s[N][None, :]
        risks[k] = loss_fn(diff).mean()
        if w == 0:
            continue
        c = dloss(diff) * (w / diff.size)
        np.add.at(g_s, P, c.sum(axis=1))
        np.add.at(g_s, N, -c.sum(axis=0))

    if isinstance(params, LinearParams):
        grad = LinearParams(X.T @ g_s if n else np.zeros(params.d), np.asarray(g_s.sum()))
        return risks, grad

    # Backward through (r - mean) / sqrt(var + eps) with biased variance.
    g_r = (g_s - g_s.mean() - s * np.mean(g_s * s)) / sigma
    Xc, h1, a1, h2, a2 = cache
    g_w3 = a2.T @ g_r
    g_b3 = np.asarray(g_r.sum())
    g_h2 = np.outer(g_r, params.w3) * (h2 > 0)
    g_W2 = g_h2.T @ a1
    g_b2 = g_h2.sum(axis=0)
    g_h1 = (g_h2 @ params.W2) * (h1 > 0)
    g_W1 = g_h1.T @ Xc
    g_b1 = g_h1.sum(axis=0)
    grad = MlpParams(g_W1, g_b1, g_W2, g_b2, g_w3, g_b3)
    if update_stats:
        _update_stats(norm, mu, var)
    return risks, grad


def check_simplex(lam, tol: float = 1e-9) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (4,) or np.any(lam < -tol) or abs(lam.sum() - 1.0) > tol:
        raise ArgumentError(f"weights {lam} are not on the probability simplex")
    return lam


def pair_blocks(batch: Batch, coef):
    """One block per group pair (positives of z vs negatives of z')."""
    return [(batch.local[(z, 1)], batch.local[(zp, -1)], float(c)) for (z, zp), c in zip(PAIRS, coef)]


def weighted_risk_and_grad(params, norm, batch: Batch, lam, loss: str = "logistic",
                           update_stats: bool = True):
    """Batch risk vector and gradient of lam . risks (lam on the simplex)."""
    lam = check_simplex(lam)
    return coef_risk_and_grad(params, norm, batch, lam, loss, update_stats)


def coef_risk_and_grad(params, norm, batch: Batch, coef, loss: str = "logistic",
                       update_stats: bool = True):
    """As :func:`weighted_risk_and_grad` for an arbitrary real coefficient vector."""
    for key, pos in batch.local.items():
        if len(pos) == 0:
            raise EmptyStratumError(key)
    return pairwise_risk_and_grad(params, norm, batch.features, pair_blocks(batch, coef),
                                  loss, update_stats)


def sgd_step(params, grad, eta: float, weight_decay: float = 0.0):
    """theta <- (1 - eta * weight_decay) * (theta - eta * grad)."""
    shrink = 1.0 - eta * weight_decay
    g = tensors(grad)
    return like(params, {k: shrink * (v - eta * g[k]) for k, v in tensors(params).items()})


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    # asarray keeps 0-d tensors 0-d; tobytes always writes C order
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(doc) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(doc["data"]), dtype="<f8")
    return raw.reshape(tuple(doc["shape"])).astype(np.float64)


def to_checkpoint(params, norm: NormState | None, meta: dict | None = None) -> dict:
    doc = {
        "version": CHECKPOINT_VERSION,
        "kind": params.kind,
        "d": params.d,
        "dtype": "float64-le",
        "encoding": "base64",
        "tensors": {k: _encode_array(v) for k, v in tensors(params).items()},
        "meta": meta or {},
    }
    if norm is not None and params.kind == "mlp":
        doc["norm"] = {k: _encode_array(np.asarray(getattr(norm, k), dtype=np.float64))
                       for k in ("running_mean", "running_var", "momentum", "eps")}
    return doc


def from_checkpoint(doc: dict):
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ArgumentError(f"unsupported checkpoint version {doc.get('version')!r}")
    cls = {"mlp": MlpParams, "linear": LinearParams}[doc["kind"]]
    params = cls(**{k: _decode_array(v) for k, v in doc["tensors"].items()})
    norm = None
    if "norm" in doc:
        norm = NormState(**{k: _decode_array(v).item() for k, v in doc["norm"].items()})
    return params, norm, doc.get("meta", {})
