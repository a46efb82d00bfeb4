"""AUC-family metrics and pairwise logistic surrogate risks.

Vectors indexed by group pair use the canonical order of ``PAIRS``:
(a,a), (a,b), (b,a), (b,b), where the first group is that of the positive
example and the second that of the negative example.

Ties: ``half`` counts a tied pair as 1/2 (Mann-Whitney midranks) and is the
default; ``strict`` counts it as 0, matching the indicator of a strict
inequality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dataset import PAIRS, STRATA, Dataset, group_stats
from .errors import DegenerateDatasetError, DegenerateError, EmptyClassError, EmptyStratumError
from .sampler import Batch
from .serialize import write_csv_rows, write_json

TIE_POLICIES = ("half", "strict")
_CHUNK = 1 << 22


def _check(pos, neg, tie_policy):
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise EmptyClassError(f"need nonempty classes (|pos|={len(pos)}, |neg|={len(neg)})")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ValueError("scores must be finite")
    return pos, neg


def auc_naive(pos, neg, tie_policy: str = "half") -> float:
    """Reference O(|pos| |neg|) AUC: mean pairwise indicator over all pairs."""
    pos, neg = _check(pos, neg, tie_policy)
    diff = pos[:, None] - neg[None, :]
    tie = 0.5 if tie_policy == "half" else 0.0
    wins = np.where(diff > 0, 1.0, np.where(diff == 0, tie, 0.0))
    return float(wins.mean())


def auc_fast(pos, neg, tie_policy: str = "half") -> float:
    """Mann-Whitney U / (|pos| |neg|) from a joint sort with midranks."""
    pos, neg = _check(pos, neg, tie_policy)
    n_pos, n_neg = len(pos), len(neg)
    values, inverse, counts = np.unique(np.concatenate([pos, neg]), return_inverse=True,
                                        return_counts=True)
    midrank = np.cumsum(counts) - (counts - 1) / 2.0
    u = midrank[inverse[:n_pos]].sum() - n_pos * (n_pos + 1) / 2.0
    if tie_policy == "strict":
        pos_at = np.bincount(inverse[:n_pos], minlength=len(values))
        neg_at = np.bincount(inverse[n_pos:], minlength=len(values))
        u -= 0.5 * float(np.dot(pos_at, neg_at))
    return float(u / (n_pos * n_neg))


def auc(pos, neg, tie_policy: str = "half") -> float:
    return auc_fast(pos, neg, tie_policy)


def _nonempty(ds: Dataset):
    for key in STRATA:
        if len(ds.strata[key]) == 0:
            raise EmptyStratumError(key)


def group_aucs(scores, ds: Dataset, tie_policy: str = "half") -> np.ndarray:
    """Group-level AUCs in ``PAIRS`` order: positives of z against negatives of z'."""
    scores = np.asarray(scores, dtype=np.float64)
    _nonempty(ds)
    return np.array([auc_fast(scores[ds.strata[(z, 1)]], scores[ds.strata[(zp, -1)]], tie_policy)
                     for z, zp in PAIRS])


def overall_auc(scores, ds: Dataset, tie_policy: str = "half") -> float:
    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = ds.labels == 1, ds.labels == -1
    if not pos.any() or not neg.any():
        raise DegenerateDatasetError("overall AUC needs at least one positive and one negative")
    return auc_fast(scores[pos], scores[neg], tie_policy)


def mixture_auc(aucs, priors) -> float:
    """Prior-weighted sum of group AUCs; equals the overall AUC for empirical priors."""
    return math.fsum(float(p) * float(a) for p, a in zip(priors, aucs))


# --------------------------------------------------------------------------
# Surrogate risks
# --------------------------------------------------------------------------


def logistic_loss(s):
    """log(1 + exp(-s)) without overflow.

    Equal to log1p(exp(-s)) for s >= 0 and -s + log1p(exp(s)) for s < 0,
    written as one branch-free expression.
    """
    s = np.asarray(s, dtype=np.float64)
    return np.maximum(-s, 0.0) + np.log1p(np.exp(-np.abs(s)))


def logistic_grad(s):
    """Derivative of the logistic loss: -1 / (1 + exp(s))."""
    return -expit(-np.asarray(s, dtype=np.float64))


LOSSES = {"logistic": (logistic_loss, logistic_grad)}


def pair_risk(pos_scores, neg_scores, loss: str = "logistic") -> float:
    """Mean of loss(s_i - s_j) over every positive/negative pair, chunked for memory."""
    fn = LOSSES[loss][0]
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    step = max(1, _CHUNK // max(1, len(neg_scores)))
    partial = [fn(pos_scores[i:i + step, None] - neg_scores[None, :]).sum()
               for i in range(0, len(pos_scores), step)]
    return math.fsum(partial) / (len(pos_scores) * len(neg_scores))


def _strata_of(owner):
    if isinstance(owner, Batch):
        return owner.local
    return owner.strata


def surrogate_risks(scores, owner, loss: str = "logistic") -> np.ndarray:
    """Pairwise surrogate risk per group pair.

    ``owner`` is a Dataset (scores aligned with its rows) or a Batch (scores
    aligned with ``batch.indices``).
    """
    scores = np.asarray(scores, dtype=np.float64)
    strata = _strata_of(owner)
    for key in STRATA:
        if len(strata[key]) == 0:
            raise EmptyStratumError(key)
    return np.array([pair_risk(scores[strata[(z, 1)]], scores[strata[(zp, -1)]], loss)
                     for z, zp in PAIRS])


def overall_risk(scores, ds: Dataset, loss: str = "logistic") -> float:
    scores = np.asarray(scores, dtype=np.float64)
    return pair_risk(scores[ds.labels == 1], scores[ds.labels == -1], loss)


# --------------------------------------------------------------------------
# ROC curves
# --------------------------------------------------------------------------


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def rows(self):
        return zip(self.thresholds, self.fpr, self.tpr)

    def to_csv(self, path) -> None:
        write_csv_rows(path, ["threshold", "fpr", "tpr"],
                       [(float(t), float(f), float(r)) for t, f, r in self.rows()])


def roc_curve(pos, neg, pos_weight=None, neg_weight=None) -> RocCurve:
    """Threshold sweep over distinct scores, descending, classifying score >= t as positive.

    Optional per-example weights give a weighted ROC; its area is the
    correspondingly weighted pairwise AUC.
    """
    pos, neg = _check(pos, neg, "half")
    wp = np.ones(len(pos)) if pos_weight is None else np.asarray(pos_weight, float)
    wn = np.ones(len(neg)) if neg_weight is None else np.asarray(neg_weight, float)
    values, inverse = np.unique(np.concatenate([pos, neg]), return_inverse=True)
    k = len(values)
    tp = np.bincount(inverse[:len(pos)], weights=wp, minlength=k)[::-1].cumsum()
    fp = np.bincount(inverse[len(pos):], weights=wn, minlength=k)[::-1].cumsum()
    tpr = np.concatenate([[0.0], tp / tp[-1]])
    fpr = np.concatenate([[0.0], fp / fp[-1]])
    tpr[-1] = fpr[-1] = 1.0
    thresholds = np.concatenate([[np.inf], values[::-1]])
    return RocCurve(thresholds, fpr, tpr)


def group_balanced_roc(scores, ds: Dataset) -> RocCurve:
    """ROC with each row weighted by 1/|its stratum|: every stratum counts equally.

    Its area is the plain mean of the four group-level AUCs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    _nonempty(ds)
    pos_idx = np.concatenate([ds.strata[("a", 1)], ds.strata[("b", 1)]])
    neg_idx = np.concatenate([ds.strata[("a", -1)], ds.strata[("b", -1)]])
    counts = ds.counts()
    w = np.empty(ds.n)
    for key, idx in ds.strata.items():
        w[idx] = 1.0 / counts[key]
    return roc_curve(scores[pos_idx], scores[neg_idx], w[pos_idx], w[neg_idx])


# --------------------------------------------------------------------------
# Subgroup AUCs and report
# --------------------------------------------------------------------------


def bnsp_bpsn(scores, ds: Dataset, tie_policy: str = "half"):
    """(BNSP_a, BNSP_b, BPSN_a, BPSN_b).

    BNSP_z ranks positives of group z against all negatives; BPSN_z ranks all
    positives against negatives of group z.  Empty subgroups give NaN.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos_all = scores[ds.labels == 1]
    neg_all = scores[ds.labels == -1]
    out = []
    for z in ("a", "b"):
        sub = ds.strata[(z, 1)]
        out.append(auc_fast(scores[sub], neg_all, tie_policy) if len(sub) else math.nan)
    for z in ("a", "b"):
        sub = ds.strata[(z, -1)]
        out.append(auc_fast(pos_all, scores[sub], tie_policy) if len(sub) else math.nan)
    return tuple(out)


def min_max_ratio(g) -> float:
    g = np.asarray(g, dtype=np.float64)
    top = g.max()
    if not top > 0:
        raise DegenerateError("maximum group AUC is 0; ratio undefined")
    return float(g.min() / top)


@dataclass
class MetricsReport:
    overall_auc: float
    group_aucs: np.ndarray
    min_max: float
    bnsp: tuple
    bpsn: tuple
    priors: np.ndarray
    counts: dict
    tie_policy: str = "half"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "overall_auc": float(self.overall_auc),
            "group_aucs": {f"{z}{zp}": float(v) for (z, zp), v in zip(PAIRS, self.group_aucs)},
            "min_max_ratio": float(self.min_max),
            "bnsp": {"a": float(self.bnsp[0]), "b": float(self.bnsp[1])},
            "bpsn": {"a": float(self.bpsn[0]), "b": float(self.bpsn[1])},
            "pair_priors": {f"{z}{zp}": float(p) for (z, zp), p in zip(PAIRS, self.priors)},
            "counts": {f"{z}{'+' if lab > 0 else '-'}": int(c) for (z, lab), c in self.counts.items()},
            "tie_policy": self.tie_policy,
        }
        doc.update(self.extra)
        return doc

    def to_json(self, path) -> None:
        write_json(path, self.to_dict())


def metrics_report(scores, ds: Dataset, tie_policy: str = "half") -> MetricsReport:
    g = group_aucs(scores, ds, tie_policy)
    b = bnsp_bpsn(scores, ds, tie_policy)
    return MetricsReport(
        overall_auc=overall_auc(scores, ds, tie_policy),
        group_aucs=g,
        min_max=min_max_ratio(g),
        bnsp=b[:2],
        bpsn=b[2:],
        priors=group_stats(ds).priors,
        counts=ds.counts(),
        tie_policy=tie_policy,
    )
