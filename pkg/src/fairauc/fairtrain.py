"""Training loops: minimax fair AUC, plain AUC maximization and equal-AUC constraints.

All three share one loop.  Each iteration draws a batch, takes a gradient step
on the model with a coefficient vector over the four group-pair risks, and
then updates the dual variables from the risks of that same batch evaluated
at the pre-step parameters:

* ``minimax``  - coefficients lam on the simplex, exponential-weights ascent.
* ``aucmax``   - one block over all positive/negative pairs, no dual.
* ``equalauc`` - coefficients lam + (1 - sum(lam)) p with unconstrained
  multipliers lam moved by R_zz' - p.R.

An epoch is ceil(n_train / m) iterations; epoch e draws its batches from its
own random substream, so runs are reproducible batch for batch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import model as M
from .dataset import PAIRS, STRATA, Dataset, pair_prior_fractions
from .errors import ArgumentError, DivergenceError, EmptyStratumError
from .metrics import group_aucs, overall_auc, overall_risk, surrogate_risks
from .sampler import make_rng, stratified_sample, uniform_sample
from .serialize import write_csv_rows

log = logging.getLogger(__name__)

ALGORITHMS = ("minimax", "aucmax", "equalauc")
OUTPUT_RULES = ("early_stop_best", "uniform_iterate", "last")
GROUP_MODES = ("all", "intra_only", "inter_only")
DIVERGENCE_LIMIT = 1e6
# Substream reserved for drawing the uniform output iterate.
OUTPUT_STREAM = 2**32 - 1

TRAJECTORY_HEADER = [
    "step", "risk_aa", "risk_ab", "risk_ba", "risk_bb",
    "lambda_aa", "lambda_ab", "lambda_ba", "lambda_bb", "primal",
    "val_auc_aa", "val_auc_ab", "val_auc_ba", "val_auc_bb", "val_overall",
]


# --------------------------------------------------------------------------
# Simplex machinery
# --------------------------------------------------------------------------


def exp_weight_update(lam, risks, eta: float) -> np.ndarray:
    """lam_i exp(eta r_i) / sum_j lam_j exp(eta r_j).

    The exponent is shifted by its maximum over the support so nothing
    overflows.  Entries that are zero stay exactly zero, and a zero step
    (or equal risks) returns lam unchanged.
    """
    lam = np.asarray(lam, dtype=np.float64)
    r = np.asarray(risks, dtype=np.float64)
    support = lam > 0
    shift = np.zeros_like(lam)
    shift[support] = eta * r[support]
    shift[support] -= shift[support].max()
    if not shift.any():
        return lam.copy()
    w = np.where(support, lam * np.exp(shift), 0.0)
    return w / w.sum()


def group_mask(mode: str) -> np.ndarray:
    if mode == "all":
        return np.ones(4, dtype=bool)
    if mode == "intra_only":
        return np.array([z == zp for z, zp in PAIRS])
    if mode == "inter_only":
        return np.array([z != zp for z, zp in PAIRS])
    raise ArgumentError(f"group_mode must be one of {GROUP_MODES}")


def restrict_groups(lam, mode: str) -> np.ndarray:
    """Zero the pairs excluded by ``mode`` and renormalize over the rest."""
    lam = np.where(group_mask(mode), np.asarray(lam, dtype=np.float64), 0.0)
    return lam / lam.sum()


def lambda_init(ds: Dataset, group_mode: str = "all") -> np.ndarray:
    """Empirical pair priors n^{z+} n^{z'-} / (n^+ n^-), optionally restricted."""
    for key in STRATA:
        if len(ds.strata[key]) == 0:
            raise EmptyStratumError(key)
    fr = pair_prior_fractions(ds.counts())
    mask = group_mask(group_mode)
    total = sum((f for f, keep in zip(fr, mask) if keep), Fraction(0))
    return np.array([float(f / total) if keep else 0.0 for f, keep in zip(fr, mask)])


# --------------------------------------------------------------------------
# Configuration and results
# --------------------------------------------------------------------------


@dataclass
class TrainerConfig:
    T: int = 1000
    m: int = 256
    eta_theta: float = 0.1
    kappa: float = 1.0
    eta_lambda: float | None = None
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 1
    patience: int | None = None
    output_rule: str = "early_stop_best"
    group_mode: str = "all"
    loss: str = "logistic"
    tie_policy: str = "half"

    @property
    def eta_lam(self) -> float:
        return self.kappa * self.eta_theta if self.eta_lambda is None else self.eta_lambda

    def validate(self, n_train: int | None = None) -> "TrainerConfig":
        if not isinstance(self.T, int) or self.T < 1:
            raise ArgumentError("T: iteration budget must be an integer >= 1")
        if not isinstance(self.m, int) or self.m < 1:
            raise ArgumentError("m: batch size must be an integer >= 1")
        if n_train is not None and self.m > n_train:
            raise ArgumentError(f"m: batch size {self.m} exceeds training size {n_train}")
        # 0 is allowed here: it freezes the model, which isolates the dual dynamics
        if not self.eta_theta >= 0:
            raise ArgumentError("eta_theta: step size must be >= 0")
        if self.eta_lambda is not None and not self.eta_lambda >= 0:
            raise ArgumentError("eta_lambda: step size must be >= 0")
        if not self.kappa >= 0:
            raise ArgumentError("kappa: step ratio must be >= 0")
        if self.weight_decay < 0:
            raise ArgumentError("weight_decay: must be >= 0")
        if self.eval_every < 1:
            raise ArgumentError("eval_every: must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ArgumentError("patience: must be >= 1 or null")
        if self.output_rule not in OUTPUT_RULES:
            raise ArgumentError(f"output_rule: must be one of {OUTPUT_RULES}")
        if self.group_mode not in GROUP_MODES:
            raise ArgumentError(f"group_mode: must be one of {GROUP_MODES}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc) -> "TrainerConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ArgumentError(f"{sorted(unknown)[0]}: unknown trainer field")
        return cls(**doc)


@dataclass
class TrajectoryRecord:
    step: int
    epoch: int
    train_risks: np.ndarray
    lam: np.ndarray
    primal: float
    val_aucs: np.ndarray
    val_overall: float
    val_criterion: tuple

    def row(self):
        return [self.step, *map(float, self.train_risks), *map(float, self.lam),
                float(self.primal), *map(float, self.val_aucs), float(self.val_overall)]


@dataclass
class Trajectory:
    records: list = field(default_factory=list)

    def append(self, rec: TrajectoryRecord):
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("trajectory steps must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def to_csv(self, path) -> None:
        write_csv_rows(path, TRAJECTORY_HEADER, [r.row() for r in self.records])


@dataclass
class TrainResult:
    params: object
    norm: M.NormState | None
    trajectory: Trajectory
    checkpoint_step: int
    output_rule: str
    algorithm: str
    config: TrainerConfig
    lam: np.ndarray
    stopped_early: bool = False

    @property
    def seed(self) -> int:
        return self.config.seed

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "checkpoint": {"rule": self.output_rule, "step": self.checkpoint_step},
            "stopped_early": self.stopped_early,
            "final_lambda": {f"{z}{zp}": float(v) for (z, zp), v in zip(PAIRS, self.lam)},
            "steps_recorded": len(self.trajectory),
        }


# --------------------------------------------------------------------------
# Evaluation helpers
# --------------------------------------------------------------------------


def score(params, norm, ds: Dataset) -> np.ndarray:
    return M.forward(params, norm, ds.features, mode="eval")


def primal_objective(params, norm, ds: Dataset, loss: str = "logistic", mask=None) -> float:
    """Max over the simplex of lam . R(theta), i.e. the largest full-sample group risk."""
    r = surrogate_risks(score(params, norm, ds), ds, loss)
    if mask is not None:
        r = r[mask]
    return float(r.max())


def _criterion(algorithm, risks, overall, mask):
    if algorithm == "minimax":
        return (float(risks[mask].max()),)
    if algorithm == "aucmax":
        return (float(overall),)
    return (float(np.max(np.abs(risks[mask] - overall)) + overall), float(overall))


# --------------------------------------------------------------------------
# Main loop
# --------------------------------------------------------------------------


def _train(algorithm, train: Dataset, val: Dataset, model0, cfg: TrainerConfig) -> TrainResult:
    if algorithm not in ALGORITHMS:
        raise ArgumentError(f"unknown algorithm {algorithm!r}")
    cfg.validate(train.n)
    for ds in (train, val):
        for key in STRATA:
            if len(ds.strata[key]) == 0:
                raise EmptyStratumError(key)

    params, norm = model0
    params = M.copy_params(params)
    norm = norm.copy() if norm is not None else M.NormState()
    mask = group_mask(cfg.group_mode)
    priors = lambda_init(train)
    if algorithm == "minimax":
        lam = lambda_init(train, cfg.group_mode)
    elif algorithm == "aucmax":
        lam = priors.copy()
    else:
        lam = np.zeros(4)

    epoch_len = -(-train.n // cfg.m)
    record_every = cfg.eval_every * epoch_len
    tau = None
    if cfg.output_rule == "uniform_iterate":
        tau = int(make_rng(cfg.seed, OUTPUT_STREAM).integers(1, cfg.T + 1))

    trajectory = Trajectory()
    best = None  # (criterion, step, params, norm)
    chosen = None
    since_best = 0
    stopped_early = False

    def record(step):
        nonlocal best, since_best
        tr = surrogate_risks(score(params, norm, train), train, cfg.loss)
        v_scores = score(params, norm, val)
        v_risks = surrogate_risks(v_scores, val, cfg.loss)
        v_overall_risk = overall_risk(v_scores, val, cfg.loss)
        crit = _criterion(algorithm, v_risks, v_overall_risk, mask)
        rec = TrajectoryRecord(
            step=step, epoch=step // epoch_len, train_risks=tr, lam=lam.copy(),
            primal=float(tr[mask].max()),
            val_aucs=group_aucs(v_scores, val, cfg.tie_policy),
            val_overall=overall_auc(v_scores, val, cfg.tie_policy),
            val_criterion=crit,
        )
        trajectory.append(rec)
        if not np.all(np.isfinite(tr)) or tr.max() > DIVERGENCE_LIMIT:
            raise DivergenceError(f"training risk diverged at step {step}", trajectory)
        if best is None or crit < best[0]:
            best = (crit, step, M.copy_params(params), norm.copy())
            since_best = 0
        else:
            since_best += cfg.eval_every
        log.debug("%s step %d crit %s val_aucs %s", algorithm, step, crit, rec.val_aucs)

    record(0)
    rng = None
    for t in range(1, cfg.T + 1):
        epoch = (t - 1) // epoch_len
        if (t - 1) % epoch_len == 0:
            rng = make_rng(cfg.seed, epoch)
        if algorithm == "minimax":
            batch = stratified_sample(train, cfg.m, rng)
            risks, grad = M.weighted_risk_and_grad(params, norm, batch, lam, cfg.loss)
        elif algorithm == "aucmax":
            batch = uniform_sample(train, cfg.m, rng, require=("class",))
            pos = np.concatenate([batch.local[("a", 1)], batch.local[("b", 1)]])
            neg = np.concatenate([batch.local[("a", -1)], batch.local[("b", -1)]])
            _, grad = M.pairwise_risk_and_grad(params, norm, batch.features, [(pos, neg, 1.0)], cfg.loss)
            risks = None
        else:
            batch = uniform_sample(train, cfg.m, rng, require=("strata",))
            coef = lam + (1.0 - lam.sum()) * priors
            risks, grad = M.coef_risk_and_grad(params, norm, batch, coef, cfg.loss)

        if risks is not None and (not np.all(np.isfinite(risks)) or risks.max() > DIVERGENCE_LIMIT):
            raise DivergenceError(f"batch risk diverged at step {t}", trajectory)
        params = M.sgd_step(params, grad, cfg.eta_theta, cfg.weight_decay)

        if algorithm == "minimax":
            lam = exp_weight_update(lam, risks, cfg.eta_lam)
        elif algorithm == "equalauc":
            lam = lam + cfg.eta_lam * (risks - float(priors @ risks)) * mask

        if t == tau:
            chosen = (t, M.copy_params(params), norm.copy())
        if t % record_every == 0 or t == cfg.T:
            record(t)
            if cfg.patience is not None and since_best >= cfg.patience:
                stopped_early = True
                log.info("%s: early stop at step %d (best step %d)", algorithm, t, best[1])
                break

    if cfg.output_rule == "early_stop_best":
        step, out_params, out_norm = best[1], best[2], best[3]
    elif cfg.output_rule == "uniform_iterate" and chosen is not None:
        step, out_params, out_norm = chosen
    else:
        step, out_params, out_norm = trajectory[-1].step, params, norm
    return TrainResult(out_params, out_norm, trajectory, step, cfg.output_rule, algorithm,
                       cfg, lam, stopped_early)


def minimax_fair_auc(train: Dataset, val: Dataset, model0, cfg: TrainerConfig) -> TrainResult:
    """Stochastic gradient descent on the model, mirror ascent on the group weights."""
    return _train("minimax", train, val, model0, cfg)


def auc_max(train: Dataset, val: Dataset, model0, cfg: TrainerConfig) -> TrainResult:
    """Mini-batch SGD on the overall pairwise risk, ignoring groups."""
    return _train("aucmax", train, val, model0, cfg)


def equal_auc(train: Dataset, val: Dataset, model0, cfg: TrainerConfig) -> TrainResult:
    """Gradient descent-ascent on the Lagrangian of 'every group risk equals the overall risk'."""
    return _train("equalauc", train, val, model0, cfg)


TRAINERS = {"minimax": minimax_fair_auc, "aucmax": auc_max, "equalauc": equal_auc}


def train(algorithm: str, train_ds: Dataset, val_ds: Dataset, model0, cfg: TrainerConfig) -> TrainResult:
    return _train(algorithm, train_ds, val_ds, model0, cfg)


# --------------------------------------------------------------------------
# Seed sweeps
# --------------------------------------------------------------------------


@dataclass
class SeedAggregate:
    per_seed: dict
    failures: dict
    overall_mean: float
    overall_std: float
    min_max_mean: float
    min_max_std: float

    @property
    def n_success(self) -> int:
        return len(self.per_seed)

    def to_dict(self) -> dict:
        return {
            "n_success": self.n_success,
            "n_failed": len(self.failures),
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "overall": {"mean": self.overall_mean, "std": self.overall_std},
            "min_max": {"mean": self.min_max_mean, "std": self.min_max_std},
            "per_seed": {str(k): v for k, v in sorted(self.per_seed.items())},
        }


def aggregate(per_seed: dict, failures: dict | None = None) -> SeedAggregate:
    """Mean and population standard deviation of overall AUC and min/max ratio."""
    seeds = sorted(per_seed)
    overall = np.array([per_seed[s]["overall_auc"] for s in seeds], dtype=np.float64)
    ratio = np.array([per_seed[s]["min_max_ratio"] for s in seeds], dtype=np.float64)
    stat = (lambda a: (float(a.mean()), float(a.std()))) if len(seeds) else (lambda a: (math.nan, math.nan))
    return SeedAggregate({s: per_seed[s] for s in seeds}, dict(failures or {}),
                         *stat(overall), *stat(ratio))


def seed_sweep(run, seeds, jobs: int = 1) -> SeedAggregate:
    """Call ``run(seed) -> report dict`` for every seed; failures are recorded, not raised."""
    if not seeds:
        raise ArgumentError("seed_sweep needs at least one seed")
    per_seed, failures = {}, {}
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {s: pool.submit(run, s) for s in seeds}
            for s, fut in futures.items():
                try:
                    per_seed[s] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported per seed
                    failures[s] = f"{type(exc).__name__}: {exc}"
    else:
        for s in seeds:
            try:
                per_seed[s] = run(s)
            except Exception as exc:  # noqa: BLE001 - reported per seed
                log.warning("seed %s failed: %s", s, exc)
                failures[s] = f"{type(exc).__name__}: {exc}"
    return aggregate(per_seed, failures)


def with_seed(cfg: TrainerConfig, seed: int) -> TrainerConfig:
    return replace(cfg, seed=seed)
