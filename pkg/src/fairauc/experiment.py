"""Run configuration and the per-seed experiment pipeline shared by the CLI and scripts.

One run for one seed: build the dataset, split it 60/20/20 within strata,
z-score numeric columns with training statistics, initialize (or warm start)
the model, train, then score the validation and test splits.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as M
from .dataset import (FIG1_SCORES, GAUSSIAN2D_REFERENCE, ColumnSchema, Gaussian2dSpec, GaussianCell,
                      ScoreSynthSpec, SplitRatios, Standardizer, load_csv, read_canonical_csv,
                      scores_to_dataset, split, synth_gaussian2d, synth_scores)
from .errors import ArgumentError, UsageError
from .fairtrain import ALGORITHMS, TrainerConfig, TrainResult, train
from .metrics import metrics_report

log = logging.getLogger(__name__)

SYNTH_NAMES = ("gaussian2d_paper", "scores_fig1", "custom")


# --------------------------------------------------------------------------
# Synthetic specs by name
# --------------------------------------------------------------------------


def _cells_from(doc, scalar_mean):
    keys = [(-1, "a"), (1, "a"), (-1, "b"), (1, "b")]
    counts = doc.get("counts", [1000] * 4)
    variances = doc.get("variances", [1.0] * 4)
    means = doc.get("means")
    if means is None or len(means) != 4 or len(counts) != 4 or len(variances) != 4:
        raise UsageError("custom spec needs 4 means, variances and counts ordered a-,a+,b-,b+")
    cells = {}
    for key, mu, var, cnt in zip(keys, means, variances, counts):
        mu = float(mu) if scalar_mean else tuple(float(v) for v in mu)
        cells[key] = GaussianCell(mu, float(var), int(cnt))
    return cells


def synth_dataset(name: str, params: dict | None, seed: int):
    """Synthetic dataset by name: the 2-D Gaussian mixture, the Figure-1 scores, or custom."""
    params = dict(params or {})
    if name == "gaussian2d_paper":
        spec = GAUSSIAN2D_REFERENCE
        if "count" in params:
            spec = Gaussian2dSpec({k: replace(c, count=int(params["count"])) for k, c in spec.cells.items()})
        return synth_gaussian2d(spec, seed)
    if name == "scores_fig1":
        return scores_to_dataset(synth_scores(FIG1_SCORES, seed))
    if name == "custom":
        if params.get("kind", "gaussian2d") == "scores":
            return scores_to_dataset(synth_scores(ScoreSynthSpec(_cells_from(params, True)), seed))
        return synth_gaussian2d(Gaussian2dSpec(_cells_from(params, False)), seed)
    raise UsageError(f"unknown synthetic spec {name!r}; choose from {SYNTH_NAMES}")


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------


@dataclass
class RunConfig:
    dataset: dict
    algorithm: str = "minimax"
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    split: SplitRatios = field(default_factory=SplitRatios)
    model: str = "mlp"
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs/default"
    init_from: str | None = None
    init_restarts: int = 1
    restart_iterations: int = 200
    label: str | None = None
    grid: dict | None = None
    base_dir: str = "."

    def validate(self) -> "RunConfig":
        src = self.dataset
        if not isinstance(src, dict) or len({"csv", "synthetic"} & set(src)) != 1:
            raise UsageError("dataset: exactly one of 'csv' or 'synthetic' is required")
        if "csv" in src:
            path = self.resolve(src["csv"].get("path", ""))
            if not path.exists():
                raise UsageError(f"dataset.csv.path: file {path} does not exist")
            if "schema" not in src["csv"]:
                raise UsageError("dataset.csv.schema: missing")
        else:
            name = src["synthetic"].get("name")
            if name not in SYNTH_NAMES:
                raise UsageError(f"dataset.synthetic.name: unknown spec {name!r}")
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"algorithm: must be one of {ALGORITHMS}")
        if self.model not in ("mlp", "linear"):
            raise UsageError("model: must be 'mlp' or 'linear'")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise UsageError("seeds: need a nonempty list of integers")
        if self.init_restarts < 1:
            raise UsageError("init_restarts: must be >= 1")
        try:
            self.trainer.validate()
        except ArgumentError as exc:
            raise UsageError(f"trainer.{exc}") from None
        if not self.trainer.eta_theta > 0:
            raise UsageError("trainer.eta_theta: step size must be > 0")
        return self

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "algorithm": self.algorithm,
            "trainer": self.trainer.to_dict(),
            "split": {"train": self.split.train, "val": self.split.val, "test": self.split.test},
            "model": self.model,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "init_from": self.init_from,
            "init_restarts": self.init_restarts,
            "restart_iterations": self.restart_iterations,
            "label": self.label,
            "grid": self.grid,
        }

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "RunConfig":
        doc = copy.deepcopy(doc)
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"{sorted(unknown)[0]}: unknown config field")
        if "dataset" not in doc:
            raise UsageError("dataset: missing")
        try:
            doc["trainer"] = TrainerConfig.from_dict(doc.get("trainer", {}))
        except (ArgumentError, TypeError) as exc:
            raise UsageError(f"trainer.{exc}") from None
        try:
            doc["split"] = SplitRatios(**doc.get("split", {}))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"split: {exc}") from None
        return cls(base_dir=str(base_dir), **doc).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: top level must be an object")
    return RunConfig.from_dict(doc, base_dir=path.parent)


# --------------------------------------------------------------------------
# Per-seed pipeline
# --------------------------------------------------------------------------


def load_source(cfg: RunConfig, seed: int):
    src = cfg.dataset
    if "csv" in src:
        csv_doc = src["csv"]
        path = cfg.resolve(csv_doc["path"])
        if csv_doc.get("canonical"):
            return read_canonical_csv(path)
        return load_csv(path, ColumnSchema.from_dict(csv_doc["schema"]))
    syn = src["synthetic"]
    return synth_dataset(syn["name"], syn.get("params"), int(syn.get("seed", seed)))


@dataclass
class Splits:
    train: object
    val: object
    test: object
    standardizer: Standardizer
    raw_test: object
    raw_val: object
    encoding: dict | None = None


def prepare(cfg: RunConfig, seed: int) -> Splits:
    ds = load_source(cfg, seed)
    tr, va, te = split(ds, cfg.split, seed)
    st = Standardizer.fit(tr)
    return Splits(st.transform(tr), st.transform(va), st.transform(te), st, te, va, ds.encoding)


def derived_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def select_init(splits: Splits, cfg: RunConfig, seed: int):
    """Draw ``init_restarts`` initializations and keep the one whose short AUC-maximization
    pilot reaches the lowest validation risk.  With one restart this is plain ``init``."""
    d = splits.train.d
    if cfg.init_restarts == 1:
        return M.init(d, seed, cfg.model), None
    pilot = replace(cfg.trainer, T=min(cfg.restart_iterations, cfg.trainer.T), patience=None,
                    output_rule="early_stop_best", group_mode="all", seed=seed)
    best = None
    for k in range(cfg.init_restarts):
        p0 = M.init(d, derived_seed(seed, k), cfg.model)
        res = train("aucmax", splits.train, splits.val, (p0, None), pilot)
        crit = min(r.val_criterion for r in res.trajectory.records)
        log.debug("seed %d restart %d pilot criterion %s", seed, k, crit)
        if best is None or crit < best[0]:
            best = (crit, p0)
    return best[1], None


@dataclass
class SeedRun:
    seed: int
    result: TrainResult
    splits: Splits
    test_report: object
    val_report: object

    def summary(self) -> dict:
        doc = self.result.summary()
        doc["test"] = self.test_report.to_dict()
        doc["val"] = self.val_report.to_dict()
        return doc


def run_seed(cfg: RunConfig, seed: int, model0=None) -> SeedRun:
    splits = prepare(cfg, seed)
    if model0 is None:
        model0 = select_init(splits, cfg, seed)
    params, norm = model0
    if params.d != splits.train.d:
        raise UsageError(f"initial model has d={params.d}, data has d={splits.train.d}")
    tcfg = replace(cfg.trainer, seed=seed)
    result = train(cfg.algorithm, splits.train, splits.val, (params, norm), tcfg)
    tie = tcfg.tie_policy
    test_scores = M.forward(result.params, result.norm, splits.test.features, mode="eval")
    val_scores = M.forward(result.params, result.norm, splits.val.features, mode="eval")
    return SeedRun(seed, result, splits, metrics_report(test_scores, splits.test, tie),
                   metrics_report(val_scores, splits.val, tie))


def checkpoint_doc(run: SeedRun, cfg: RunConfig) -> dict:
    meta = {
        "algorithm": cfg.algorithm,
        "seed": run.seed,
        "checkpoint_step": run.result.checkpoint_step,
        "output_rule": run.result.output_rule,
        "preprocess": run.splits.standardizer.to_dict(),
    }
    return M.to_checkpoint(run.result.params, run.result.norm, meta)
