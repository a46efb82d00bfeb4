"""Grouped binary datasets: loading, encoding, stratified splitting and synthesis.

Groups are stored as small integers (0 for group ``a``, 1 for group ``b``) and
labels as +1/-1.  Every dataset carries its (group, label) strata, which the
sampler, the metrics and the trainers all index into.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateDatasetError, ParseError, SchemaError, SplitError
from .serialize import write_csv_rows

log = logging.getLogger(__name__)

GROUPS = ("a", "b")
LABELS = (1, -1)
# Canonical stratum order; rows of synthetic data and batch layouts follow it.
STRATA = (("a", 1), ("a", -1), ("b", 1), ("b", -1))
# Ordered (positive group, negative group) pairs shared by lambda, risks and AUCs.
PAIRS = (("a", "a"), ("a", "b"), ("b", "a"), ("b", "b"))

MISSING_TOKENS = frozenset({"", "?", "na", "nan", "null"})


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of features, +/-1 labels and a/b groups."""

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    feature_names: tuple = ()
    numeric_columns: tuple = ()
    encoding: dict | None = None
    strata: dict = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels).astype(np.int8)
        g = np.asarray(self.groups)
        if g.dtype.kind in "UO":
            g = np.where(g == "a", 0, np.where(g == "b", 1, -1))
        g = g.astype(np.int8)
        if X.ndim != 2 or len(y) != len(X) or len(g) != len(X):
            raise ValueError("features, labels and groups must have matching lengths")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be +1 or -1")
        if not np.all((g == 0) | (g == 1)):
            raise ValueError("groups must be 'a'/'b' (0/1)")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match feature width")
        for arr in (X, y, g):
            arr.setflags(write=False)
        strata = {}
        for z, lab in STRATA:
            idx = np.flatnonzero((g == GROUPS.index(z)) & (y == lab))
            idx.setflags(write=False)
            strata[(z, lab)] = idx
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "numeric_columns", tuple(int(c) for c in self.numeric_columns))
        object.__setattr__(self, "strata", strata)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def counts(self) -> dict:
        return {key: len(idx) for key, idx in self.strata.items()}

    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == -1)

    def group_names(self) -> np.ndarray:
        return np.array(GROUPS)[self.groups]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            self.features[index],
            self.labels[index],
            self.groups[index],
            feature_names=self.feature_names,
            numeric_columns=self.numeric_columns,
            encoding=self.encoding,
        )

    def with_features(self, X) -> "Dataset":
        return Dataset(X, self.labels, self.groups, self.feature_names,
                       self.numeric_columns, self.encoding)


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


@dataclass
class ColumnSchema:
    """How to turn CSV columns into features, labels and groups.

    ``group_b`` may be ``None`` (the column must then hold exactly one other
    value) or ``"*"`` (every non-``a`` value maps to group ``b``).  The same
    rule applies to ``label_negative``.  Every header column must appear in
    exactly one list unless ``drop_columns`` contains ``"*"``, which drops
    all columns not named elsewhere.
    """

    label_column: str
    label_positive: str | list
    group_column: str
    group_a: str | list
    categorical_columns: list = field(default_factory=list)
    numeric_columns: list = field(default_factory=list)
    drop_columns: list = field(default_factory=list)
    label_negative: str | list | None = None
    group_b: str | list | None = None
    # cell values treated as missing (case-insensitive); None means MISSING_TOKENS
    missing_values: list | None = None

    def __post_init__(self):
        if self.label_column == self.group_column:
            raise SchemaError("label and group columns must differ")
        seen = {}
        for kind in ("categorical_columns", "numeric_columns", "drop_columns"):
            for col in getattr(self, kind):
                if col in (self.label_column, self.group_column):
                    raise SchemaError(f"column {col!r} is the label/group column and cannot be listed in {kind}")
                if col in seen:
                    raise SchemaError(f"column {col!r} listed in both {seen[col]} and {kind}")
                seen[col] = kind

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ColumnSchema":
        try:
            return cls(**doc)
        except TypeError as exc:
            raise SchemaError(str(exc)) from None


def _as_set(value):
    if value is None:
        return None
    if isinstance(value, str):
        return {value}
    return {str(v) for v in value}


def _binary_mapper(column, first_values, second_values, first, second):
    """Map raw cell strings onto two codes, enforcing a closed vocabulary."""
    inferred = []

    def mapper(raw):
        if raw in first_values:
            return first
        if second_values is None:
            if not inferred:
                inferred.append(raw)
            elif raw != inferred[0]:
                raise ValueError(
                    f"column {column!r}: unexpected value {raw!r} "
                    f"(already mapped {sorted(first_values)} and {inferred[0]!r})")
            return second
        if second_values == {"*"} or raw in second_values:
            return second
        raise ValueError(f"column {column!r}: value {raw!r} is outside the declared mapping")

    mapper.inferred = inferred
    return mapper


def load_csv(path, schema: ColumnSchema) -> Dataset:
    """Read a headed CSV file and one-hot encode it according to ``schema``.

    Categorical columns expand to one indicator per observed category, in
    order of first appearance.  Rows with a missing retained cell are dropped.
    The returned dataset's ``encoding`` map records every choice made.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    drop_rest = "*" in schema.drop_columns
    needed = [schema.label_column, schema.group_column, *schema.categorical_columns,
              *schema.numeric_columns, *(c for c in schema.drop_columns if c != "*")]
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    listed = set(needed)
    unlisted = [c for c in header if c not in listed]
    if unlisted and not drop_rest:
        raise SchemaError(f"{path}: columns {unlisted} are not assigned to any schema list")

    col = {name: j for j, name in enumerate(header)}
    retained = [schema.label_column, schema.group_column,
                *schema.categorical_columns, *schema.numeric_columns]
    missing = MISSING_TOKENS if schema.missing_values is None else {v.lower() for v in schema.missing_values}
    kept, dropped = [], 0
    for i, row in enumerate(rows):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=i)
        cells = [c.strip() for c in row]
        if any(cells[col[c]].lower() in missing for c in retained):
            dropped += 1
            continue
        kept.append((i, cells))
    if dropped:
        log.info("%s: dropped %d rows with missing values", path, dropped)

    label_of = _binary_mapper(schema.label_column, _as_set(schema.label_positive),
                              _as_set(schema.label_negative), 1, -1)
    group_of = _binary_mapper(schema.group_column, _as_set(schema.group_a),
                              _as_set(schema.group_b), 0, 1)

    categories = {c: {} for c in schema.categorical_columns}
    for _, cells in kept:
        for c in schema.categorical_columns:
            categories[c].setdefault(cells[col[c]], len(categories[c]))

    # Feature layout follows header order.
    layout, names, numeric_idx = [], [], []
    for name in header:
        if name in categories:
            for cat in categories[name]:
                layout.append((name, cat))
                names.append(f"{name}={cat}")
        elif name in schema.numeric_columns:
            numeric_idx.append(len(names))
            layout.append((name, None))
            names.append(name)
    offsets = {}
    for j, (name, cat) in enumerate(layout):
        offsets.setdefault(name, j)

    X = np.zeros((len(kept), len(layout)))
    y = np.empty(len(kept), dtype=np.int8)
    g = np.empty(len(kept), dtype=np.int8)
    for r, (i, cells) in enumerate(kept):
        y[r] = label_of(cells[col[schema.label_column]])
        g[r] = group_of(cells[col[schema.group_column]])
        for name in schema.numeric_columns:
            raw = cells[col[name]]
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(f"column {name!r}: cannot parse {raw!r} as a number", row=i) from None
            if not math.isfinite(value):
                raise ParseError(f"column {name!r}: non-finite value {raw!r}", row=i)
            X[r, offsets[name]] = value
        for name in schema.categorical_columns:
            X[r, offsets[name] + categories[name][cells[col[name]]]] = 1.0

    encoding = {
        "source": str(path),
        "feature_names": names,
        "numeric": list(schema.numeric_columns),
        "categorical": {c: list(cats) for c, cats in categories.items()},
        "label": {"column": schema.label_column, "positive": schema.label_positive,
                  "negative": schema.label_negative if schema.label_negative is not None
                  else (label_of.inferred[0] if label_of.inferred else None)},
        "group": {"column": schema.group_column, "a": schema.group_a,
                  "b": schema.group_b if schema.group_b is not None
                  else (group_of.inferred[0] if group_of.inferred else None)},
        "dropped_rows": dropped,
    }
    return Dataset(X, y, g, feature_names=tuple(names),
                   numeric_columns=tuple(numeric_idx), encoding=encoding)


def write_csv(ds: Dataset, path) -> None:
    """Write ``ds`` in the canonical ``x0..x{d-1},label,group`` layout."""
    header = [f"x{j}" for j in range(ds.d)] + ["label", "group"]
    rows = ([*map(float, ds.features[i]), f"{int(ds.labels[i]):+d}", GROUPS[ds.groups[i]]]
            for i in range(ds.n))
    write_csv_rows(path, header, rows)


def read_canonical_csv(path) -> Dataset:
    """Read a file produced by :func:`write_csv` (all feature columns numeric)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    features = [h for h in header if h not in ("label", "group")]
    schema = ColumnSchema(label_column="label", label_positive=["+1", "1"], label_negative=["-1"],
                          group_column="group", group_a="a", group_b="b",
                          numeric_columns=features)
    ds = load_csv(path, schema)
    return Dataset(ds.features, ds.labels, ds.groups, numeric_columns=range(ds.d))


# --------------------------------------------------------------------------
# Standardization
# --------------------------------------------------------------------------


@dataclass
class Standardizer:
    """Per-column z-scoring of numeric features, fitted on a training split."""

    columns: tuple
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> "Standardizer":
        cols = tuple(ds.numeric_columns)
        sub = ds.features[:, list(cols)]
        mean = sub.mean(axis=0) if cols else np.zeros(0)
        scale = sub.std(axis=0) if cols else np.ones(0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(cols, mean, scale)

    def transform(self, ds: Dataset) -> Dataset:
        if not self.columns:
            return ds
        X = ds.features.copy()
        cols = list(self.columns)
        X[:, cols] = (X[:, cols] - self.mean) / self.scale
        return ds.with_features(X)

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "Standardizer":
        return cls(tuple(doc["columns"]), np.asarray(doc["mean"], float), np.asarray(doc["scale"], float))


# --------------------------------------------------------------------------
# Splitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitRatios:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise ValueError("split ratios must be positive")
        if abs(self.train + self.val + self.test - 1.0) > 1e-12:
            raise ValueError("split ratios must sum to 1")


def _floor_share(ratio: float, count: int) -> int:
    # Guard against 0.2 * 1000 landing a hair below 200 in floating point.
    return int(math.floor(ratio * count + 1e-9))


def split_indices(ds: Dataset, ratios: SplitRatios, seed: int):
    """Stratified index split; returns sorted (train, val, test) index arrays."""
    if ds.n < 10:
        raise SplitError(f"dataset has {ds.n} rows; at least 10 are required")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for key in STRATA:
        idx = ds.strata[key]
        if len(idx) < 3:
            raise SplitError(f"stratum (group={key[0]}, label={key[1]:+d}) has {len(idx)} rows; need >= 3")
        perm = rng.permutation(idx)
        n_val = max(1, _floor_share(ratios.val, len(idx)))
        n_test = max(1, _floor_share(ratios.test, len(idx)))
        n_train = len(idx) - n_val - n_test
        if n_train < 1:
            raise SplitError(f"stratum (group={key[0]}, label={key[1]:+d}) too small for ratios {ratios}")
        parts[0].append(perm[:n_train])
        parts[1].append(perm[n_train:n_train + n_val])
        parts[2].append(perm[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def split(ds: Dataset, ratios: SplitRatios, seed: int):
    """Stratified train/val/test split within each (group, label) stratum."""
    return tuple(ds.subset(idx) for idx in split_indices(ds, ratios, seed))


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianCell:
    mean: tuple
    variance: float
    count: int


def _check_cells(cells):
    for key, cell in cells.items():
        if key not in [(lab, z) for z, lab in STRATA]:
            raise ValueError(f"unknown cell {key!r}; keys are (label, group)")
        if not cell.variance > 0:
            raise ValueError(f"cell {key}: variance must be positive")
        if cell.count < 1:
            raise ValueError(f"cell {key}: count must be >= 1")
    if len(cells) != 4:
        raise ValueError("exactly four (label, group) cells are required")


@dataclass(frozen=True)
class Gaussian2dSpec:
    """Isotropic 2-D Gaussian per (label, group) cell, keyed ``(label, group)``."""

    cells: dict

    def __post_init__(self):
        _check_cells(self.cells)
        for key, cell in self.cells.items():
            if len(cell.mean) != 2:
                raise ValueError(f"cell {key}: mean must be a 2-vector")


@dataclass(frozen=True)
class ScoreSynthSpec:
    """Gaussian pre-activation per (label, group) cell, squashed by the logistic map."""

    cells: dict

    def __post_init__(self):
        _check_cells(self.cells)


GAUSSIAN2D_REFERENCE = Gaussian2dSpec({
    (-1, "a"): GaussianCell((-1.0, 1.0), 0.5, 1000),
    (1, "a"): GaussianCell((-1.5, 0.5), 0.5, 1000),
    (-1, "b"): GaussianCell((-2.0, -1.0), 1.0, 1000),
    (1, "b"): GaussianCell((1.0, 0.0), 1.0, 1000),
})

# Inter-group mean gaps are equal (0.7 each) while the intra-group gaps are
# not (0.4 vs 1.0): fair across groups, unfair within them.
FIG1_SCORES = ScoreSynthSpec({
    (-1, "a"): GaussianCell(0.3, 0.5, 1000),
    (1, "a"): GaussianCell(0.7, 0.5, 1000),
    (-1, "b"): GaussianCell(0.0, 0.5, 1000),
    (1, "b"): GaussianCell(1.0, 0.5, 1000),
})


def synth_gaussian2d(spec: Gaussian2dSpec, seed: int) -> Dataset:
    """Draw every cell's points; rows are laid out in canonical stratum order."""
    rng = np.random.default_rng(seed)
    X, y, g = [], [], []
    for z, lab in STRATA:
        cell = spec.cells[(lab, z)]
        pts = np.asarray(cell.mean, float) + math.sqrt(cell.variance) * rng.standard_normal((cell.count, 2))
        X.append(pts)
        y.append(np.full(cell.count, lab))
        g.append(np.full(cell.count, GROUPS.index(z)))
    return Dataset(np.vstack(X), np.concatenate(y), np.concatenate(g), numeric_columns=(0, 1))


def synth_scores(spec: ScoreSynthSpec, seed: int) -> dict:
    """Logistic-squashed Gaussian scores per cell, keyed ``(label, group)``."""
    rng = np.random.default_rng(seed)
    out = {}
    for z, lab in STRATA:
        cell = spec.cells[(lab, z)]
        raw = cell.mean + math.sqrt(cell.variance) * rng.standard_normal(cell.count)
        out[(lab, z)] = 1.0 / (1.0 + np.exp(-raw))
    return out


def scores_to_dataset(scores: dict) -> Dataset:
    """Stack per-cell scores into a 1-feature dataset (feature = score)."""
    X, y, g = [], [], []
    for z, lab in STRATA:
        s = np.asarray(scores[(lab, z)], float)
        X.append(s)
        y.append(np.full(len(s), lab))
        g.append(np.full(len(s), GROUPS.index(z)))
    return Dataset(np.concatenate(X)[:, None], np.concatenate(y), np.concatenate(g))


# --------------------------------------------------------------------------
# Group statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupStats:
    counts: dict
    group_ratio: float
    class_ratio: float
    prior_fractions: tuple
    priors: np.ndarray

    def to_dict(self) -> dict:
        return {
            "counts": {f"{z}{'+' if lab > 0 else '-'}": c for (z, lab), c in self.counts.items()},
            "group_ratio": self.group_ratio,
            "class_ratio": self.class_ratio,
            "priors": [float(p) for p in self.priors],
        }


def pair_prior_fractions(counts: Mapping) -> tuple:
    n_pos = counts[("a", 1)] + counts[("b", 1)]
    n_neg = counts[("a", -1)] + counts[("b", -1)]
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDatasetError(f"need both classes (positives={n_pos}, negatives={n_neg})")
    return tuple(Fraction(counts[(z, 1)] * counts[(zp, -1)], n_pos * n_neg) for z, zp in PAIRS)


def group_stats(ds: Dataset) -> GroupStats:
    """Stratum counts, group/class ratios and pair priors n^{z+} n^{z'-} / (n^+ n^-)."""
    counts = ds.counts()
    fr = pair_prior_fractions(counts)
    n_a = counts[("a", 1)] + counts[("a", -1)]
    n_b = counts[("b", 1)] + counts[("b", -1)]
    n_pos = counts[("a", 1)] + counts[("b", 1)]
    n_neg = ds.n - n_pos
    return GroupStats(
        counts=counts,
        group_ratio=n_a / n_b if n_b else math.inf,
        class_ratio=n_neg / n_pos,
        prior_fractions=fr,
        priors=np.array([float(f) for f in fr]),
    )
