"""Mini-batch samplers: per-(group, label) stratified draws and a plain uniform draw.

Random streams come from numpy's PCG64 seeded through ``SeedSequence``.  Epoch
``e`` of a run seeded with ``s`` uses the child stream ``SeedSequence(s,
spawn_key=(e,))``, so any epoch can be regenerated on its own.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import STRATA, Dataset
from .errors import ArgumentError, BatchDegenerateError, EmptyStratumError


def make_rng(seed: int, epoch: int | None = None) -> np.random.Generator:
    if epoch is None:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(epoch,))))


@dataclass(frozen=True, eq=False)
class Batch:
    """Rows drawn from ``dataset``; ``strata`` holds parent-row indices per stratum.

    ``indices`` concatenates the strata in canonical order and ``local`` gives,
    per stratum, the positions of its rows inside ``indices``.
    """

    dataset: Dataset
    strata: dict
    indices: np.ndarray = field(init=False)
    local: dict = field(init=False)

    def __post_init__(self):
        parts, local, start = [], {}, 0
        for key in STRATA:
            idx = np.asarray(self.strata.get(key, ()), dtype=np.int64)
            parts.append(idx)
            local[key] = np.arange(start, start + len(idx))
            start += len(idx)
        object.__setattr__(self, "indices", np.concatenate(parts))
        object.__setattr__(self, "local", local)

    @property
    def m_actual(self) -> int:
        return len(self.indices)

    @property
    def features(self) -> np.ndarray:
        return self.dataset.features[self.indices]

    def sizes(self) -> dict:
        return {key: len(self.local[key]) for key in STRATA}


def stratum_sizes(ds: Dataset, m: int) -> dict:
    """Per-stratum batch sizes ceil(m * n_zy / n), in exact integer arithmetic."""
    n = ds.n
    return {key: -(-m * len(ds.strata[key]) // n) for key in STRATA}


def stratified_sample(ds: Dataset, m: int, rng: np.random.Generator) -> Batch:
    if not 1 <= m <= ds.n:
        raise ArgumentError(f"batch size m={m} must lie in [1, {ds.n}]")
    for key in STRATA:
        if len(ds.strata[key]) == 0:
            raise EmptyStratumError(key)
    strata = {}
    for key, size in stratum_sizes(ds, m).items():
        pool = ds.strata[key]
        strata[key] = pool[rng.choice(len(pool), size=size, replace=False)]
    return Batch(ds, strata)


def epoch_batches(ds: Dataset, m: int, rng: np.random.Generator):
    """Yield ceil(n/m) independent stratified batches (not a partition of the data)."""
    if not 1 <= m <= ds.n:
        raise ArgumentError(f"batch size m={m} must lie in [1, {ds.n}]")
    for _ in range(-(-ds.n // m)):
        yield stratified_sample(ds, m, rng)


def uniform_sample(ds: Dataset, m: int, rng: np.random.Generator, require=("class",),
                   max_tries: int = 100) -> Batch:
    """Draw m rows uniformly without replacement, resampling degenerate draws.

    ``require`` lists what the batch must contain: ``"class"`` asks for at
    least one positive and one negative, ``"strata"`` for all four strata.
    """
    if not 1 <= m <= ds.n:
        raise ArgumentError(f"batch size m={m} must lie in [1, {ds.n}]")
    labels, groups = ds.labels, ds.groups
    for _ in range(max_tries):
        idx = np.sort(rng.choice(ds.n, size=m, replace=False))
        strata = {}
        for z, lab in STRATA:
            mask = (groups[idx] == ("a", "b").index(z)) & (labels[idx] == lab)
            strata[(z, lab)] = idx[mask]
        sizes = {k: len(v) for k, v in strata.items()}
        ok = True
        if "class" in require:
            ok &= sizes[("a", 1)] + sizes[("b", 1)] > 0 and sizes[("a", -1)] + sizes[("b", -1)] > 0
        if "strata" in require:
            ok &= min(sizes.values()) > 0
        if ok:
            return Batch(ds, strata)
    raise BatchDegenerateError(f"no admissible batch of size {m} after {max_tries} draws")
