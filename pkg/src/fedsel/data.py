"""Datasets: synthetic generation, CSV ingestion, normalization and client partitioning."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import IngestionError, ParameterError


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2:
            raise ParameterError("features must be a 2-D array")
        if self.features.shape[0] < 1:
            raise ParameterError("dataset must contain at least one sample")
        if self.labels.shape != (self.features.shape[0],):
            raise ParameterError("labels length must equal the number of samples")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ParameterError("labels must be 0 or 1")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)


@dataclass(eq=False)
class PartitionPlan:
    assignments: list[np.ndarray]
    strategy: str
    seed: int
    alpha: float | None = None

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]


def generate_synthetic(n_samples: int, n_features: int, class_sep: float, seed: int) -> Dataset:
    """Two unit-variance Gaussian blobs centred at -class_sep/2 and +class_sep/2 on every axis."""
    if n_samples < 2 or n_features < 1:
        raise ParameterError(f"need n_samples >= 2 and n_features >= 1, got {n_samples}, {n_features}")
    if not class_sep > 0:
        raise ParameterError(f"class_sep must be positive, got {class_sep}")
    rng = np.random.default_rng(seed)
    n_pos = n_samples // 2
    labels = np.zeros(n_samples)
    labels[:n_pos] = 1.0
    labels = labels[rng.permutation(n_samples)]
    centres = np.where(labels[:, None] == 1.0, class_sep / 2.0, -class_sep / 2.0)
    features = centres + rng.standard_normal((n_samples, n_features))
    names = [f"x{i}" for i in range(n_features)]
    return Dataset(features, labels, names)


def load_csv(path, label_column: str) -> Dataset:
    """Read a headered numeric CSV. Errors name the offending line and column."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise IngestionError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise IngestionError(f"{path}: label column {label_column!r} not in header")
        li = header.index(label_column)
        feat_cols = [i for i in range(len(header)) if i != li]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            raw = row[li].strip()
            try:
                lab = float(raw)
            except ValueError:
                lab = math.nan
            if lab not in (0.0, 1.0):
                raise IngestionError(
                    f"{path}: line {lineno}, column {label_column!r}: label {raw!r} is not 0 or 1")
            vals = []
            for i in feat_cols:
                try:
                    v = float(row[i])
                except ValueError:
                    raise IngestionError(
                        f"{path}: line {lineno}, column {header[i]!r}: non-numeric value {row[i]!r}") from None
                if not math.isfinite(v):
                    raise IngestionError(f"{path}: line {lineno}, column {header[i]!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
            labels.append(lab)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return Dataset(np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_cols)),
                   np.array(labels), [header[i] for i in feat_cols])


def normalize(dataset: Dataset) -> Dataset:
    """Per-feature z-score. Constant columns become zeros."""
    x = dataset.features
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    constant = np.ptp(x, axis=0) == 0
    safe = np.where(constant | (std == 0), 1.0, std)
    out = (x - mean) / safe
    out[:, constant] = 0.0
    return Dataset(out, dataset.labels.copy(), dataset.feature_names)


def train_test_split(dataset: Dataset, train_fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    if not 0 < train_fraction < 1:
        raise ParameterError("train_fraction must lie in (0, 1)")
    n = dataset.n_samples
    if n < 2:
        raise ParameterError("need at least 2 samples to split")
    n_train = min(n - 1, max(1, int(round(train_fraction * n))))
    perm = rng.permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


def partition(dataset: Dataset, n_clients: int, strategy: str = "iid", seed: int = 0,
              alpha: float | None = None) -> PartitionPlan:
    """Split sample indices across clients.

    ``iid`` shuffles and deals round-robin. ``dirichlet`` draws, for each class,
    client proportions from Dirichlet(alpha); clients left empty then take one
    sample from the currently largest shard.
    """
    n = dataset.n_samples
    if n_clients < 1:
        raise ParameterError("n_clients must be >= 1")
    if n_clients > n:
        raise ParameterError(f"cannot split {n} samples across {n_clients} clients")
    rng = np.random.default_rng(seed)
    if strategy == "iid":
        perm = rng.permutation(n)
        shards = [np.sort(perm[i::n_clients]) for i in range(n_clients)]
        return PartitionPlan(shards, "iid", seed)
    if strategy != "dirichlet":
        raise ParameterError(f"unknown partition strategy {strategy!r}")
    if alpha is None or not alpha > 0:
        raise ParameterError("dirichlet partition needs alpha > 0")

    buckets: list[list[int]] = [[] for _ in range(n_clients)]
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(dataset.labels == cls)
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        props = rng.dirichlet(np.full(n_clients, alpha))
        cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
        for c, part in enumerate(np.split(idx, cuts)):
            buckets[c].extend(part.tolist())

    for c in range(n_clients):
        if not buckets[c]:
            donor = max(range(n_clients), key=lambda j: (len(buckets[j]), -j))
            buckets[c].append(buckets[donor].pop())
    return PartitionPlan([np.array(sorted(b), dtype=np.int64) for b in buckets], "dirichlet", seed, alpha)


def label_skew(dataset: Dataset, plan: PartitionPlan) -> list[float]:
    """Fraction of the majority class in each shard."""
    out = []
    for shard in plan.assignments:
        pos = float(dataset.labels[shard].mean())
        out.append(max(pos, 1.0 - pos))
    return out
