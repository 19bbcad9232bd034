"""Datasets: feature-CSV ingestion, synthetic generators, splitting, scaling.

Feature CSV rows are ``label,f0,f1,...`` with an optional header line.
Label 1 is the stop-sign (positive) class, label 0 every other sign.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np


class DatasetError(ValueError):
    pass


class Sample(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    name: str = "dataset"
    normalized: bool = False

    def __post_init__(self):
        X = np.array(self.features, dtype=float, ndmin=2)
        y = np.asarray(self.labels).astype(int).reshape(-1)
        if X.shape[0] == 0:
            raise DatasetError("dataset is empty")
        if X.shape[0] != y.shape[0]:
            raise DatasetError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise DatasetError("features must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise DatasetError("labels must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    def __iter__(self):
        for x, y in zip(self.features, self.labels):
            yield Sample(x, int(y))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> tuple:
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def subset(self, idx, name: Optional[str] = None) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx], name=name or self.name)


def load_features(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path}: file is empty")
    first = rows[0]
    try:
        float(first[0])
    except ValueError:
        rows = rows[1:]  # header
    if not rows:
        raise DatasetError(f"{path}: no data rows after header")
    width = len(rows[0])
    if width < 2:
        raise DatasetError(f"{path}: row 0 has no feature columns")
    labels, feats = [], []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DatasetError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        try:
            lab = float(row[0])
        except ValueError:
            raise DatasetError(f"{path}: row {i} column 0: non-numeric label {row[0]!r}") from None
        if lab not in (0.0, 1.0):
            raise DatasetError(f"{path}: row {i} column 0: label {row[0]!r} not in {{0, 1}}")
        vals = []
        for j, cell in enumerate(row[1:], start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise DatasetError(f"{path}: row {i} column {j}: non-numeric value {cell!r}") from None
        labels.append(int(lab))
        feats.append(vals)
    return Dataset(np.array(feats), np.array(labels), name=path.stem)


def save_features(dataset: Dataset, path, header: bool = True) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(["label"] + [f"f{i}" for i in range(dataset.feature_dim)])
        for x, y in zip(dataset.features, dataset.labels):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


def _balanced_labels(n_samples: int) -> np.ndarray:
    # class 0 receives ceil(n/2)
    n0 = math.ceil(n_samples / 2)
    return np.array([0] * n0 + [1] * (n_samples - n0))


def synth_dataset(n_samples: int, feature_dim: int, class_separation: float, seed: int,
                  name: str = "synthetic") -> Dataset:
    """Two unit-variance Gaussian clusters centred at -+separation/2 along a random unit direction."""
    if n_samples < 2:
        raise DatasetError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=feature_dim)
    direction /= np.linalg.norm(direction)
    labels = _balanced_labels(n_samples)
    signs = np.where(labels == 1, 0.5, -0.5)
    X = rng.normal(size=(n_samples, feature_dim)) + np.outer(signs * class_separation, direction)
    return Dataset(X, labels, name=name)


def synth_pixel_dataset(n_samples: int, seed: int, size: int = 8, noise: float = 0.15,
                        name: str = "synthetic-pixels") -> Dataset:
    """``size`` x ``size`` images in [0, 1]: a horizontal bar for label 1, a vertical bar for label 0.

    Bar position jitters by one pixel and pixels get Gaussian noise before
    clipping to [0, 1].  Features are the flattened row-major pixels.
    """
    if n_samples < 2:
        raise DatasetError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n_samples)
    X = np.zeros((n_samples, size, size))
    mid = size // 2
    for i, lab in enumerate(labels):
        pos = mid + rng.integers(-1, 2)
        if lab == 1:
            X[i, pos - 1:pos + 1, 1:-1] = 1.0
        else:
            X[i, 1:-1, pos - 1:pos + 1] = 1.0
    X = np.clip(X + rng.normal(scale=noise, size=X.shape), 0.0, 1.0)
    return Dataset(X.reshape(n_samples, -1), labels, name=name)


def _largest_remainder(total: int, weights) -> list:
    weights = np.asarray(weights, dtype=float)
    raw = total * weights / weights.sum()
    base = np.floor(raw).astype(int)
    order = np.argsort(-(raw - base), kind="stable")
    for k in order[: total - base.sum()]:
        base[k] += 1
    return base.tolist()


def split(dataset: Dataset, train_fraction: float = 0.8, seed: int = 0, *,
          n_train: Optional[int] = None, stratify: bool = True) -> tuple:
    """Seeded shuffle-and-split into ``(train, test)``.

    With stratification each class contributes ``floor(n_class * fraction)``
    training samples.  Passing ``n_train`` fixes the exact training-set size
    instead, divided across classes by largest remainder.
    """
    n = len(dataset)
    if n_train is None:
        if not 0 < train_fraction < 1:
            raise DatasetError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    elif not 0 < n_train < n:
        raise DatasetError(f"n_train must lie in (0, {n}), got {n_train}")
    rng = np.random.default_rng(seed)
    if stratify:
        groups = [np.flatnonzero(dataset.labels == c) for c in (0, 1)]
        groups = [g for g in groups if g.size]
        if n_train is None:
            takes = [int(math.floor(g.size * train_fraction)) for g in groups]
        else:
            takes = _largest_remainder(n_train, [g.size for g in groups])
        train_idx, test_idx = [], []
        for g, k in zip(groups, takes):
            perm = rng.permutation(g)
            train_idx.append(perm[:k])
            test_idx.append(perm[k:])
        train_idx = np.sort(np.concatenate(train_idx))
        test_idx = np.sort(np.concatenate(test_idx))
    else:
        k = n_train if n_train is not None else int(math.floor(n * train_fraction))
        perm = rng.permutation(n)
        train_idx, test_idx = np.sort(perm[:k]), np.sort(perm[k:])
    train = dataset.subset(train_idx, f"{dataset.name}-train")
    test = dataset.subset(test_idx, f"{dataset.name}-test")
    for part, label in ((train, "train"), (test, "test")):
        if len(part) == 0 or len(set(part.labels.tolist())) < 2:
            raise DatasetError(f"{label} split is missing a class; dataset too small for this split")
    return train, test


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray = field(repr=False)

    def apply(self, dataset: Dataset) -> Dataset:
        if dataset.normalized:
            raise DatasetError(f"dataset {dataset.name!r} is already normalized")
        X = dataset.features - self.mean
        scale = np.where(self.std > 0, self.std, 1.0)
        return replace(dataset, features=X / scale, normalized=True)


def normalize(train: Dataset, test: Dataset) -> tuple:
    """Standardize both splits with the training mean and standard deviation.

    Zero-variance features are only centred.
    """
    stats = NormStats(train.features.mean(axis=0), train.features.std(axis=0))
    return stats.apply(train), stats.apply(test), stats
