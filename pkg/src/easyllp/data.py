"""Datasets, CSV ingestion, synthetic generators and bag construction."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Union

import numpy as np
from scipy.stats import norm

from .estimators import BagLabelInfo, ClassPrior

__all__ = [
    "Example",
    "Dataset",
    "BagCollection",
    "CsvFormatError",
    "partition_into_bags",
    "load_csv",
    "write_csv",
    "gen_fig2",
    "gen_gaussian_blobs",
    "blobs_bayes_accuracy",
    "train_test_split",
]


class CsvFormatError(ValueError):
    """A CSV dataset could not be parsed; the message names the row and column."""


class Example(NamedTuple):
    features: np.ndarray
    label: int


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled examples stored as a feature matrix ``X`` (n, d) and labels ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray
    num_classes: Optional[int] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y)
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"features {X.shape} and labels {y.shape} do not line up")
        if X.shape[1] < 1:
            raise ValueError("feature dimension must be at least 1")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if np.any(y != np.round(y)):
                raise ValueError("labels must be integer class indices")
        y = y.astype(np.int64)
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative")
        C = self.num_classes
        if C is None:
            C = max(int(y.max()) + 1 if y.size else 0, 2)
        if y.size and y.max() >= C:
            raise ValueError(f"label {y.max()} out of range for {C} classes")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "num_classes", int(C))

    def __len__(self) -> int:
        return self.y.shape[0]

    def __getitem__(self, i) -> Example:
        return Example(self.X[i], int(self.y[i]))

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield self[i]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    @property
    def examples(self) -> list:
        return list(self)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes)

    def label_mean(self) -> float:
        return float(self.y.mean())

    def class_frequencies(self) -> ClassPrior:
        counts = np.bincount(self.y, minlength=self.num_classes)
        return ClassPrior(counts / counts.sum())


@dataclass(frozen=True, eq=False)
class BagCollection:
    """Fixed-size bags with their label proportions.

    ``features`` has shape (n, k, d) and ``alphas`` shape (n, C).  The
    individual labels are kept for evaluation only and are reachable through
    :meth:`oracle_labels`; training code should never call it.
    """

    features: np.ndarray
    alphas: np.ndarray
    k: int
    num_classes: int
    dropped_indices: np.ndarray
    order: np.ndarray
    _hidden_labels: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    @property
    def dropped_count(self) -> int:
        return int(self.dropped_indices.size)

    @property
    def positive_rates(self) -> np.ndarray:
        """Binary proportions ``alpha_i = alphas[i, 1]``."""
        if self.num_classes != 2:
            raise ValueError("positive rates are only defined for binary bags")
        return self.alphas[:, 1]

    @property
    def counts(self) -> np.ndarray:
        return np.round(self.alphas * self.k).astype(np.int64)

    def label_info(self, i: int) -> BagLabelInfo:
        return BagLabelInfo(self.k, self.alphas[i])

    def __iter__(self):
        for i in range(self.n):
            yield self.features[i], self.label_info(i)

    def estimate_prior(self) -> ClassPrior:
        """Mean label proportion over the bags, computed from integer counts.

        Same value as :func:`estimate_prior` over :meth:`label_info` of every bag.
        """
        return ClassPrior(self.counts.sum(axis=0) / (self.n * self.k))

    def oracle_labels(self) -> np.ndarray:
        """Hidden per-instance labels, shape (n, k).  Evaluation and oracle use only."""
        return self._hidden_labels

    def flat_features(self) -> np.ndarray:
        return self.features.reshape(-1, self.feature_dim)


def partition_into_bags(
    ds: Dataset, k: int, shuffle: bool = True, rng: Optional[np.random.Generator] = None
) -> BagCollection:
    """Group consecutive runs of ``k`` examples (after an optional shuffle) into bags.

    The last ``len(ds) % k`` examples are dropped so every bag has exactly
    ``k`` members.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"bag size k must be an integer >= 1, got {k!r}")
    k = int(k)
    if len(ds) < k:
        raise ValueError(f"dataset of {len(ds)} examples cannot fill a bag of size {k}")
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True needs an rng")
        order = rng.permutation(len(ds))
    else:
        order = np.arange(len(ds))
    n = len(ds) // k
    kept = order[: n * k]
    features = ds.X[kept].reshape(n, k, ds.feature_dim)
    labels = ds.y[kept].reshape(n, k)
    counts = np.stack([(labels == c).sum(axis=1) for c in range(ds.num_classes)], axis=1)
    return BagCollection(
        features=_frozen(features),
        alphas=_frozen(counts / k),
        k=k,
        num_classes=ds.num_classes,
        dropped_indices=_frozen(order[n * k:]),
        order=_frozen(order),
        _hidden_labels=_frozen(labels),
    )


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise CsvFormatError(f"row {row}, column {col}: not a number: {cell!r}") from None


def load_csv(
    path: Union[str, Path],
    label_column: Union[str, int] = -1,
    has_header: bool = True,
    num_classes: Optional[int] = None,
) -> Dataset:
    """Read a comma-separated dataset with one integer label column.

    ``label_column`` is a header name or a (possibly negative) column index.
    Rows are numbered from 1 as they appear in the file, header included.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = None
    if has_header:
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
        if not rows:
            raise CsvFormatError(f"{path}: header but no data rows")
    width = len(header) if header is not None else len(rows[0][1])
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None:
            raise CsvFormatError(f"label column {label_column!r} given by name but file has no header")
        if label_column not in header:
            raise CsvFormatError(f"missing label column {label_column!r}; header is {header}")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
        if not -width <= label_idx < width:
            raise CsvFormatError(f"missing label column {label_column}; rows have {width} columns")
        label_idx %= width
    if width < 2:
        raise CsvFormatError(f"{path}: need at least one feature column and a label column")

    X = np.empty((len(rows), width - 1))
    y = np.empty(len(rows), dtype=np.int64)
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != width:
            raise CsvFormatError(f"row {lineno}: expected {width} columns, got {len(cells)}")
        j = 0
        for col, cell in enumerate(cells):
            value = _parse_float(cell.strip(), lineno, col + 1)
            if col == label_idx:
                if value != int(value) or value < 0:
                    raise CsvFormatError(
                        f"row {lineno}, column {col + 1}: label must be a non-negative integer, got {cell!r}"
                    )
                y[r] = int(value)
            else:
                X[r, j] = value
                j += 1
    return Dataset(X, y, num_classes)


def write_csv(ds: Dataset, path: Union[str, Path]) -> None:
    """Write ``ds`` in the format read by :func:`load_csv` (header, label last)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(ds.feature_dim)] + ["y"])
        for x, label in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [int(label)])


def gen_fig2(n: int, rng: np.random.Generator) -> Dataset:
    """``x ~ Uniform[0, 1]`` with the deterministic label ``y = 1{x <= 0.5}``."""
    if n < 1:
        raise ValueError("n must be positive")
    x = rng.random(n)
    return Dataset(x[:, None], (x <= 0.5).astype(np.int64), 2)


def gen_gaussian_blobs(
    n: int,
    d: int,
    separation: float,
    positive_rate: float,
    rng: np.random.Generator,
) -> Dataset:
    """Two unit-variance Gaussian classes whose means are ``separation`` apart.

    Class 1 is centred at ``+(separation/2) * 1/sqrt(d)`` and class 0 at the
    negation, so the Bayes accuracy at ``positive_rate = 0.5`` is
    ``Phi(separation / 2)``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if not 0.0 < positive_rate < 1.0:
        raise ValueError("positive_rate must lie strictly between 0 and 1")
    y = (rng.random(n) < positive_rate).astype(np.int64)
    centre = np.full(d, separation / 2.0 / np.sqrt(d))
    X = rng.standard_normal((n, d)) + np.where(y[:, None] == 1, centre, -centre)
    return Dataset(X, y, 2)


def blobs_bayes_accuracy(separation: float, positive_rate: float = 0.5) -> float:
    """Bayes-optimal accuracy of :func:`gen_gaussian_blobs`."""
    half = separation / 2.0
    if half == 0.0:
        return max(positive_rate, 1.0 - positive_rate)
    # optimal threshold on the projection t ~ N(+-half, 1)
    t = np.log((1.0 - positive_rate) / positive_rate) / (2.0 * half)
    return float(positive_rate * norm.sf(t - half) + (1.0 - positive_rate) * norm.cdf(t + half))


def train_test_split(ds: Dataset, test_fraction: float, rng: np.random.Generator):
    """Random split into (train, test); both parts come back in shuffled order."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(order[n_test:]), ds.subset(order[:n_test])
