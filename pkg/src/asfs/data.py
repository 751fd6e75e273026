"""Tabular datasets: CSV ingest, MinMax scaling, partitions, batching and a
synthetic generator with a known informative feature set."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError
from .rng import make_rng

LABELED = "labeled"
UNLABELED = "unlabeled"
TEST = "test"
UNUSED = "unused"
PARTITION_TAGS = (LABELED, UNLABELED, TEST, UNUSED)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Scaler:
    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, x):
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        out = (x - self.mins) / safe
        out[:, span <= 0] = 0.0
        return np.clip(out, 0.0, 1.0)

    def inverse(self, x):
        return x * (self.maxs - self.mins) + self.mins


@dataclass(frozen=True)
class Dataset:
    """``features`` is N x d. ``partition`` tags every row with one of
    ``labeled``, ``unlabeled``, ``test`` or ``unused``."""

    features: np.ndarray
    labels: np.ndarray | None = None
    feature_names: tuple = ()
    partition: np.ndarray | None = None
    scaler: Scaler | None = None
    informative: tuple | None = None  # ground truth, synthetic data only

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        object.__setattr__(self, "features", x)
        n, d = x.shape
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"f{j}" for j in range(d)))
        elif len(self.feature_names) != d:
            raise DataError(f"{len(self.feature_names)} names for {d} features")
        if self.labels is not None and len(self.labels) != n:
            raise DataError(f"{len(self.labels)} labels for {n} rows")
        if self.partition is None:
            object.__setattr__(self, "partition", np.full(n, UNLABELED, dtype=object))
        elif len(self.partition) != n:
            raise DataError("partition length differs from row count")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(np.max(self.labels)) + 1

    def rows(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.partition == tag)

    def X(self, tag: str) -> np.ndarray:
        return self.features[self.rows(tag)]

    def y(self, tag: str) -> np.ndarray:
        if self.labels is None:
            raise DataError("dataset has no labels")
        return self.labels[self.rows(tag)]

    def with_features(self, features) -> "Dataset":
        return replace(self, features=np.asarray(features, dtype=np.float64))


# ------------------------------------------------------------------ CSV


def _parse_float(cell, row, col):
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {col}: non-numeric cell {cell!r}") from None


def load_csv(path, label_column=None, header: bool = True) -> Dataset:
    """Read a numeric CSV. ``label_column`` is a header name or a column index.

    Row numbers in error messages count data rows from 0.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    names = None
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header but no data rows")
    width = len(names) if names else len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i} has {len(r)} cells, expected {width}")
    values = np.array(
        [[_parse_float(c, i, j) for j, c in enumerate(r)] for i, r in enumerate(rows)],
        dtype=np.float64,
    )
    names = names or [f"f{j}" for j in range(width)]
    labels = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if label_column not in names:
                raise DataError(f"{path}: no column named {label_column!r}")
            col = names.index(label_column)
        else:
            col = int(label_column)
        raw = values[:, col]
        if np.any(raw < 0) or np.any(raw != np.round(raw)):
            raise DataError(f"{path}: labels must be non-negative integers")
        labels = raw.astype(np.int64)
        values = np.delete(values, col, axis=1)
        del names[col]
    return Dataset(values, labels, tuple(names))


def save_csv(path, ds: Dataset, label_name: str = "y"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = list(ds.feature_names)
        if ds.labels is not None:
            head.append(label_name)
        w.writerow(head)
        for i in range(ds.n_samples):
            row = ["%.17g" % v for v in ds.features[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            w.writerow(row)


# -------------------------------------------------------------- scaling


def minmax_scale(ds: Dataset) -> Dataset:
    """Scale each column to [0, 1].

    The scaler is fit on the training rows (labeled + unlabeled) when any row
    is tagged as test, else on every row. Test values outside the training
    range are clipped. Constant columns map to 0.
    """
    fit_rows = np.flatnonzero(np.isin(ds.partition, (LABELED, UNLABELED)))
    if np.any(ds.partition == TEST) and fit_rows.size:
        fit = ds.features[fit_rows]
    else:
        fit = ds.features
    scaler = Scaler(fit.min(axis=0), fit.max(axis=0))
    const = np.flatnonzero(scaler.maxs <= scaler.mins)
    if const.size:
        names = [ds.feature_names[j] for j in const]
        warnings.warn(f"constant columns scaled to 0: {names}", stacklevel=2)
    return replace(ds, features=scaler.transform(ds.features), scaler=scaler)


# ----------------------------------------------------------- partitions


def _stratified_take(idx, labels, n, rng):
    """Take ``n`` of ``idx`` with per-class counts proportional to the pool
    (largest remainder). ``idx`` is assumed already shuffled."""
    classes, counts = np.unique(labels[idx], return_counts=True)
    quota = counts * n / counts.sum()
    take = np.floor(quota).astype(int)
    short = n - take.sum()
    if short:
        order = np.lexsort((classes, -(quota - take)))
        take[order[:short]] += 1
    chosen = []
    for c, k in zip(classes, take):
        chosen.append(idx[labels[idx] == c][:k])
    chosen = np.concatenate(chosen) if chosen else np.array([], dtype=int)
    return rng.permutation(chosen)


def partition(ds: Dataset, n_labeled: int, n_unlabeled: int, n_test: int, seed: int) -> Dataset:
    """Seeded split into labeled / unlabeled / test rows; the rest are ``unused``.

    Labeled and test rows are stratified by class.
    """
    if min(n_labeled, n_unlabeled, n_test) < 0:
        raise DataError("partition sizes must be non-negative")
    total = n_labeled + n_unlabeled + n_test
    if total > ds.n_samples:
        raise DataError(f"requested {total} rows but dataset has {ds.n_samples}")
    if (n_labeled or n_test) and ds.labels is None:
        raise DataError("labeled/test rows requested but dataset has no labels")
    rng = make_rng(seed, "partition")
    pool = rng.permutation(ds.n_samples)
    tags = np.full(ds.n_samples, UNUSED, dtype=object)
    for tag, n in ((TEST, n_test), (LABELED, n_labeled)):
        if n == 0:
            continue
        chosen = _stratified_take(pool, ds.labels, n, rng)
        tags[chosen] = tag
        pool = pool[~np.isin(pool, chosen)]
    tags[pool[:n_unlabeled]] = UNLABELED
    return replace(ds, partition=tags)


def subsample_labeled(ds: Dataset, n: int, seed: int) -> Dataset:
    """Keep ``n`` stratified labeled rows; the others become ``unused``."""
    rows = ds.rows(LABELED)
    if n > rows.size:
        raise DataError(f"budget {n} exceeds {rows.size} labeled rows")
    rng = make_rng(seed, "subsample")
    keep = _stratified_take(rng.permutation(rows), ds.labels, n, rng)
    tags = ds.partition.copy()
    tags[np.setdiff1d(rows, keep)] = UNUSED
    return replace(ds, partition=tags)


def batch_indices(n_rows: int, batch_size: int, seed: int, epoch: int, stream="batches"):
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if n_rows == 0:
        raise DataError("cannot batch an empty partition")
    order = make_rng(seed, stream, epoch).permutation(n_rows)
    return [order[i:i + batch_size] for i in range(0, n_rows, batch_size)]


def batches(ds: Dataset, tag: str, batch_size: int, seed: int, epoch: int):
    """Row batches of one partition in a seeded per-epoch order.

    Yields ``(X, y)``; ``y`` is None for unlabeled data.
    """
    rows = ds.rows(tag)
    for b in batch_indices(rows.size, batch_size, seed, epoch, stream=("batches", tag)):
        r = rows[b]
        yield ds.features[r], (None if ds.labels is None else ds.labels[r])


# ------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground-truth generator settings.

    Informative columns are U(0, 1); they are independent unless
    ``informative_correlation`` gives them a shared latent. The remaining columns form
    groups of ``group_size`` that share a latent factor (Gaussian copula with
    within-group correlation ``correlation``), so they carry structure for
    the pretext tasks but no label information. ``noise`` is the label-flip
    probability.
    """

    n_samples: int = 3200
    n_features: int = 20
    n_informative: int = 5
    rule: str = "linear"
    noise: float = 0.0
    group_size: int = 5
    correlation: float = 0.9
    informative_correlation: float = 0.0
    seed: int = 0
    informative: tuple | None = None  # drawn from the seed when None

    def validate(self):
        if not 0 < self.n_informative < self.n_features:
            raise ConfigError("need 0 < n_informative < n_features")
        if self.informative is not None:
            s = set(self.informative)
            if len(s) != self.n_informative or not s <= set(range(self.n_features)):
                raise ConfigError("informative must hold n_informative distinct column indices")
        if self.rule not in ("linear", "xor"):
            raise ConfigError(f"unknown target rule {self.rule!r}")
        if not 0.0 <= self.noise <= 0.5:
            raise ConfigError("label noise must lie in [0, 0.5]")
        if not 0.0 <= self.correlation < 1.0:
            raise ConfigError("correlation must lie in [0, 1)")
        if not 0.0 <= self.informative_correlation < 1.0:
            raise ConfigError("informative_correlation must lie in [0, 1)")
        if self.group_size < 1 or self.n_samples < 1:
            raise ConfigError("group_size and n_samples must be positive")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    rng = make_rng(spec.seed, "synthetic")
    n, d, k = spec.n_samples, spec.n_features, spec.n_informative
    drawn = rng.choice(d, size=k, replace=False)
    informative = np.sort(drawn if spec.informative is None else np.asarray(spec.informative))
    noise_cols = np.setdiff1d(np.arange(d), informative)

    x = np.empty((n, d))
    rho_i = np.sqrt(spec.informative_correlation)
    shared = rng.standard_normal((n, 1))
    own = rng.standard_normal((n, k))
    x[:, informative] = ndtr(rho_i * shared + np.sqrt(1.0 - rho_i * rho_i) * own)
    rho = np.sqrt(spec.correlation)
    for start in range(0, noise_cols.size, spec.group_size):
        cols = noise_cols[start:start + spec.group_size]
        latent = rng.standard_normal((n, 1))
        eps = rng.standard_normal((n, cols.size))
        x[:, cols] = ndtr(rho * latent + np.sqrt(1.0 - rho * rho) * eps)

    xi = x[:, informative]
    if spec.rule == "linear":
        y = (xi.sum(axis=1) > k / 2.0).astype(np.int64)
    else:
        y = (np.sum(xi > 0.5, axis=1) % 2).astype(np.int64)
    if spec.noise > 0:
        flip = rng.uniform(size=n) < spec.noise
        y[flip] = 1 - y[flip]
    return Dataset(x, y, informative=tuple(int(i) for i in informative))
