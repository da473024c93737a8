"""Datasets: the periodic toy problem, numeric CSV tables and the mushroom table."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    """Feature matrix ``x`` (n, d) and targets ``y`` with standardisation statistics.

    ``x`` and ``y`` hold the (possibly standardised) values; the stored means
    and stds map them back to original units.  Identity statistics mean the
    data is in raw units.
    """

    x: np.ndarray
    y: np.ndarray
    name: str = "dataset"
    seed: int | None = None
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None
    target_mean: float = 0.0
    target_std: float = 1.0
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.y = np.asarray(self.y)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.name}: {self.x.shape[0]} rows of x vs {self.y.shape[0]} targets")
        if self.feature_means is None:
            self.feature_means = np.zeros(self.x.shape[1])
        if self.feature_stds is None:
            self.feature_stds = np.ones(self.x.shape[1])

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def raw_x(self) -> np.ndarray:
        return self.x * self.feature_stds + self.feature_means

    def raw_y(self) -> np.ndarray:
        return self.y * self.target_std + self.target_mean

    def subset(self, idx) -> Dataset:
        return replace(self, x=self.x[idx], y=self.y[idx])


def toy_periodic(n: int = 2000, noise_sigma: float = 0.1, seed: int = 0, *,
                 amplitude: float = 1.0, omega: float = 2 * math.pi * 0.75) -> Dataset:
    """x ~ U(-2, 2), y = amplitude * sin(omega * x) + N(0, noise_sigma^2)."""
    if n < 1:
        raise ValueError("toy_periodic needs n >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, n)
    y = amplitude * np.sin(omega * x) + noise_sigma * rng.standard_normal(n)
    return Dataset(x[:, None], y, name="toy_periodic", seed=seed)


# --------------------------------------------------------------------------
# CSV


def load_csv(path, target_column: str | int = -1, standardize: bool = True) -> Dataset:
    """Numeric table with a header row; one column is the regression target."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if isinstance(target_column, str):
        if target_column not in header:
            raise ValueError(f"{path}: no column named {target_column!r}")
        t_idx = header.index(target_column)
    else:
        t_idx = target_column % len(header)
    missing = []
    values = np.empty((len(body), len(header)))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r + 1} has {len(row)} cells, header has {len(header)}")
        for c, cell in enumerate(row):
            cell = cell.strip()
            if cell in ("", "?", "NA", "nan", "NaN"):
                missing.append(r + 1)
                values[r, c] = np.nan
                continue
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric value {cell!r} at row {r + 1}, column {header[c]!r}") from None
    if missing:
        rows_bad = sorted(set(missing))
        raise ValueError(f"{path}: missing values in rows {rows_bad}")
    y = values[:, t_idx]
    feat_idx = [c for c in range(len(header)) if c != t_idx]
    x = values[:, feat_idx]
    names = tuple(header[c] for c in feat_idx)
    ds = Dataset(x, y, name=path.stem, feature_names=names)
    ds = drop_constant_columns(ds)
    return standardize_by(ds, ds) if standardize else ds


def drop_constant_columns(ds: Dataset) -> Dataset:
    std = ds.x.std(axis=0)
    keep = std > 0
    if keep.all():
        return ds
    dropped = [ds.feature_names[i] if ds.feature_names else str(i) for i in np.flatnonzero(~keep)]
    warnings.warn(f"{ds.name}: dropping constant columns {dropped}", stacklevel=2)
    names = tuple(n for n, k in zip(ds.feature_names, keep) if k) if ds.feature_names else ()
    return replace(ds, x=ds.x[:, keep], feature_means=ds.feature_means[keep],
                   feature_stds=ds.feature_stds[keep], feature_names=names)


def standardize_by(ds: Dataset, reference: Dataset) -> Dataset:
    """Standardise raw ``ds`` with the statistics of raw ``reference``."""
    rx, ry = reference.raw_x(), reference.raw_y().astype(np.float64)
    fm, fs = rx.mean(axis=0), rx.std(axis=0)
    fs = np.where(fs > 0, fs, 1.0)
    tm, ts = float(ry.mean()), float(ry.std())
    ts = ts if ts > 0 else 1.0
    x, y = ds.raw_x(), ds.raw_y().astype(np.float64)
    return replace(ds, x=(x - fm) / fs, y=(y - tm) / ts, feature_means=fm, feature_stds=fs,
                   target_mean=tm, target_std=ts)


def split(ds: Dataset, test_fraction: float = 0.1, seed: int = 0,
          standardize: bool = True) -> tuple[Dataset, Dataset]:
    """Shuffled train/test split; standardisation uses training statistics only."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(ds)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test > n - 1:
        raise ValueError(f"split of {n} rows with fraction {test_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    raw = replace(ds, x=ds.raw_x(), y=ds.raw_y(), feature_means=None, feature_stds=None,
                  target_mean=0.0, target_std=1.0)
    train, test = raw.subset(train_idx), raw.subset(test_idx)
    train.seed = test.seed = seed
    if standardize:
        ref = train
        train, test = standardize_by(train, ref), standardize_by(test, ref)
    return train, test


# --------------------------------------------------------------------------
# mushrooms

EDIBLE, POISONOUS = 0, 1
_LABELS = {"e": EDIBLE, "p": POISONOUS}


def encode_mushroom(path) -> tuple[np.ndarray, np.ndarray]:
    """One-hot contexts and labels (0 edible, 1 poisonous) from agaricus-lepiota rows.

    Each row has 23 single-character fields, the label first.  Every feature
    column is expanded over the characters it takes in the file, with '?'
    counted as a category of its own.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 23:
                raise ValueError(f"{path}:{lineno}: expected 23 fields, got {len(fields)}")
            if fields[0] not in _LABELS:
                raise ValueError(f"{path}:{lineno}: unknown label {fields[0]!r}")
            rows.append(fields)
    if not rows:
        raise ValueError(f"{path}: no rows")
    labels = np.array([_LABELS[r[0]] for r in rows], dtype=np.int64)
    blocks = []
    for c in range(1, 23):
        col = np.array([r[c] for r in rows])
        cats = np.unique(col)
        blocks.append((col[:, None] == cats[None, :]).astype(np.float64))
    return np.hstack(blocks), labels
