"""Synthetic generators, CSV ingestion, standardization and PCA splits."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .numerics import ContractError, RandomStream, pca_first_scores

TASKS = ("classification", "regression")
SPLIT_MODES = ("extrapolation", "interpolation", "random")
STD_FLOOR = 1e-8

# keys of the child streams used by the generators
_TRAIN, _VAL, _OOD, _SPLIT, _TEST = 11, 12, 13, 14, 15


@dataclass(frozen=True)
class Dataset:
    """Features, targets and the affine maps that produced them.

    ``x_mean``/``x_std`` and ``y_mean``/``y_std`` describe the
    standardization already applied: raw values are recovered as
    ``X * x_std + x_mean``. They are the identity until
    :func:`standardize_fit_apply` is used.
    """

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    name: str = ""
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: float = 0.0
    y_std: float = 1.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ContractError("X must be a matrix")
        y = np.asarray(self.y)
        y = y.astype(np.int64) if self.task == "classification" else y.astype(np.float64)
        if len(y) != X.shape[0]:
            raise ContractError(f"X has {X.shape[0]} rows but y has {len(y)} entries")
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        b = X.shape[1]
        object.__setattr__(self, "x_mean", np.zeros(b) if self.x_mean is None else np.asarray(self.x_mean, dtype=np.float64))
        object.__setattr__(self, "x_std", np.ones(b) if self.x_std is None else np.asarray(self.x_std, dtype=np.float64))

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx])

    def raw_X(self) -> np.ndarray:
        return self.X * self.x_std + self.x_mean

    def raw_y(self, y=None) -> np.ndarray:
        """Targets (or the supplied standardized values) mapped back to original units."""
        y = self.y if y is None else np.asarray(y, dtype=np.float64)
        if self.task == "classification":
            return y
        return y * self.y_std + self.y_mean


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "extrapolation"
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise ContractError(f"unknown split mode {self.mode!r}")
        if not (0 <= self.val_fraction < 1 and 0 <= self.test_fraction < 1):
            raise ContractError("fractions must lie in [0, 1)")
        if self.val_fraction + self.test_fraction >= 1:
            raise ContractError("validation and test fractions leave no training rows")


# -- generators ---------------------------------------------------------------

def _moons(n, noise, stream):
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, math.pi, n_out)
    t_in = np.linspace(0.0, math.pi, n_in)
    X = np.vstack([
        np.column_stack([np.cos(t_out), np.sin(t_out)]),
        np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)]),
    ])
    y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    if noise > 0:
        X = X + noise * stream.normal(X.shape)
    return X, y


def gen_two_moons(n_train=200, n_val=50, noise=0.1, seed=0):
    """Two interleaving half circles.

    Class 0 lies on the upper half of the unit circle, class 1 on the lower
    half of the unit circle centered at ``(1, 0.5)``. Gaussian noise of std ``noise`` is
    added to every coordinate.
    """
    if n_train < 1 or n_val < 1:
        raise ContractError("counts must be >= 1")
    root = RandomStream(seed)
    train = Dataset(*_moons(n_train, noise, root.child(_TRAIN)), task="classification", name="two-moons")
    val = Dataset(*_moons(n_val, noise, root.child(_VAL)), task="classification", name="two-moons")
    return train, val


def two_moons_test(n=200, noise=0.1, seed=0) -> Dataset:
    """Fresh in-distribution sample, independent of the training and validation draws."""
    return Dataset(*_moons(n, noise, RandomStream(seed).child(_TEST)), task="classification", name="two-moons")


def ring_ood(n=500, radius=3.0, seed=0) -> Dataset:
    """Points uniform on the circle of the given radius around the origin."""
    t = RandomStream(seed).child(_OOD).uniform(0.0, 2 * math.pi, n)
    X = radius * np.column_stack([np.cos(t), np.sin(t)])
    return Dataset(X, np.zeros(n, dtype=np.int64), task="classification", name="ring")


REG_CENTERS = (-0.5, 0.75)
REG_STD = 0.1
REG_NOISE_VAR = 0.02


def f_star(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.3 * (x + np.sin(2 * math.pi * x) + np.sin(4 * math.pi * x))


def _regression(n, stream):
    comp = stream.integers(2, n)
    x = np.asarray(REG_CENTERS)[comp] + REG_STD * stream.normal(n)
    y = f_star(x) + math.sqrt(REG_NOISE_VAR) * stream.normal(n)
    return x[:, None], y


def gen_1d_regression(n_train=100, n_val=20, seed=0):
    """Inputs from an equal mixture of N(-0.5, 0.1^2) and N(0.75, 0.1^2),
    targets ``f_star(x)`` plus Gaussian noise of variance 0.02."""
    if n_train < 1 or n_val < 1:
        raise ContractError("counts must be >= 1")
    root = RandomStream(seed)
    train = Dataset(*_regression(n_train, root.child(_TRAIN)), task="regression", name="1d-regression")
    val = Dataset(*_regression(n_val, root.child(_VAL)), task="regression", name="1d-regression")
    return train, val


def regression_test(n=200, seed=0) -> Dataset:
    """Fresh in-distribution sample, independent of the training and validation draws."""
    return Dataset(*_regression(n, RandomStream(seed).child(_TEST)), task="regression", name="1d-regression")


def regression_ood(n=100) -> Dataset:
    """Evenly spaced inputs on [-2, -1.5] and [1.5, 2], away from both mixture components."""
    half = n // 2
    x = np.concatenate([np.linspace(-2.0, -1.5, half), np.linspace(1.5, 2.0, n - half)])
    return Dataset(x[:, None], f_star(x), task="regression", name="1d-regression-ood")


# -- CSV ----------------------------------------------------------------------

class DataFormatError(ContractError):
    """A CSV file that cannot be parsed, with its location."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


def load_csv(path, target_column, task="regression") -> Dataset:
    """Read a headed, comma-separated numeric file.

    ``target_column`` is a header name or an integer position (negative
    positions count from the end). Row numbers in errors are 1-based file
    lines, so the header is row 1.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DataFormatError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError("file is empty", row=1)
    header = [h.strip() for h in rows[0]]
    if isinstance(target_column, int):
        if not -len(header) <= target_column < len(header):
            raise DataFormatError(f"target column index {target_column} out of range", row=1)
        t = target_column % len(header)
    else:
        if target_column not in header:
            raise DataFormatError(f"target column {target_column!r} not found in header", row=1, column=target_column)
        t = header.index(target_column)
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", row=i)
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataFormatError(f"non-numeric value {cell!r}", row=i, column=header[j]) from None
    if values.shape[0] == 0:
        raise DataFormatError("file has no data rows", row=2)
    keep = [j for j in range(len(header)) if j != t]
    name = os.path.splitext(os.path.basename(path))[0]
    return Dataset(values[:, keep], values[:, t], task=task, name=name)


def write_csv(path, dataset: Dataset, header=None, target_name="y"):
    """Write features and target (in stored units) with full float precision."""
    if header is None:
        header = [f"x{j}" for j in range(dataset.n_features)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*header, target_name])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y)) if dataset.task == "regression" else str(int(y))])


# -- splits and standardization ----------------------------------------------

def internal_mask(scores) -> np.ndarray:
    """Rows whose score lies between the 25% and 75% quantiles, inclusive.

    Rows are ranked by ``(score, row index)`` and a row is internal when its
    rank ``r`` satisfies ``0.25 (n - 1) <= r <= 0.75 (n - 1)``. This matches
    linear-interpolation quantiles on distinct scores and breaks ties by row
    order, so the internal part always holds about half of the rows.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    order = np.argsort(scores, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    return (rank >= 0.25 * (n - 1)) & (rank <= 0.75 * (n - 1))


def pca_split(dataset: Dataset, mode="extrapolation", seed=0):
    """Split rows into an in-distribution part and an OOD part.

    ``extrapolation`` keeps the internal rows of the first principal
    component as in-distribution; ``interpolation`` keeps the external ones;
    ``random`` draws the internal half uniformly at random.
    """
    mode = mode.mode if isinstance(mode, SplitSpec) else mode
    if mode not in SPLIT_MODES:
        raise ContractError(f"unknown split mode {mode!r}")
    n = len(dataset)
    if n < 4:
        raise ContractError("pca_split needs at least 4 rows")
    if mode == "random":
        scores = RandomStream(seed).child(_SPLIT).permutation(n).astype(np.float64)
    else:
        scores = pca_first_scores(dataset.X)
    internal = internal_mask(scores)
    id_mask = internal if mode != "interpolation" else ~internal
    return dataset.subset(np.flatnonzero(id_mask)), dataset.subset(np.flatnonzero(~id_mask))


def partition(dataset: Dataset, fractions, seed=0):
    """Random disjoint, exhaustive partition with the given fractions.

    The last part receives the rows left over after rounding.
    """
    n = len(dataset)
    perm = RandomStream(seed).child(_SPLIT, 1).permutation(n)
    parts, start = [], 0
    for k, f in enumerate(fractions):
        stop = n if k == len(fractions) - 1 else start + int(round(f * n))
        parts.append(dataset.subset(np.sort(perm[start:stop])))
        start = stop
    return parts


def id_partition(dataset: Dataset, split: SplitSpec):
    """Train, validation and test parts of the in-distribution rows."""
    test_n = int(round(split.test_fraction * len(dataset)))
    val_n = int(round(split.val_fraction * (len(dataset) - test_n)))
    n = len(dataset)
    train_f = (n - test_n - val_n) / n
    return partition(dataset, (train_f, val_n / n, test_n / n), seed=split.seed)


def standardize_fit_apply(train: Dataset, *others: Dataset):
    """Standardize with statistics of ``train`` only.

    Features always; regression targets too. Standard deviations are
    floored at 1e-8, so constant columns map to zeros.
    """
    if len(train) == 0:
        raise ContractError("training set is empty")
    Xr = train.raw_X()
    x_mean = Xr.mean(axis=0)
    x_std = np.maximum(Xr.std(axis=0), STD_FLOOR)
    if train.task == "regression":
        yr = train.raw_y()
        y_mean, y_std = float(yr.mean()), max(float(yr.std()), STD_FLOOR)
    else:
        y_mean, y_std = 0.0, 1.0

    def apply(ds):
        X = (ds.raw_X() - x_mean) / x_std
        y = (ds.raw_y() - y_mean) / y_std if ds.task == "regression" else ds.y
        return replace(ds, X=X, y=y, x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)

    out = [apply(train), *(apply(o) for o in others)]
    return out if others else out[0]


def manifest(source, target_column, mode, seed, **extra) -> dict:
    return {"source": str(source), "target_column": target_column, "split_mode": mode, "seed": seed, **extra}


def write_manifest(path, doc: dict):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
