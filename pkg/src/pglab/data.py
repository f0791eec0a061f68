"""Dataset ingestion: numeric CSV tables and the bundled synthetic regression task."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import Dataset, SyntheticLinearTask
from .rng import generator

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Malformed data file; ``row`` is the 1-based file line, ``column`` the header name."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


def split_sizes(n: int, fractions=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """Rounded train/val sizes; the test split takes the remainder."""
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def read_table(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty", row=1) from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} cells, got {len(row)}", row=line_no)
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"non-numeric cell {cell!r}", row=line_no, column=name) from None
                if not np.isfinite(v):
                    raise DataError(f"non-finite cell {cell!r}", row=line_no, column=name)
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path} has no data rows")
    return header, np.array(rows, dtype=np.float64)


def _standardize(train: np.ndarray):
    mean = train.mean(axis=0)
    scale = train.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def load_csv(path, target: str = "", split=(0.7, 0.1, 0.2), standardize: bool = True, seed: int = 0,
             classification: bool = False) -> Dataset:
    """Shuffle rows with the ``data/split`` stream of ``seed`` and split them.

    ``target`` names the response column (default: the last one). Feature
    standardisation uses train-split statistics only; regression targets
    are standardised the same way, class labels are left alone.
    """
    header, table = read_table(path)
    col = target or header[-1]
    if col not in header:
        raise DataError(f"target column {col!r} not in header {header}")
    j = header.index(col)
    X = np.delete(table, j, axis=1)
    y = table[:, j:j + 1]
    if classification and np.any(y != np.round(y)):
        raise DataError(f"target column {col!r} must hold integer class labels")
    order = generator(seed, "data/split").permutation(len(table))
    X, y = X[order], y[order]
    n_train, n_val, _ = split_sizes(len(table), split)
    cuts = {"train": slice(0, n_train), "val": slice(n_train, n_train + n_val), "test": slice(n_train + n_val, None)}
    ds = Dataset({k: X[s] for k, s in cuts.items()}, {k: y[s] for k, s in cuts.items()},
                 columns=[h for h in header if h != col] + [col])
    if standardize:
        if n_train < 2:
            raise DataError("standardisation needs at least two training rows")
        ds.x_mean, ds.x_scale = _standardize(ds.X["train"])
        for k in SPLITS:
            ds.X[k] = (ds.X[k] - ds.x_mean) / ds.x_scale
        if not classification:
            ds.y_mean, ds.y_scale = _standardize(ds.y["train"])
            for k in SPLITS:
                ds.y[k] = (ds.y[k] - ds.y_mean) / ds.y_scale
    return ds


def synthetic_dataset(task: SyntheticLinearTask) -> Dataset:
    """All ``n`` generated points train; a test set reuses the inputs with fresh noise."""
    X, y = task.generate()
    eps = generator(task.seed, "data/synthetic", 1).standard_normal(task.n)
    y_test = task.slope * X + task.noise_sd * eps[:, None]
    empty = np.zeros((0, 1))
    return Dataset({"train": X, "val": empty, "test": X.copy()}, {"train": y, "val": empty, "test": y_test},
                   columns=["x", "y"])
