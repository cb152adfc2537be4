"""Feature-matrix CSV files: ``id,label,f1,...,fd`` with ``?`` for unknown labels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

UNLABELED = "?"


@dataclass(frozen=True)
class FeatureTable:
    ids: list[str]
    labels: list[str | None]
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or not self.values.shape[0] == len(self.ids) == len(self.labels):
            raise DataError("feature table rows are inconsistent")

    @property
    def labeled(self) -> bool:
        return all(lbl is not None for lbl in self.labels)


def read_feature_csv(path) -> FeatureTable:
    path = Path(path)
    ids, labels, rows = [], [], []
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3:
            raise DataError(f"{path}: expected header 'id,label,<features...>'")
        d = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise DataError(f"{path}:{lineno}: expected {d + 2} fields, got {len(row)}")
            ids.append(row[0])
            labels.append(None if row[1] == UNLABELED else row[1])
            try:
                rows.append([float(v) for v in row[2:]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
    if not rows:
        raise DataError(f"{path}: no samples")
    values = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite feature values")
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate sample ids")
    return FeatureTable(ids, labels, values)


def write_feature_csv(path, ids, labels, values) -> Path:
    path = Path(path)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"] + [f"f{j}" for j in range(values.shape[1])])
        for i, lbl, row in zip(ids, labels, values):
            w.writerow([i, UNLABELED if lbl is None else lbl] + [repr(float(v)) for v in row])
    return path
