"""CSV ingestion and atomic artifact writes."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError, ValidationError


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: np.ndarray | None = None
    task_labels: list = field(default_factory=list)
    features: list = field(default_factory=list)
    target: str = "y"
    # per-column (mean, std) applied to X and y when standardized
    x_scaling: list | None = None
    y_scaling: tuple | None = None

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def s(self):
        return len(self.task_labels)

    def standardization(self):
        if self.x_scaling is None:
            return None
        return {"features": [list(p) for p in self.x_scaling], "target": list(self.y_scaling)}


def _float(cell, row, column):
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r}", row, column) from None


def load_dataset(path, features=None, target="y", task=None, standardize=False):
    """Read a headered CSV into ``(X, y, task)`` arrays.

    ``features`` defaults to every column other than ``target`` and ``task``.
    With ``target=None`` only features are read and ``y`` is all NaN.
    Task labels are factorized in order of first appearance. Row numbers in
    errors count the header as row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = list(reader)
    wanted = ([target] if target else []) + ([task] if task else [])
    if features is None:
        features = [h for h in header if h not in wanted]
    for col in list(features) + wanted:
        if col not in header:
            raise SchemaError(f"column {col!r} not found in {path} (have {header})")
    if not features:
        raise SchemaError(f"{path} has no feature columns")
    pos = {h: i for i, h in enumerate(header)}

    X = np.empty((len(rows), len(features)))
    y = np.empty(len(rows))
    labels, index = {}, []
    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != len(header):
            raise ParseError(f"{len(row)} fields where the header has {len(header)}", line, None)
        for j, col in enumerate(features):
            X[r, j] = _float(row[pos[col]], line, col)
        y[r] = _float(row[pos[target]], line, target) if target else np.nan
        if task:
            index.append(labels.setdefault(row[pos[task]].strip(), len(labels)))
    if not rows:
        raise ValidationError(f"{path} has no data rows")
    bad = np.flatnonzero(~np.isfinite(X).all(axis=1) | (~np.isfinite(y) if target else False))
    if bad.size:
        raise ValidationError(f"non-finite value in row {int(bad[0]) + 2}")

    ds = Dataset(X, y, np.array(index, dtype=np.intp) if task else None, list(labels),
                 list(features), target)
    if standardize:
        mx, sx = X.mean(axis=0), X.std(axis=0)
        sx = np.where(sx > 0, sx, 1.0)
        my, sy = (float(y.mean()), float(y.std()) or 1.0) if target else (0.0, 1.0)
        ds.X = (X - mx) / sx
        ds.y = (y - my) / sy
        ds.x_scaling = [(float(a), float(b)) for a, b in zip(mx, sx)]
        ds.y_scaling = (my, sy)
    return ds


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path, text):
    """Write ``text`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    write_atomic(path, "\n".join(lines) + "\n")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
