"""CSV and JSON ingestion/serialization."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .model import Dataset, InputError

FLOAT_FMT = "%.17g"


def format_float(v: float) -> str:
    return FLOAT_FMT % float(v)


def write_matrix_csv(path, M, header) -> None:
    """Write ``M`` with a header row; values keep 17 significant digits."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    header = list(header)
    if M.shape[1] != len(header):
        raise InputError(f"{len(header)} header names for {M.shape[1]} columns")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in M:
            w.writerow([format_float(v) for v in row])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Return ``(names, matrix)``; rejects ragged rows, text and non-finite cells."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: empty file (a header row is required)")
    names = [c.strip() for c in rows[0]]
    if any(_is_number(c) for c in names):
        raise InputError(f"{path}: first row looks numeric; a header row is required")
    if len(set(names)) != len(names):
        raise InputError(f"{path}: duplicate column names")
    data = np.empty((len(rows) - 1, len(names)))
    for i, r in enumerate(rows[1:]):
        if len(r) != len(names):
            raise InputError(f"{path}: row {i + 2} has {len(r)} cells, expected {len(names)}")
        for j, c in enumerate(r):
            try:
                v = float(c)
            except ValueError:
                raise InputError(f"{path}: non-numeric cell {c!r} at row {i + 2}, column {j + 1}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: non-finite value at row {i + 2}, column {j + 1}")
            data[i, j] = v
    return names, data


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_dataset(y_path, x_path) -> Dataset:
    y_names, Y = read_matrix_csv(y_path)
    x_names, X = read_matrix_csv(x_path)
    if Y.shape[0] != X.shape[0]:
        raise InputError(f"Y has {Y.shape[0]} rows but X has {X.shape[0]}")
    if Y.shape[0] == 0:
        raise InputError("no subjects")
    return Dataset(Y, X, y_names, x_names)


def write_dataset(directory, dataset: Dataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(d / "Y.csv", dataset.Y, dataset.y_names)
    write_matrix_csv(d / "X.csv", dataset.X, dataset.x_names)


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, default=_json_default)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Dashes in keys
    become underscores so keys match the long flag names."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise InputError(f"no such config file: {path}") from None
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out
