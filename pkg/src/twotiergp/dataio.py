"""CSV ingestion, column-role schemas and model artifacts."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .tier2 import TwoTierModel

ARTIFACT_FORMAT = "twotiergp-model"
ARTIFACT_VERSION = 1


@dataclass(frozen=True)
class FactorColumns:
    u: tuple
    omega: str
    z: str


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles: x settings, one (u, omega, z) group per main factor, and y."""

    x: tuple
    factors: tuple
    y: str

    def __post_init__(self):
        if not isinstance(self.y, str) or not self.y:
            raise InputError("schema needs exactly one y column (a string)")
        if not self.factors:
            raise InputError("schema needs at least one factor group")
        for f in self.factors:
            if not f.u:
                raise InputError(f"factor {f.z!r} lists no u columns")
        names = self.all_columns()
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise InputError(f"column(s) assigned more than one role: {', '.join(dupes)}")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        if not isinstance(d, dict):
            raise InputError("schema must be a JSON object")
        unknown = sorted(set(d) - {"x", "factors", "y"})
        if unknown:
            raise InputError(f"unknown schema key(s): {', '.join(unknown)}")
        if "y" not in d or isinstance(d["y"], list):
            raise InputError("schema needs exactly one y column")
        try:
            factors = tuple(
                FactorColumns(tuple(f["u"]) if isinstance(f["u"], list) else (f["u"],), f["omega"], f["z"])
                for f in d.get("factors", [])
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"each factor needs 'u', 'omega' and 'z': {exc}") from None
        return cls(tuple(d.get("x", [])), factors, d["y"])

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise InputError(f"cannot read schema {path}: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "x": list(self.x),
            "factors": [{"u": list(f.u), "omega": f.omega, "z": f.z} for f in self.factors],
            "y": self.y,
        }

    def query_columns(self) -> list:
        cols = list(self.x)
        for f in self.factors:
            cols.extend(f.u)
            cols.append(f.omega)
        return cols

    def all_columns(self) -> list:
        cols = self.query_columns()
        cols.extend(f.z for f in self.factors)
        cols.append(self.y)
        return cols


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray | None
    u: list
    omega: list
    z: np.ndarray
    y: np.ndarray | None

    @property
    def n(self) -> int:
        return len(self.omega[0])

    def subset(self, idx) -> "Dataset":
        return Dataset(
            None if self.x is None else self.x[idx],
            [u[idx] for u in self.u],
            [o[idx] for o in self.omega],
            None if self.z is None else self.z[idx],
            None if self.y is None else self.y[idx],
        )


def read_csv(path) -> dict:
    """Read a headed numeric CSV into ``{column: float array}``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: empty file (a header row is required)")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    data = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InputError(f"{path}, row {i}: expected {len(header)} cells, found {len(row)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}, row {i}, column {header[j]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}, row {i}, column {header[j]!r}: non-finite value {cell!r}")
            data[i - 2, j] = v
    return {h: data[:, j] for j, h in enumerate(header)}


def _require(cols: dict, names, path):
    missing = [n for n in names if n not in cols]
    if missing:
        raise InputError(f"{path}: missing column(s): {', '.join(missing)}")


def _assemble_dataset(cols, schema: DatasetSchema, with_targets: bool) -> Dataset:
    x = np.column_stack([cols[c] for c in schema.x]) if schema.x else None
    u = [np.column_stack([cols[c] for c in f.u]) for f in schema.factors]
    omega = [cols[f.omega] for f in schema.factors]
    if not with_targets:
        return Dataset(x, u, omega, None, None)
    z = np.column_stack([cols[f.z] for f in schema.factors])
    return Dataset(x, u, omega, z, cols[schema.y])


def load_dataset(path, schema: DatasetSchema) -> Dataset:
    cols = read_csv(path)
    _require(cols, schema.all_columns(), path)
    return _assemble_dataset(cols, schema, True)


def load_queries(path, schema: DatasetSchema) -> Dataset:
    cols = read_csv(path)
    _require(cols, schema.query_columns(), path)
    return _assemble_dataset(cols, schema, False)


def atomic_write_text(path, text: str):
    """Write ``text`` via a temporary file and rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = os.path.join(d, f".{os.path.basename(path)}.tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def format_csv(header, columns) -> str:
    """CSV text with ``repr`` floats so values round-trip exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_columns_csv(path, cols: dict):
    atomic_write_text(path, format_csv(list(cols), [np.asarray(v) for v in cols.values()]))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def save_artifact(path, model: TwoTierModel, schema: DatasetSchema, data_sha256: str | None = None,
                  settings: dict | None = None):
    """Write a versioned JSON model artifact (floats stored exactly)."""
    doc = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "schema": schema.to_dict(),
        "data_sha256": data_sha256,
        "settings": settings or {},
        "model": model.to_dict(),
    }
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_artifact(path):
    """Return ``(model, schema, document)`` from an artifact file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read model {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a model artifact ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != ARTIFACT_FORMAT:
        raise InputError(f"{path}: not a {ARTIFACT_FORMAT} file")
    if doc.get("version") != ARTIFACT_VERSION:
        raise InputError(f"{path}: unsupported artifact version {doc.get('version')!r}")
    schema = DatasetSchema.from_dict(doc["schema"])
    return TwoTierModel.from_dict(doc["model"]), schema, doc
