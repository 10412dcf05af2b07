"""Right-censored survival data: records, schema, encoding and CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal, Sequence

import numpy as np

__all__ = [
    "SurvivalDataError",
    "ConvergenceError",
    "Covariate",
    "SurvRecord",
    "SurvDataset",
    "encode",
    "read_csv",
    "read_covariate_csv",
    "write_csv",
    "read_schema",
]


class SurvivalDataError(ValueError):
    """Invalid survival data or covariate input."""


class ConvergenceError(ArithmeticError):
    """A numerical procedure failed to converge or diverged."""


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: Literal["numeric", "categorical"] = "numeric"
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SurvivalDataError(
                f"unknown covariate kind {self.kind!r} for {self.name!r}"
            )
        if self.kind == "categorical" and len(self.levels) < 1:
            raise SurvivalDataError(f"categorical covariate {self.name!r} has no levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Covariate":
        return cls(d["name"], d.get("kind", "numeric"), tuple(d.get("levels", ())))


@dataclass(frozen=True)
class SurvRecord:
    time: float
    event: int
    covariates: tuple[float, ...]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvDataset:
    """Immutable collection of right-censored observations.

    Covariates are stored as a float matrix in schema order. Categorical
    columns hold integer level codes (indices into ``Covariate.levels``).
    """

    time: np.ndarray
    event: np.ndarray
    X: np.ndarray
    schema: tuple[Covariate, ...] = field(default=())

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event)
        X = np.asarray(self.X, dtype=float)
        n = time.shape[0]
        if n == 0:
            raise SurvivalDataError("dataset is empty")
        if X.ndim == 1:
            X = X.reshape(n, -1) if X.size else np.zeros((n, 0))
        schema = tuple(self.schema)
        if not schema:
            schema = tuple(Covariate(f"x{j + 1}") for j in range(X.shape[1]))
        if X.shape != (n, len(schema)):
            raise SurvivalDataError(
                f"covariate matrix shape {X.shape} does not match "
                f"{n} records x {len(schema)} schema columns"
            )
        if event.shape != (n,):
            raise SurvivalDataError("event vector length differs from time vector")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise SurvivalDataError("observed times must be finite and > 0")
        if not np.all(np.isin(event, (0, 1))):
            raise SurvivalDataError("event indicators must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise SurvivalDataError("covariates must be finite")
        for j, cov in enumerate(schema):
            if cov.is_categorical:
                codes = X[:, j]
                if np.any(codes != np.round(codes)) or np.any(codes < 0) or np.any(
                    codes >= len(cov.levels)
                ):
                    raise SurvivalDataError(
                        f"column {cov.name!r} holds codes outside its {len(cov.levels)} levels"
                    )
        names = [c.name for c in schema]
        if len(set(names)) != len(names):
            raise SurvivalDataError("duplicate covariate names in schema")
        object.__setattr__(self, "time", _readonly(time))
        object.__setattr__(self, "event", _readonly(event.astype(np.int8)))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "schema", schema)

    @classmethod
    def from_records(
        cls, records: Iterable[SurvRecord | tuple], schema: Sequence[Covariate] = ()
    ) -> "SurvDataset":
        rows = [r if isinstance(r, SurvRecord) else _as_record(r) for r in records]
        if not rows:
            raise SurvivalDataError("dataset is empty")
        p = len(rows[0].covariates)
        if any(len(r.covariates) != p for r in rows):
            raise SurvivalDataError("records have inconsistent covariate lengths")
        X = np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), p)
        return cls(
            np.array([r.time for r in rows], dtype=float),
            np.array([r.event for r in rows]),
            X,
            tuple(schema),
        )

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return len(self.schema)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[SurvRecord]:
        for i in range(self.n):
            yield SurvRecord(float(self.time[i]), int(self.event[i]), tuple(self.X[i]))

    @property
    def records(self) -> list[SurvRecord]:
        return list(self)

    def subset(self, idx) -> "SurvDataset":
        idx = np.asarray(idx)
        return SurvDataset(self.time[idx], self.event[idx], self.X[idx], self.schema)

    def select(self, names: Sequence[str]) -> "SurvDataset":
        """Keep only the named covariates, in the given order."""
        cols = [self.column_index(nm) for nm in names]
        return SurvDataset(
            self.time, self.event, self.X[:, cols], tuple(self.schema[c] for c in cols)
        )

    def with_events(self, event) -> "SurvDataset":
        return SurvDataset(self.time, np.asarray(event), self.X, self.schema)

    def column_index(self, name: str) -> int:
        for j, c in enumerate(self.schema):
            if c.name == name:
                return j
        raise SurvivalDataError(f"unknown covariate {name!r}")

    def require_events(self) -> None:
        if self.n_events == 0:
            raise SurvivalDataError("dataset contains no events")

    def check_vector(self, x) -> np.ndarray:
        return check_covariates(x, self.schema)


def check_covariates(x, schema: Sequence[Covariate]) -> np.ndarray:
    """Validate a raw covariate vector (or matrix of rows) against a schema."""
    x = np.asarray(x, dtype=float)
    p = len(schema)
    width = x.shape[-1] if x.ndim else 1
    if x.ndim == 0 or width != p:
        raise SurvivalDataError(
            f"covariate vector length {width} does not match schema length {p}"
        )
    if not np.all(np.isfinite(x)):
        raise SurvivalDataError("covariates must be finite")
    return x


def _as_record(r) -> SurvRecord:
    # (time, event), (time, event, x1, x2, ...) or (time, event, [x1, x2, ...])
    rest = r[2:]
    if len(rest) == 1 and isinstance(rest[0], (tuple, list, np.ndarray)):
        rest = rest[0]
    return SurvRecord(float(r[0]), int(r[1]), tuple(float(v) for v in rest))


def encode(
    X: np.ndarray,
    schema: Sequence[Covariate],
    scheme: Literal["reference", "onehot"] = "reference",
) -> tuple[np.ndarray, list[str], dict[str, list[int]]]:
    """Expand categorical columns into indicator columns.

    ``reference`` drops the first level of each categorical covariate (for
    models without an intercept); ``onehot`` keeps all K levels.

    Returns the encoded matrix, encoded column names and a map from schema
    covariate name to its block of encoded column indices.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = []
    names: list[str] = []
    blocks: dict[str, list[int]] = {}
    for j, cov in enumerate(schema):
        start = len(names)
        if cov.is_categorical:
            first = 1 if scheme == "reference" else 0
            for k in range(first, len(cov.levels)):
                cols.append((X[:, j] == k).astype(float))
                names.append(f"{cov.name}={cov.levels[k]}")
        else:
            cols.append(X[:, j])
            names.append(cov.name)
        blocks[cov.name] = list(range(start, len(names)))
    M = np.column_stack(cols) if cols else np.zeros((X.shape[0], 0))
    return M, names, blocks


def read_schema(path: str | Path) -> tuple[Covariate, ...]:
    with open(path) as fh:
        doc = json.load(fh)
    entries = doc["covariates"] if isinstance(doc, dict) else doc
    return tuple(Covariate.from_dict(d) for d in entries)


def _is_number(s: str) -> bool:
    try:
        return math.isfinite(float(s))
    except ValueError:
        return False


def read_csv(
    path: str | Path, schema: Sequence[Covariate] | str | Path | None = None
) -> SurvDataset:
    """Load a dataset from CSV with reserved ``time`` and ``event`` columns.

    Columns not declared categorical by ``schema`` are numeric unless some
    value fails to parse as a number, in which case the column is inferred
    categorical with sorted levels.
    """
    if isinstance(schema, (str, Path)):
        schema = read_schema(schema)
    declared = {c.name: c for c in schema or ()}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SurvivalDataError(f"{path}: empty file") from None
        for req in ("time", "event"):
            if req not in header:
                raise SurvivalDataError(f"{path}: missing required column {req!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SurvivalDataError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append((lineno, [c.strip() for c in row]))
    if not rows:
        raise SurvivalDataError(f"{path}: no data rows")
    it, ie = header.index("time"), header.index("event")
    cov_cols = [j for j, h in enumerate(header) if h not in ("time", "event")]
    for name in declared:
        if name not in header:
            raise SurvivalDataError(f"{path}: schema covariate {name!r} not in header")

    covs: list[Covariate] = []
    for j in cov_cols:
        name = header[j]
        if name in declared:
            covs.append(declared[name])
        elif all(_is_number(r[j]) for _, r in rows):
            covs.append(Covariate(name))
        else:
            covs.append(Covariate(name, "categorical", tuple(sorted({r[j] for _, r in rows}))))

    time = np.empty(len(rows))
    event = np.empty(len(rows), dtype=int)
    X = np.empty((len(rows), len(cov_cols)))
    for i, (lineno, r) in enumerate(rows):
        try:
            time[i] = float(r[it])
            ev = float(r[ie])
        except ValueError:
            raise SurvivalDataError(f"{path}: line {lineno}: non-numeric time/event") from None
        if not (time[i] > 0 and math.isfinite(time[i])):
            raise SurvivalDataError(f"{path}: line {lineno}: time must be positive")
        if ev not in (0.0, 1.0):
            raise SurvivalDataError(f"{path}: line {lineno}: event must be 0 or 1")
        event[i] = int(ev)
        for k, (j, cov) in enumerate(zip(cov_cols, covs)):
            v = r[j]
            if cov.is_categorical:
                if v not in cov.levels:
                    raise SurvivalDataError(
                        f"{path}: line {lineno}: {v!r} is not a level of {cov.name!r}"
                    )
                X[i, k] = cov.levels.index(v)
            else:
                if not _is_number(v):
                    raise SurvivalDataError(
                        f"{path}: line {lineno}: non-numeric value {v!r} in {cov.name!r}"
                    )
                X[i, k] = float(v)
    return SurvDataset(time, event, X, tuple(covs))


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def write_csv(data: SurvDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event", *data.names])
        for i in range(data.n):
            vals = [
                c.levels[int(data.X[i, j])] if c.is_categorical else _fmt(data.X[i, j])
                for j, c in enumerate(data.schema)
            ]
            w.writerow([repr(float(data.time[i])), int(data.event[i]), *vals])


def read_covariate_csv(path: str | Path, schema: Sequence[Covariate]) -> np.ndarray:
    """Covariate matrix for ``schema`` from a CSV; other columns are ignored."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SurvivalDataError(f"{path}: empty file") from None
        for c in schema:
            if c.name not in header:
                raise SurvivalDataError(f"{path}: missing covariate column {c.name!r}")
        cols = [header.index(c.name) for c in schema]
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != len(header):
                raise SurvivalDataError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            x = []
            for j, c in zip(cols, schema):
                v = row[j].strip()
                if c.is_categorical:
                    if v not in c.levels:
                        raise SurvivalDataError(f"{path}: line {lineno}: {v!r} is not a level of {c.name!r}")
                    x.append(float(c.levels.index(v)))
                elif _is_number(v):
                    x.append(float(v))
                else:
                    raise SurvivalDataError(f"{path}: line {lineno}: non-numeric value {v!r} in {c.name!r}")
            out.append(x)
    if not out:
        raise SurvivalDataError(f"{path}: no data rows")
    return np.array(out, dtype=float).reshape(len(out), len(schema))
