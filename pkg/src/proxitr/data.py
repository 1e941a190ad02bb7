"""Columnar sample container and its standardization / CSV plumbing.

A sample holds observed covariates L, treatment-inducing proxies Z,
outcome-inducing proxies W, a binary treatment A in {-1, +1} and a real
outcome Y. All estimation routines consume this container.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateDataError, InvalidArgumentError

__all__ = ["SampleTable", "Standardization", "standardize"]

CSV_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Standardization:
    """Per-column centers and scales used to standardize a table."""

    l_mean: np.ndarray
    l_scale: np.ndarray
    z_mean: np.ndarray
    z_scale: np.ndarray
    w_mean: np.ndarray
    w_scale: np.ndarray
    y_mean: float
    y_scale: float


def _block(X, name: str, n: int | None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 1- or 2-dimensional")
    if n is not None and X.shape[0] != n:
        raise InvalidArgumentError(f"{name} has {X.shape[0]} rows, expected {n}")
    if not np.isfinite(X).all():
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return X


@dataclass(frozen=True)
class SampleTable:
    """Immutable (L, Z, W, A, Y) dataset with A in {-1, +1}."""

    L: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    standardization: Standardization | None = None

    def __post_init__(self):
        L = _block(self.L, "L", None)
        n = L.shape[0]
        Z = _block(self.Z, "Z", n)
        W = _block(self.W, "W", n)
        A = np.asarray(self.A)
        if A.shape != (n,):
            raise InvalidArgumentError(f"A must be a length-{n} vector")
        if not np.all(np.isin(A, (-1, 1))):
            bad = int(np.flatnonzero(~np.isin(A, (-1, 1)))[0])
            raise InvalidArgumentError(f"A must contain only -1/+1; row {bad} is {A[bad]!r}")
        Y = np.asarray(self.Y, dtype=float)
        if Y.shape != (n,):
            raise InvalidArgumentError(f"Y must be a length-{n} vector")
        if not np.isfinite(Y).all():
            raise InvalidArgumentError("Y contains non-finite values")
        for name, value in (("L", L), ("Z", Z), ("W", W), ("A", A.astype(int)), ("Y", Y)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def subset(self, idx) -> "SampleTable":
        idx = np.asarray(idx)
        return SampleTable(self.L[idx], self.Z[idx], self.W[idx], self.A[idx],
                           self.Y[idx], standardization=self.standardization)

    def arm_indices(self, a: int) -> np.ndarray:
        return np.flatnonzero(self.A == a)

    # -- CSV round trip ----------------------------------------------------

    def header(self) -> list[str]:
        cols = [f"L{j + 1}" for j in range(self.L.shape[1])]
        cols += [f"Z{j + 1}" for j in range(self.Z.shape[1])]
        cols += [f"W{j + 1}" for j in range(self.W.shape[1])]
        return cols + ["A", "Y"]

    def to_csv(self, path) -> None:
        data = np.column_stack([self.L, self.Z, self.W, self.A.astype(float), self.Y])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.header()) + "\n")
            for row in data:
                fields = [CSV_FLOAT_FMT % v for v in row[:-2]]
                fields.append(str(int(row[-2])))
                fields.append(CSV_FLOAT_FMT % row[-1])
                fh.write(",".join(fields) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SampleTable":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip() for line in fh if line.strip()]
        blocks = {"L": [], "Z": [], "W": []}
        for name in header:
            if name and name[0] in blocks and name[1:].isdigit():
                blocks[name[0]].append(name)
            elif name not in ("A", "Y"):
                raise InvalidArgumentError(f"unrecognized CSV column {name!r}")
        for required in ("A", "Y"):
            if required not in header:
                raise InvalidArgumentError(f"CSV is missing column {required!r}")
        col = {name: i for i, name in enumerate(header)}
        n = len(rows)
        parsed = np.empty((n, len(header)), dtype=float)
        for i, line in enumerate(rows):
            fields = line.split(",")
            if len(fields) != len(header):
                raise InvalidArgumentError(
                    f"row {i + 2}: expected {len(header)} fields, got {len(fields)}")
            for j, raw in enumerate(fields):
                try:
                    parsed[i, j] = float(raw)
                except ValueError:
                    raise InvalidArgumentError(
                        f"row {i + 2}, column {header[j]!r}: cannot parse {raw!r}") from None
        a_raw = parsed[:, col["A"]]
        bad = np.flatnonzero(~np.isin(a_raw, (-1, 1)))
        if bad.size:
            raise InvalidArgumentError(
                f"row {int(bad[0]) + 2}, column 'A': value {a_raw[bad[0]]!r} not in -1/+1")
        grab = lambda names: parsed[:, [col[c] for c in names]]
        return cls(L=grab(blocks["L"]), Z=grab(blocks["Z"]), W=grab(blocks["W"]),
                   A=a_raw.astype(int), Y=parsed[:, col["Y"]])


def _column_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def standardize(table: SampleTable) -> SampleTable:
    """Return a copy with every column of L, Z, W and Y scaled to mean 0,
    standard deviation 1, remembering the applied transform."""
    if table.n < 2:
        raise DegenerateDataError("cannot standardize fewer than 2 rows")
    lm, ls = _column_stats(table.L)
    zm, zs = _column_stats(table.Z)
    wm, ws = _column_stats(table.W)
    ym, ysc = _column_stats(table.Y[:, None])
    record = Standardization(lm, ls, zm, zs, wm, ws, float(ym[0]), float(ysc[0]))
    return replace(
        table,
        L=(table.L - lm) / ls,
        Z=(table.Z - zm) / zs,
        W=(table.W - wm) / ws,
        Y=(table.Y - record.y_mean) / record.y_scale,
        standardization=record,
    )
