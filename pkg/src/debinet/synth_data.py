"""Seeded synthetic generators and CSV ingestion.

Every generator is a pure function of its arguments.  Each random term
(design, and every additive noise vector) draws from its own child stream
of ``numpy.random.SeedSequence(seed)`` so that adding or suppressing one
term never shifts the others.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidSizeError,
    InvalidSparsityError,
    MissingColumnError,
    NonNumericCellError,
)

REGIMES = ("table1", "table2", "complex")

# log(T2 + 1) is undefined for T2 <= -1; standard-normal draws hit that region.
T2_FLOOR = -0.999


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    beta_true: np.ndarray | None = None
    noise_sd: float = 1.0
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise InvalidSizeError(
                f"X has shape {self.X.shape} but y has shape {self.y.shape}"
            )
        if self.beta_true is not None and self.beta_true.shape != (self.X.shape[1],):
            raise InvalidSizeError("beta_true must have one entry per column of X")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class PlmData:
    """Data already split into the linear block ``D`` and nuisance block ``Z``."""

    Z: np.ndarray
    D: np.ndarray
    y: np.ndarray
    beta_true: np.ndarray = field(default_factory=lambda: np.ones(1))

    @property
    def n(self):
        return self.y.shape[0]

    def to_dataset(self) -> Dataset:
        # Z enters nonlinearly, so there is no full coefficient vector to attach.
        return Dataset(X=np.hstack([self.D, self.Z]), y=self.y.copy())

    def take(self, rows) -> "PlmData":
        return PlmData(self.Z[rows], self.D[rows], self.y[rows], self.beta_true)


@dataclass(frozen=True)
class GenSpec:
    regime: str
    n: int
    p: int | None = None
    k: int | None = None
    seed: int = 0
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.regime == "table2":
            if self.p is None or self.k is None:
                raise InvalidSizeError("table2 needs both p and k")
            if self.k > self.p:
                raise InvalidSparsityError(f"k={self.k} exceeds p={self.p}")

    def generate(self):
        if self.regime == "table1":
            return gen_table1(self.n, self.seed, noise_sd=self.noise_sd)
        if self.regime == "complex":
            return gen_complex(self.n, self.seed, noise_sd=self.noise_sd)
        return gen_table2(self.n, self.p, self.k, self.seed, noise_sd=self.noise_sd)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("regime", "n", "p", "k", "seed", "noise_sd") if k in d})


def _streams(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _check_n(n):
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidSizeError(f"sample size must be a positive integer, got {n!r}")


def table1_from_z(Z, noise_D=None, noise_y=None) -> PlmData:
    """Evaluate the Table-1 mechanism at given ``Z``; missing noise means zero noise."""
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    eD = np.zeros(n) if noise_D is None else noise_D
    ey = np.zeros(n) if noise_y is None else noise_y
    D = 50.0 * np.sin(Z).sum(axis=1) + eD
    y = D + np.cosh(Z).sum(axis=1) + ey
    return PlmData(Z=Z, D=D[:, None], y=y, beta_true=np.ones(1))


def gen_table1(n: int, seed: int, noise_sd: float = 1.0) -> PlmData:
    """Z ~ N(0, I_10); D = 50 sum sin Z_j + e1; y = D + sum cosh Z_j + e2."""
    _check_n(n)
    rz, rd, ry = _streams(seed, 3)
    Z = rz.standard_normal((n, 10))
    return table1_from_z(
        Z, noise_sd * rd.standard_normal(n), noise_sd * ry.standard_normal(n)
    )


def complex_from_t(T, noise_D=None, noise_y=None) -> PlmData:
    T = np.asarray(T, dtype=float)
    n = T.shape[0]
    eD = np.zeros(n) if noise_D is None else noise_D
    ey = np.zeros(n) if noise_y is None else noise_y
    t1, t2, t3, t4, t5 = T.T
    t2c = np.maximum(t2, T2_FLOOR)
    # 1/(1+T3) has a pole at T3 = -1 as well; it is left as drawn (measure zero).
    D = np.sin(t1) + np.log(t2c + 1.0) + 1.0 / (1.0 + t3) + np.maximum(0.0, t4) + t5**2 + eD
    y = D + np.cosh(t1) + t2 + t3 * t4 + ey
    return PlmData(Z=T, D=D[:, None], y=y, beta_true=np.ones(1))


def gen_complex(n: int, seed: int, noise_sd: float = 1.0) -> PlmData:
    _check_n(n)
    rt, rd, ry = _streams(seed, 3)
    T = rt.standard_normal((n, 5))
    return complex_from_t(
        T, noise_sd * rd.standard_normal(n), noise_sd * ry.standard_normal(n)
    )


def gen_table2(n: int, p: int, k: int, seed: int, noise_sd: float = 1.0) -> Dataset:
    """X ~ N(0, I_p), theta = (1,...,1,0,...,0) with k ones, y = X theta + e."""
    _check_n(n)
    if p < 1:
        raise InvalidSizeError(f"p must be positive, got {p}")
    if k < 1 or k > p:
        raise InvalidSparsityError(f"sparsity k={k} must lie in [1, p={p}]")
    rx, re = _streams(seed, 2)
    X = rx.standard_normal((n, p))
    theta = np.zeros(p)
    theta[:k] = 1.0
    y = X[:, :k].sum(axis=1) + noise_sd * re.standard_normal(n)
    return Dataset(X=X, y=y, beta_true=theta, noise_sd=noise_sd)


def load_csv(path, target_column: str) -> Dataset:
    """Read a comma-separated numeric table with a mandatory header row."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumnError(f"{path} is empty; a header row is required") from None
        if target_column not in header:
            raise MissingColumnError(
                f"target column {target_column!r} not found in header {header}",
                column=target_column,
            )
        rows = []
        for lineno, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) != len(header):
                raise NonNumericCellError(
                    f"data row {lineno} has {len(record)} cells, header has {len(header)}",
                    row=lineno,
                )
            vals = []
            for name, cell in zip(header, record):
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCellError(
                        f"non-numeric cell {cell!r} at data row {lineno}, column {name!r}",
                        row=lineno,
                        column=name,
                    ) from None
                if not math.isfinite(v):
                    raise NonNumericCellError(
                        f"non-finite cell {cell!r} at data row {lineno}, column {name!r}",
                        row=lineno,
                        column=name,
                    )
                vals.append(v)
            rows.append(vals)
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    t = header.index(target_column)
    feats = [j for j in range(len(header)) if j != t]
    return Dataset(
        X=table[:, feats],
        y=table[:, t],
        columns=tuple(header[j] for j in feats),
    )


def write_csv(dataset: Dataset, path, target_column: str = "y"):
    """Write ``dataset`` so that :func:`load_csv` restores it bit-exactly."""
    names = list(dataset.columns) if dataset.columns else [f"x{j}" for j in range(dataset.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + [target_column])
        for row, t in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
