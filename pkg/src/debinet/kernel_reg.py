"""Nadaraya-Watson regression with a Gaussian kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateQueryError, InvalidParameterError, InvalidSizeError, ShapeError

# A query whose raw kernel-weight sum falls below this is rejected.
MIN_WEIGHT_SUM = 1e-300
_LOG_MIN_WEIGHT_SUM = math.log(MIN_WEIGHT_SUM)
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class NwModel:
    Z_train: np.ndarray
    targets: np.ndarray
    bandwidth: float
    kernel: str = "gaussian"
    squeeze: bool = False


def nw_fit(Z_train, targets, bandwidth: float) -> NwModel:
    Z = np.asarray(Z_train, dtype=float)
    T = np.asarray(targets, dtype=float)
    squeeze = T.ndim == 1
    if squeeze:
        T = T[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] < 1:
        raise InvalidSizeError("need at least one training row")
    if T.shape[0] != Z.shape[0]:
        raise ShapeError(f"{Z.shape[0]} inputs but {T.shape[0]} targets")
    if not bandwidth > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {bandwidth}")
    return NwModel(Z_train=Z, targets=T, bandwidth=float(bandwidth), squeeze=squeeze)


def _sqdist(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def nw_weights(model: NwModel, Z_query, row_offset: int = 0) -> np.ndarray:
    """Normalised kernel weights, shape ``(k, n)``; rows sum to one."""
    Q = np.asarray(Z_query, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None] if model.Z_train.shape[1] == 1 else Q[None, :]
    if Q.shape[1] != model.Z_train.shape[1]:
        raise ShapeError(f"query has {Q.shape[1]} features, model has {model.Z_train.shape[1]}")
    n = model.Z_train.shape[0]
    if math.isinf(model.bandwidth):
        return np.full((Q.shape[0], n), 1.0 / n)
    logk = -_sqdist(Q, model.Z_train) / (2.0 * model.bandwidth ** 2)
    lse = logsumexp(logk, axis=1)
    bad = np.flatnonzero(lse < _LOG_MIN_WEIGHT_SUM)
    if bad.size:
        r = int(bad[0]) + row_offset
        raise DegenerateQueryError(
            f"all kernel weights vanish at query row {r} (bandwidth {model.bandwidth:g})", row=r
        )
    return np.exp(logk - lse[:, None])


def nw_predict(model: NwModel, Z_query, chunk: int = 2048) -> np.ndarray:
    Q = np.asarray(Z_query, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None] if model.Z_train.shape[1] == 1 else Q[None, :]
    out = np.empty((Q.shape[0], model.targets.shape[1]))
    for s in range(0, Q.shape[0], chunk):
        out[s:s + chunk] = nw_weights(model, Q[s:s + chunk], row_offset=s) @ model.targets
    return out[:, 0] if model.squeeze else out


def nw_predict_loo(model: NwModel, chunk: int = 2048) -> np.ndarray:
    """In-sample predictions with each training row's own weight removed."""
    Z, T = model.Z_train, model.targets
    n = Z.shape[0]
    if n < 2:
        raise DegenerateQueryError("leave-one-out prediction needs at least two rows", row=0)
    out = np.empty_like(T)
    for s in range(0, n, chunk):
        rows = np.arange(s, min(s + chunk, n))
        if math.isinf(model.bandwidth):
            out[rows] = (T.sum(0) - T[rows]) / (n - 1)
            continue
        logk = -_sqdist(Z[rows], Z) / (2.0 * model.bandwidth ** 2)
        logk[np.arange(rows.size), rows] = -np.inf
        lse = logsumexp(logk, axis=1)
        bad = np.flatnonzero(lse < _LOG_MIN_WEIGHT_SUM)
        if bad.size:
            r = int(rows[bad[0]])
            raise DegenerateQueryError(
                f"all leave-one-out weights vanish at row {r} (bandwidth {model.bandwidth:g})", row=r
            )
        out[rows] = np.exp(logk - lse[:, None]) @ T
    return out[:, 0] if model.squeeze else out


def default_grid(Z, num: int = 12) -> list[float]:
    """Bandwidths spanning 0.05 to 2 times the median pairwise distance."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    sub = Z[: min(len(Z), 500)]
    d = np.sqrt(_sqdist(sub, sub))
    med = float(np.median(d[np.triu_indices(len(sub), 1)])) if len(sub) > 1 else 1.0
    med = med if med > 0 else 1.0
    return list(med * np.geomspace(0.05, 2.0, num))


def nw_cv_errors(Z, targets, grid, folds: int = 5, seed: int = 0) -> np.ndarray:
    """Held-out squared error per bandwidth; degenerate folds count as +inf."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    T = np.asarray(targets, dtype=float).reshape(Z.shape[0], -1)
    n = Z.shape[0]
    if folds < 2:
        raise InvalidParameterError("need at least two folds")
    if n < folds:
        raise InvalidSizeError(f"{n} rows cannot be split into {folds} folds")
    parts = np.array_split(np.random.default_rng(seed).permutation(n), folds)
    errs = np.zeros(len(grid))
    for g, h in enumerate(grid):
        total = 0.0
        for part in parts:
            train = np.setdiff1d(np.arange(n), part)
            try:
                pred = nw_predict(nw_fit(Z[train], T[train], h), Z[part])
            except DegenerateQueryError:
                total = math.inf
                break
            total += float(((pred - T[part]) ** 2).sum())
        errs[g] = total
    return errs


def nw_bandwidth_cv(Z, targets, grid=None, folds: int = 5, seed: int = 0) -> float:
    """K-fold cross-validated bandwidth; ties go to the larger bandwidth."""
    grid = default_grid(Z) if grid is None else list(grid)
    if not grid:
        raise InvalidParameterError("bandwidth grid is empty")
    if folds < 2:
        raise InvalidParameterError("need at least two folds")
    n = np.asarray(Z).shape[0]
    if n < folds:
        raise InvalidSizeError(f"{n} rows cannot be split into {folds} folds")
    if len(grid) == 1:
        return float(grid[0])
    errs = nw_cv_errors(Z, targets, grid, folds=folds, seed=seed)
    if not np.isfinite(errs).any():
        return float(max(grid))
    # errors equal up to rounding count as ties
    scale = float((np.asarray(targets, dtype=float) ** 2).sum())
    tol = TIE_RTOL * (errs.min() + scale)
    tied = [g for g, e in zip(grid, errs) if e <= errs.min() + tol]
    return float(max(tied))
