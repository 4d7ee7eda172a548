"""Selection followed by debiased estimation, plus inference helpers.

Four estimators share the :class:`DebiasResult` container:

* ``debinet``: Lasso selection, then PLM-NN with the unselected columns as Z
* ``ols_post``: OLS refit on the selected columns
* ``debiased_lasso``: one-step nodewise correction of the Lasso
* ``nw_post``: Lasso selection, then PLM-NW

The measurement-error correction lives here as well.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import (
    InvalidParameterError,
    InvalidSizeError,
    LassoConvergenceError,
    NonCorrectableError,
    ShapeError,
    UndefinedVarianceError,
)
from .plm import NetNuisanceConfig, PlmEstimate, plm_nn_fit, plm_nw_fit, plm_predict, residual_ols
from .selection import LassoFit, LassoSelector, lasso_fit, partition_design

METHODS = ("debinet", "ols_post", "debiased_lasso", "nw_post")


@dataclass
class DebiasResult:
    method: str
    theta_full: np.ndarray
    beta_hat: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    active_set: np.ndarray
    std_err: np.ndarray
    level: float = 0.95
    seconds: float = 0.0
    estimate: PlmEstimate | None = field(default=None, repr=False)

    def predict(self, X_new) -> np.ndarray:
        X_new = np.asarray(X_new, dtype=float)
        if self.estimate is None:
            return X_new @ self.theta_full
        S = self.active_set
        comp = np.setdiff1d(np.arange(X_new.shape[1]), S)
        return plm_predict(self.estimate, X_new[:, S], X_new[:, comp])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "active_set": self.active_set.tolist(),
            "beta_hat": self.beta_hat.tolist(),
            "std_err": self.std_err.tolist(),
            "ci_low": self.ci_low.tolist(),
            "ci_high": self.ci_high.tolist(),
            "level": self.level,
            "seconds": self.seconds,
        }


def confidence_intervals(beta_hat, cov_beta, level: float = 0.95):
    """Normal intervals ``beta_j +/- z * sqrt(cov_jj)``."""
    if not 0.0 < level < 1.0:
        raise InvalidParameterError(f"level must lie in (0, 1), got {level}")
    beta = np.atleast_1d(np.asarray(beta_hat, dtype=float))
    cov = np.atleast_2d(np.asarray(cov_beta, dtype=float))
    half = norm.ppf(0.5 + level / 2.0) * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return beta - half, beta + half


def _scatter(p, S, beta):
    theta = np.zeros(p)
    theta[S] = beta
    return theta


def _from_estimate(method, X, S, est: PlmEstimate, level, t0):
    lo, hi = confidence_intervals(est.beta_hat, est.cov_beta, level)
    return DebiasResult(method, _scatter(X.shape[1], S, est.beta_hat), est.beta_hat.copy(), lo, hi,
                        S, est.std_err, level, time.perf_counter() - t0, est)


def _select(X, y, selection):
    if isinstance(selection, LassoFit):
        return partition_design(X, selection)
    if isinstance(selection, LassoSelector):
        return partition_design(X, selection.fit(X, y))
    return partition_design(X, selection)


def debinet_fit(X, y, selection=None, nn_cfg: NetNuisanceConfig | None = None,
                level: float = 0.95) -> DebiasResult:
    """Select, split into ``D`` (selected) and ``Z`` (rest), then PLM-NN.

    ``selection`` may be a :class:`LassoSelector`, a :class:`LassoFit` or an
    index list; the default selector uses a tenth of the largest penalty.
    """
    t0 = time.perf_counter()
    X = np.asarray(X, dtype=float)
    split = _select(X, y, selection if selection is not None else LassoSelector(lam_frac=0.1))
    est = plm_nn_fit(split.D, split.Z, y, nn_cfg)
    return _from_estimate("debinet", X, split.S, est, level, t0)


def nw_post(X, y, selection=None, h_y="cv", h_D="cv", grid=None, level: float = 0.95,
            seed: int = 0) -> DebiasResult:
    t0 = time.perf_counter()
    X = np.asarray(X, dtype=float)
    split = _select(X, y, selection if selection is not None else LassoSelector(lam_frac=0.1))
    est = plm_nw_fit(split.D, split.Z, y, h_y=h_y, h_D=h_D, grid=grid, seed=seed)
    return _from_estimate("nw_post", X, split.S, est, level, t0)


def ols_post(X, y, S, level: float = 0.95) -> DebiasResult:
    """OLS on the columns in ``S`` (no intercept); other coefficients are zero."""
    t0 = time.perf_counter()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(S, (LassoFit, LassoSelector)):
        S = _select(X, y, S).S
    S = np.unique(np.asarray(S, dtype=np.int64))
    beta, _, cov = residual_ols(X[:, S], y)
    lo, hi = confidence_intervals(beta, cov, level)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return DebiasResult("ols_post", _scatter(X.shape[1], S, beta), beta, lo, hi, S, se, level,
                        time.perf_counter() - t0)


def default_node_penalty(X) -> np.ndarray:
    """Per-column nodewise penalty ``sqrt(2 log p / n) * ||X_j|| / sqrt(n)``."""
    n, p = X.shape
    return math.sqrt(2.0 * math.log(max(p, 2)) / n) * np.linalg.norm(X, axis=0) / math.sqrt(n)


def _nodewise(X, j, lam_j, tol, max_sweeps):
    n = X.shape[0]
    rest = np.delete(np.arange(X.shape[1]), j)
    Xr = X[:, rest]
    try:
        fit = lasso_fit(Xr, X[:, j], n * lam_j, tol=tol, max_sweeps=max_sweeps)
    except LassoConvergenceError as exc:
        raise LassoConvergenceError(
            f"nodewise regression for column {j} did not converge", kkt_residual=exc.kkt_residual,
            n_sweeps=exc.n_sweeps, column=j) from exc
    r = X[:, j] - Xr @ fit.theta
    tau2 = float(r @ r) / n + lam_j * float(np.abs(fit.theta).sum())
    row = np.zeros(X.shape[1])
    row[j] = 1.0
    row[rest] = -fit.theta
    return row / tau2


def precision_nodewise(X, lambda_node=None, tol: float = 1e-8, max_sweeps: int = 10_000,
                       workers: int = 1) -> np.ndarray:
    """Approximate inverse of ``X'X/n`` built row by row from nodewise Lasso fits."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    lam = default_node_penalty(X) if lambda_node is None else np.broadcast_to(
        np.asarray(lambda_node, dtype=float), (p,))
    if np.any(lam <= 0):
        raise InvalidParameterError("nodewise penalties must be positive")
    if p == 1:
        return np.array([[X.shape[0] / float(X[:, 0] @ X[:, 0])]])
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda j: _nodewise(X, j, lam[j], tol, max_sweeps), range(p)))
    else:
        rows = [_nodewise(X, j, lam[j], tol, max_sweeps) for j in range(p)]
    return np.array(rows)


def debiased_lasso(X, y, fit: LassoFit, lambda_node=None, level: float = 0.95,
                   workers: int = 1, tol: float = 1e-8) -> DebiasResult:
    """One-step correction ``theta + Theta X'(y - X theta)/n`` with a nodewise ``Theta``.

    Every coordinate is corrected; ``beta_hat`` and the intervals are reported
    on the Lasso active set, while ``theta_full`` keeps all corrected values.
    The noise variance is estimated by ``RSS / (n - |S|)`` at the Lasso fit.
    """
    t0 = time.perf_counter()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    Theta = precision_nodewise(X, lambda_node, tol=tol, workers=workers)
    r = y - X @ fit.theta
    theta_d = fit.theta + Theta @ (X.T @ r) / n
    s = fit.active_set.size
    sigma2 = float(r @ r) / max(n - s, 1)
    Sigma = X.T @ X / n
    var = sigma2 * np.einsum("ij,jk,ik->i", Theta, Sigma, Theta) / n
    S = np.asarray(fit.active_set, dtype=np.int64)
    se = np.sqrt(np.clip(var[S], 0.0, None))
    lo, hi = confidence_intervals(theta_d[S], np.diag(se ** 2), level)
    return DebiasResult("debiased_lasso", theta_d, theta_d[S], lo, hi, S, se, level,
                        time.perf_counter() - t0)


def coverage(results, beta_true, per_replicate: bool = False) -> float:
    """Fraction of (replicate, coordinate) pairs whose interval holds the truth.

    ``beta_true`` gives one vector per replicate, either already restricted to
    that replicate's active set or full length (then restricted here).  With
    ``per_replicate`` the per-replicate fractions are averaged instead.
    """
    results = list(results)
    truths = list(beta_true)
    if not results:
        raise InvalidSizeError("coverage needs at least one replicate")
    if len(truths) != len(results):
        raise ShapeError(f"{len(results)} results but {len(truths)} truth vectors")
    hits, fracs = [], []
    for res, b in zip(results, truths):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != res.beta_hat.shape[0]:
            b = b[res.active_set]
        h = (res.ci_low <= b) & (b <= res.ci_high)
        hits.append(h)
        if h.size:
            fracs.append(h.mean())
    if per_replicate:
        return float(np.mean(fracs))
    allh = np.concatenate(hits)
    return float(allh.mean()) if allh.size else math.nan


@dataclass(frozen=True)
class CorrectionReport:
    sigma_X2: float
    sigma_Y2: float
    sigma_eps2: float
    R_mat: np.ndarray
    beta_corrected: np.ndarray
    Q_hat: np.ndarray
    asym_cov: np.ndarray | None


def measurement_correct(beta_tilde, X_tilde_resid, sigma_X2: float, sigma_Y2: float = 0.0,
                        sigma_eps2: float = 0.0, n: int | None = None,
                        with_cov: bool | None = None) -> CorrectionReport:
    """Undo attenuation from noise of variance ``sigma_X2`` on the regressors.

    ``R = sigma_X2 (X'X/n)^-1`` and the corrected estimate solves
    ``(I - R) b = beta_tilde``.  ``asym_cov`` is the textbook plug-in
    ``(sigma_eps2 + sigma_Y2) / sigma_X2 * R``; it is left as ``None`` when
    ``sigma_X2 = 0`` unless ``with_cov=True`` demands it, which raises.
    :func:`eiv_sandwich_cov` gives the covariance including the
    coefficient-dependent terms.
    """
    beta_tilde = np.atleast_1d(np.asarray(beta_tilde, dtype=float))
    Xt = np.asarray(X_tilde_resid, dtype=float)
    if Xt.ndim == 1:
        Xt = Xt[:, None]
    n = Xt.shape[0] if n is None else int(n)
    pL = Xt.shape[1]
    if beta_tilde.shape != (pL,):
        raise ShapeError(f"beta has shape {beta_tilde.shape}, design has {pL} columns")
    if sigma_X2 < 0 or sigma_Y2 < 0 or sigma_eps2 < 0:
        raise InvalidParameterError("error variances must be non-negative")
    G = Xt.T @ Xt / n
    Q_hat = G - sigma_X2 * np.eye(pL)
    if sigma_X2 == 0:
        if with_cov:
            raise UndefinedVarianceError("the plug-in covariance divides by sigma_X2 = 0")
        return CorrectionReport(0.0, sigma_Y2, sigma_eps2, np.zeros((pL, pL)), beta_tilde.copy(),
                                Q_hat, None)
    R = sigma_X2 * np.linalg.inv(G)
    IR = np.eye(pL) - R
    if np.linalg.cond(IR) > 1e12:
        raise NonCorrectableError("I - R is singular; the regressor noise swamps the signal")
    corrected = np.linalg.solve(IR, beta_tilde)
    cov = (sigma_eps2 + sigma_Y2) / sigma_X2 * R
    return CorrectionReport(float(sigma_X2), float(sigma_Y2), float(sigma_eps2), R, corrected,
                            Q_hat, 0.5 * (cov + cov.T))


def eiv_sandwich_cov(beta, Q, sigma_X2: float, sigma_Y2: float, sigma_eps2: float) -> np.ndarray:
    """Asymptotic covariance of ``sqrt(n)(beta_tilde - (I - R) beta)`` for Gaussian data.

    With ``Qt = Q + sigma_X2 I`` and the attenuated target ``b = (I - R) beta``,
    the regression residual ``e = X'R beta + eps + eps_Y - U'b`` is uncorrelated
    with the noisy regressors, so the sandwich collapses to ``E(e^2) Qt^-1``.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Qt_inv = np.linalg.inv(Q + sigma_X2 * np.eye(Q.shape[0]))
    R = sigma_X2 * Qt_inv
    b = beta - R @ beta
    Rb = R @ beta
    e2 = sigma_eps2 + sigma_Y2 + float(Rb @ Q @ Rb) + sigma_X2 * float(b @ b)
    return e2 * Qt_inv
