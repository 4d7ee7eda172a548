"""Partialling-out estimators for y = D beta + f(Z) + eps.

All three fitters reduce to :func:`residual_ols` once nuisance predictions
``E([y, D] | Z)`` are available.  PLM-NN learns both conditional means with a
single multi-output network; PLM-NW and DML fit ``m_y`` and ``m_D``
separately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FoldSizeError, InvalidParameterError, ShapeError, SingularDesignError
from .kernel_reg import nw_bandwidth_cv, nw_fit, nw_predict, nw_predict_loo
from .selection import lambda_max, lasso_fit
from .widenet import EarlyStop, TrainConfig, TrainTrace, forward, init_network, train

CONDITION_LIMIT = 1e10


@dataclass
class NuisanceFit:
    """Joint conditional-mean map ``Z -> [E(y|Z), E(D|Z)]`` (width ``1 + p_L``)."""

    predict_M: Callable[[np.ndarray], np.ndarray]
    learner_tag: str
    fitted_rows: np.ndarray
    trace: TrainTrace | None = field(default=None, repr=False)

    def __call__(self, Z):
        return self.predict_M(np.asarray(Z, dtype=float))


@dataclass
class PlmEstimate:
    beta_hat: np.ndarray
    X_resid: np.ndarray
    Y_resid: np.ndarray
    sigma2_hat: float
    cov_beta: np.ndarray
    nuisance: NuisanceFit
    fold_betas: np.ndarray | None = None

    @property
    def std_err(self):
        return np.sqrt(np.clip(np.diag(self.cov_beta), 0.0, None))

    @property
    def p_L(self):
        return self.beta_hat.shape[0]


def _as_matrix(D):
    D = np.asarray(D, dtype=float)
    return D[:, None] if D.ndim == 1 else D


def residual_ols(X_resid, Y_resid):
    """OLS without intercept via a thin QR factorisation.

    Returns ``(beta_hat, sigma2_hat, cov_beta)`` with
    ``sigma2_hat = ||Y - X beta||^2 / (n - p_L)``.
    """
    X = _as_matrix(X_resid)
    Y = np.asarray(Y_resid, dtype=float)
    n, pL = X.shape
    if Y.shape != (n,):
        raise ShapeError(f"residual response has shape {Y.shape}, expected ({n},)")
    if pL >= n:
        raise SingularDesignError(f"{pL} regressors with only {n} rows", condition_number=math.inf)
    cond = np.linalg.cond(X) ** 2 if pL else 1.0
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularDesignError(
            f"residual design is rank deficient (Gram condition number {cond:.3g})",
            condition_number=float(cond),
        )
    Q, R = np.linalg.qr(X)
    beta = np.linalg.solve(R, Q.T @ Y)
    resid = Y - X @ beta
    sigma2 = float(resid @ resid) / (n - pL)
    Rinv = np.linalg.solve(R, np.eye(pL))
    cov = sigma2 * (Rinv @ Rinv.T)
    return beta, sigma2, 0.5 * (cov + cov.T)


def _estimate(D, y, Mhat, nuisance, fold_betas=None, beta=None):
    X = D - Mhat[:, 1:]
    Y = y - Mhat[:, 0]
    b, s2, cov = residual_ols(X, Y)
    if beta is not None:
        # Cross-fitted estimate: the reported coefficient is the fold average,
        # the spread comes from the pooled out-of-fold residuals.
        resid = Y - X @ beta
        s2 = float(resid @ resid) / (len(Y) - X.shape[1])
        cov = s2 * np.linalg.inv(X.T @ X)
        b = beta
    return PlmEstimate(b, X, Y, s2, cov, nuisance, fold_betas)


# --- nuisance learners ------------------------------------------------------


def fit_zero_nuisance(Z, M) -> NuisanceFit:
    q = M.shape[1]
    return NuisanceFit(lambda Zq: np.zeros((Zq.shape[0], q)), "zero", np.arange(M.shape[0]))


def fit_mean_nuisance(Z, M) -> NuisanceFit:
    mu = M.mean(axis=0)
    return NuisanceFit(lambda Zq: np.tile(mu, (Zq.shape[0], 1)), "mean", np.arange(M.shape[0]))


@dataclass
class NetNuisanceConfig:
    """Practical wrapper around the wide network used as a nuisance learner.

    Inputs are standardised, a constant column is appended so the network is
    not positively homogeneous, and the whole input is scaled to unit-order
    norm.  Targets are whitened (or standardised column-wise), and the network's output at
    initialisation is subtracted so that the random initial function does not
    leak into the residuals.
    """

    width: int = 1000
    activation: str = "relu"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        optimizer="adam", learning_rate=1e-3, max_epochs=2000,
        early_stop=EarlyStop(patience=50), freeze_second_layer=False, record_drift=False))
    net_seed: int = 0
    standardize: bool = True
    whiten_targets: bool = True
    add_bias: bool = True
    center_output: bool = True

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)


def _target_scale(Mc, whiten):
    """Lower-triangular ``L`` with ``L^-1`` mapping centred targets to unit scale.

    With ``whiten`` the targets are decorrelated by a Cholesky factor of
    their covariance, so a small component such as ``E(y - D | Z)`` gets
    the same weight in the loss as the dominant shared one.
    """
    sd = Mc.std(0)
    sd = np.where(sd > 0, sd, 1.0)
    if not whiten or Mc.shape[1] == 1:
        return np.diag(sd)
    C = np.cov(Mc, rowvar=False, bias=True) / np.outer(sd, sd)
    C = C + 1e-10 * np.eye(C.shape[0])
    try:
        return np.diag(sd) @ np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        return np.diag(sd)


def fit_net_nuisance(Z, M, cfg: NetNuisanceConfig | None = None) -> NuisanceFit:
    cfg = cfg or NetNuisanceConfig()
    Z = np.asarray(Z, dtype=float)
    M = np.asarray(M, dtype=float)
    if cfg.standardize:
        zmu, zsd = Z.mean(0), Z.std(0)
        zsd = np.where(zsd > 0, zsd, 1.0)
        mmu = M.mean(0)
        L = _target_scale(M - mmu, cfg.whiten_targets)
    else:
        zmu, zsd = np.zeros(Z.shape[1]), np.ones(Z.shape[1])
        mmu, L = np.zeros(M.shape[1]), np.eye(M.shape[1])
    scale = math.sqrt(Z.shape[1] + (1 if cfg.add_bias else 0))

    def prep(Zq):
        U = (Zq - zmu) / zsd
        if cfg.add_bias:
            U = np.hstack([U, np.ones((U.shape[0], 1))])
        return U / scale

    U = prep(Z)
    net0 = init_network(U.shape[1], cfg.width, M.shape[1] - 1, cfg.activation, seed=cfg.net_seed)
    T = np.linalg.solve(L, (M - mmu).T).T
    if cfg.center_output:
        T = T + forward(net0, U)
    net, trace = train(net0, U, T, cfg.train)

    def predict(Zq):
        Uq = prep(Zq)
        F = forward(net, Uq)
        if cfg.center_output:
            F = F - forward(net0, Uq)
        return mmu + F @ L.T

    return NuisanceFit(predict, "widenet", np.arange(M.shape[0]), trace)


def fit_nw_nuisance(Z, M, bandwidths, grid=None, folds: int = 5, seed: int = 0) -> NuisanceFit:
    """One NW regression per target column; ``"cv"`` picks that column's bandwidth."""
    M = np.asarray(M, dtype=float)
    if not isinstance(bandwidths, (list, tuple)):
        bandwidths = [bandwidths] * M.shape[1]
    models = []
    for s, h in enumerate(bandwidths):
        if h == "cv":
            h = nw_bandwidth_cv(Z, M[:, s], grid=grid, folds=folds, seed=seed)
        models.append(nw_fit(Z, M[:, s], h))

    def predict(Zq):
        return np.column_stack([nw_predict(mod, Zq) for mod in models])

    fit = NuisanceFit(predict, "nw", np.arange(M.shape[0]))
    fit.bandwidths = [mod.bandwidth for mod in models]
    fit.loo_fitted = lambda: np.column_stack([nw_predict_loo(mod) for mod in models])
    return fit


def fit_lasso_nuisance(Z, M, lam_frac: float = 0.01) -> NuisanceFit:
    """Column-wise Lasso on centred data (intercept restored at prediction)."""
    Z = np.asarray(Z, dtype=float)
    M = np.asarray(M, dtype=float)
    zmu, mmu = Z.mean(0), M.mean(0)
    Zc = Z - zmu
    coefs = []
    for s in range(M.shape[1]):
        t = M[:, s] - mmu[s]
        coefs.append(lasso_fit(Zc, t, lam_frac * lambda_max(Zc, t)).theta)
    B = np.column_stack(coefs)
    return NuisanceFit(lambda Zq: mmu + (Zq - zmu) @ B, "lasso", np.arange(M.shape[0]))


# --- estimators ---------------------------------------------------------------


def _prepare(D, Z, y):
    D = _as_matrix(D)
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n = y.shape[0]
    if D.shape[0] != n or Z.shape[0] != n:
        raise ShapeError(f"row counts differ: D {D.shape}, Z {Z.shape}, y {y.shape}")
    if D.shape[1] >= n:
        raise SingularDesignError(f"p_L={D.shape[1]} is not below n={n}", condition_number=math.inf)
    return D, Z, y


def plm_nn_fit(D, Z, y, cfg: NetNuisanceConfig | None = None, learner=None) -> PlmEstimate:
    """Joint network fit of ``[y, D]`` on ``Z`` followed by residual OLS.

    ``learner(Z, M) -> NuisanceFit`` replaces the network when given.  With
    no ``Z`` columns the nuisance is identically zero.
    """
    D, Z, y = _prepare(D, Z, y)
    M = np.column_stack([y, D])
    if Z.shape[1] == 0:
        nuis = fit_zero_nuisance(Z, M)
    elif learner is not None:
        nuis = learner(Z, M)
    else:
        nuis = fit_net_nuisance(Z, M, cfg)
    return _estimate(D, y, nuis(Z), nuis)


def plm_nw_fit(D, Z, y, h_y="cv", h_D="cv", grid=None, folds: int = 5, seed: int = 0,
               d_independent: bool = False, leave_one_out: bool = True) -> PlmEstimate:
    """Separate NW fits for ``m_y`` and each column of ``m_D``, then residual OLS.

    ``d_independent`` declares D independent of Z, which sets ``h_D`` to infinity.
    With ``leave_one_out`` the training residuals use leave-one-out NW
    predictions; otherwise a row's own kernel weight can dominate in high
    dimension and drive both residuals to zero.  Predictions on new rows
    always use every training row.
    """
    D, Z, y = _prepare(D, Z, y)
    M = np.column_stack([y, D])
    if Z.shape[1] == 0:
        nuis = fit_zero_nuisance(Z, M)
    else:
        if d_independent:
            h_D = math.inf
        nuis = fit_nw_nuisance(Z, M, [h_y] + [h_D] * D.shape[1], grid=grid, folds=folds, seed=seed)
        if leave_one_out:
            return _estimate(D, y, nuis.loo_fitted(), nuis)
    return _estimate(D, y, nuis(Z), nuis)


LEARNERS = ("lasso", "nw", "widenet", "mean")


def _learner(name, options):
    options = dict(options or {})
    if name == "lasso":
        return lambda Z, M: fit_lasso_nuisance(Z, M, **options)
    if name == "nw":
        h = options.pop("bandwidth", "cv")
        return lambda Z, M: fit_nw_nuisance(Z, M, h, **options)
    if name == "widenet":
        cfg = options.get("cfg") or NetNuisanceConfig()

        def fit(Z, M):
            # One network per target column, as in the original cross-fitting scheme.
            parts = [fit_net_nuisance(Z, M[:, [s]], cfg) for s in range(M.shape[1])]
            return NuisanceFit(lambda Zq: np.column_stack([p(Zq) for p in parts]),
                               "widenet", np.arange(M.shape[0]))
        return fit
    if name == "mean":
        return fit_mean_nuisance
    raise InvalidParameterError(f"unknown learner {name!r}; expected one of {LEARNERS}")


def dml_folds(n: int, K: int, seed: int):
    return [np.sort(f) for f in np.array_split(np.random.default_rng(seed).permutation(n), K)]


def dml_fit(D, Z, y, learner: str = "lasso", K: int = 5, seed: int = 0,
            learner_options=None, folds=None) -> PlmEstimate:
    """K-fold cross-fitting; the coefficient is the mean of the per-fold OLS fits.

    ``folds`` overrides the seeded partition with explicit row-index arrays.
    """
    D, Z, y = _prepare(D, Z, y)
    n, pL = D.shape
    if folds is None:
        if K < 2:
            raise InvalidParameterError("cross-fitting needs K >= 2")
        folds = dml_folds(n, K, seed)
    else:
        folds = [np.sort(np.asarray(f, dtype=int)) for f in folds]
        if len(folds) < 2 or not np.array_equal(np.sort(np.concatenate(folds)), np.arange(n)):
            raise InvalidParameterError("folds must partition the rows into at least two parts")
    if min(len(f) for f in folds) <= pL:
        raise FoldSizeError(f"smallest fold has {min(len(f) for f in folds)} rows; need more than {pL}")
    fit = _learner(learner, learner_options)
    M = np.column_stack([y, D])
    Mhat = np.empty_like(M)
    parts, betas = [], []
    for f in folds:
        comp = np.setdiff1d(np.arange(n), f)
        nu = fit_zero_nuisance(Z[comp], M[comp]) if Z.shape[1] == 0 else fit(Z[comp], M[comp])
        nu.fitted_rows = comp
        parts.append(nu)
        Mhat[f] = nu(Z[f])
        b, _, _ = residual_ols(D[f] - Mhat[f, 1:], y[f] - Mhat[f, 0])
        betas.append(b)
    betas = np.array(betas)
    agg = NuisanceFit(lambda Zq: np.mean([p(Zq) for p in parts], axis=0), f"dml-{learner}",
                      np.arange(n))
    return _estimate(D, y, Mhat, agg, fold_betas=betas, beta=betas.mean(axis=0))


def plm_predict(est: PlmEstimate, D_new, Z_new) -> np.ndarray:
    """y_hat = m_y(Z) + (D - m_D(Z)) beta_hat."""
    D_new = _as_matrix(D_new)
    Mh = est.nuisance(np.asarray(Z_new, dtype=float).reshape(D_new.shape[0], -1))
    return Mh[:, 0] + (D_new - Mh[:, 1:]) @ est.beta_hat


def f_hat(est: PlmEstimate, Z_query) -> np.ndarray:
    """f_hat(Z) = m_y(Z) - m_D(Z) beta_hat."""
    Zq = np.asarray(Z_query, dtype=float)
    Mh = est.nuisance(Zq.reshape(Zq.shape[0], -1))
    return Mh[:, 0] - Mh[:, 1:] @ est.beta_hat
