"""Empirical and infinite-width tangent kernels, and runtime checks on training.

Block layout: ``H_whole`` is ``(n q) x (n q)`` with block ``(s, h)`` at rows
``s*n:(s+1)*n`` and columns ``h*n:(h+1)*n``, i.e. the output dimensions are
concatenated one after another.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateKernelWarning,
    InvalidMatrixError,
    MatrixSizeError,
    UnsupportedKernelError,
)
from .widenet import TrainTrace, WideNet, forward, init_network

MAX_DENSE = 400


def _check_size(N):
    if N > MAX_DENSE:
        raise MatrixSizeError(f"kernel of size {N} exceeds the dense limit {MAX_DENSE}")


@dataclass(frozen=True)
class NtkReport:
    H_whole: np.ndarray
    H_inf_whole: np.ndarray
    lambda0_emp: float
    lambda0_inf: float
    frob_gap: float
    offdiag_norm: float


@dataclass(frozen=True)
class RateReport:
    passed: bool
    first_violated_epoch: int | None
    largest_violated_epoch: int | None
    n_violations: int
    fitted_slope: float
    slope_ratio: float
    r_squared: float
    window: tuple[int, int]


@dataclass(frozen=True)
class LazyReport:
    R_prime: float
    R_perturb: float
    c: float
    delta: float
    max_drift: float
    bound_satisfied: bool


def ntk_blocks(net: WideNet, Z) -> np.ndarray:
    """All ``(s, h)`` blocks as an array of shape ``(q, q, n, n)``."""
    if net.activation != "relu":
        raise UnsupportedKernelError(
            f"the tangent-kernel formula is only available for relu, not {net.activation!r}"
        )
    Z = np.asarray(Z, dtype=float)
    ind = (Z @ net.W >= 0).astype(float)
    G = Z @ Z.T
    q = net.output_dim
    n = Z.shape[0]
    out = np.empty((q, q, n, n))
    for s in range(q):
        left = ind * net.A[:, s]
        for h in range(s, q):
            blk = G * (left @ (ind * net.A[:, h]).T) / net.m
            out[s, h] = blk
            out[h, s] = blk.T
    return out


def _assemble(blocks):
    q, _, n, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(q * n, q * n)


def ntk_empirical(net: WideNet, Z) -> np.ndarray:
    """``H_whole`` at the network's current weights."""
    Z = np.asarray(Z, dtype=float)
    _check_size(Z.shape[0] * net.output_dim)
    return _assemble(ntk_blocks(net, Z))


def _warn_parallel(Z):
    norms = np.linalg.norm(Z, axis=1)
    ok = norms > 0
    U = Z[ok] / norms[ok, None]
    C = np.abs(U @ U.T)
    np.fill_diagonal(C, 0.0)
    if (norms == 0).any() or (C.size and C.max() >= 1.0 - 1e-12):
        warnings.warn(
            "two input rows are parallel; the limiting kernel is singular (lambda_0 = 0)",
            DegenerateKernelWarning,
            stacklevel=3,
        )


def arccos_kernel(Z) -> np.ndarray:
    """E_w[z_i'z_j I{w'z_i >= 0, w'z_j >= 0}] = z_i'z_j (pi - angle_ij) / (2 pi)."""
    Z = np.asarray(Z, dtype=float)
    G = Z @ Z.T
    norms = np.sqrt(np.diag(G))
    denom = np.outer(norms, norms)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, G / denom, 0.0)
    ang = np.arccos(np.clip(cos, -1.0, 1.0))
    np.fill_diagonal(ang, 0.0)
    return G * (np.pi - ang) / (2 * np.pi)


def montecarlo_kernel(Z, samples: int = 1_000_000, seed: int = 0, chunk: int = 50_000) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    rng = np.random.default_rng(seed)
    n, d = Z.shape
    counts = np.zeros((n, n))
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        I = (Z @ rng.standard_normal((d, b)) >= 0).astype(float)
        counts += I @ I.T
        done += b
    return (Z @ Z.T) * counts / samples


def ntk_infinite(Z, q: int = 1, method: str = "closed_form", samples: int = 1_000_000,
                 seed: int = 0) -> np.ndarray:
    """Block-diagonal ``H_whole^inf`` with ``q`` identical copies of ``H^inf``."""
    Z = np.asarray(Z, dtype=float)
    _check_size(Z.shape[0] * q)
    _warn_parallel(Z)
    if method == "closed_form":
        H = arccos_kernel(Z)
    elif method == "monte_carlo":
        H = montecarlo_kernel(Z, samples=samples, seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return np.kron(np.eye(q), H)


def least_eigenvalue(H) -> float:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidMatrixError(f"expected a square matrix, got shape {H.shape}")
    _check_size(H.shape[0])
    if not np.allclose(H, H.T, rtol=0.0, atol=1e-8):
        raise InvalidMatrixError("matrix is not symmetric within 1e-8")
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])


def offdiag_norm(H_whole, q: int) -> float:
    """Largest Frobenius norm over off-diagonal blocks."""
    n = H_whole.shape[0] // q
    best = 0.0
    for s in range(q):
        for h in range(q):
            if s != h:
                best = max(best, float(np.linalg.norm(H_whole[s * n:(s + 1) * n, h * n:(h + 1) * n])))
    return best


def ntk_report(net: WideNet, Z) -> NtkReport:
    H = ntk_empirical(net, Z)
    Hinf = ntk_infinite(Z, q=net.output_dim)
    return NtkReport(
        H_whole=H,
        H_inf_whole=Hinf,
        lambda0_emp=least_eigenvalue(H),
        lambda0_inf=least_eigenvalue(Hinf),
        frob_gap=float(np.linalg.norm(H - Hinf)),
        offdiag_norm=offdiag_norm(H, net.output_dim),
    )


def decade_window(losses) -> tuple[int, int]:
    """Epoch range whose losses lie between initial/100 and initial/10.

    When training never gets below initial/100 the window runs to the last
    epoch; when it never reaches initial/10 the window is empty (start > end).
    """
    losses = np.asarray(losses)
    hi, lo = losses[0] / 10.0, losses[0] / 100.0
    below_hi = np.flatnonzero(losses <= hi)
    if below_hi.size == 0:
        return len(losses), len(losses) - 1
    start = int(below_hi[0])
    below_lo = np.flatnonzero(losses[start:] < lo)
    end = start + int(below_lo[0]) - 1 if below_lo.size else len(losses) - 1
    return start, end


def log_linear_fit(losses, start, end) -> tuple[float, float]:
    """Least-squares slope of log(loss) against epoch on [start, end], with its R^2."""
    e = np.arange(start, end + 1, dtype=float)
    if e.size < 3:
        return math.nan, math.nan
    y = np.log(np.asarray(losses[start:end + 1], dtype=float))
    slope, icpt = np.polyfit(e, y, 1)
    resid = y - (slope * e + icpt)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def verify_rate(trace: TrainTrace, lambda0: float, lr: float, rho: float = 0.9,
                slack: float = 1.5) -> RateReport:
    """Check loss(e) <= slack * exp(-rho * lambda0 * lr * e) * loss(0) at every epoch.

    The slope of log-loss is fitted over the decade below initial/10 (or the
    whole trace when that window holds fewer than three epochs).
    """
    L = np.asarray(trace.loss_per_epoch, dtype=float)
    e = np.arange(L.size)
    bound = slack * np.exp(-rho * lambda0 * lr * e) * L[0]
    bad = np.flatnonzero(L > bound)
    start, end = decade_window(L)
    if end - start + 1 < 3:
        start, end = 0, L.size - 1
    slope, r2 = log_linear_fit(L, start, end)
    ref = -lambda0 * lr
    return RateReport(
        passed=bad.size == 0,
        first_violated_epoch=int(bad[0]) if bad.size else None,
        largest_violated_epoch=int(bad[-1]) if bad.size else None,
        n_violations=int(bad.size),
        fitted_slope=slope,
        slope_ratio=slope / ref if ref != 0 else math.nan,
        r_squared=r2,
        window=(start, end),
    )


def lazy_radius(n: int, m: int, lambda0: float, residual_norm_sum: float) -> float:
    return math.sqrt(n) / (math.sqrt(m) * lambda0) * residual_norm_sum


def lazy_check(trace: TrainTrace, net0: WideNet, Z, M, lambda0: float, c: float = 1.0,
               delta: float = 0.05) -> LazyReport:
    """Compare observed first-layer drift against the lazy-training radius.

    ``R_perturb`` (the perturbation radius with unspecified constant ``c``) is
    informational only.
    """
    Z = np.asarray(Z, dtype=float)
    M = np.asarray(M, dtype=float).reshape(Z.shape[0], -1)
    n = Z.shape[0]
    res = M - forward(net0, Z)
    rsum = float(np.linalg.norm(res, axis=0).sum())
    Rp = lazy_radius(n, net0.m, lambda0, rsum)
    q = net0.output_dim
    R_perturb = c * delta * lambda0 / (n ** 2 * q ** 2)
    drift = np.asarray(trace.weight_drift_per_epoch, dtype=float)
    max_drift = float(drift.max()) if drift.size else 0.0
    return LazyReport(R_prime=Rp, R_perturb=R_perturb, c=c, delta=delta, max_drift=max_drift,
                      bound_satisfied=bool(max_drift <= Rp))


@dataclass(frozen=True)
class SweepRow:
    width: int
    seed: int
    frob_gap: float
    offdiag_norm: float
    lambda_min: float


def concentration_sweep(Z, widths, seeds_per_width: int, p_L: int = 1, base_seed: int = 0):
    """Per-run rows and per-width means of the kernel gap at initialisation.

    The same seed list is reused for every width.
    """
    widths = list(widths)
    if widths != sorted(widths):
        raise ValueError("widths must be ascending")
    Z = np.asarray(Z, dtype=float)
    q = 1 + p_L
    Hinf = ntk_infinite(Z, q=q)
    rows = []
    for m in widths:
        for k in range(seeds_per_width):
            net = init_network(Z.shape[1], m, p_L, seed=base_seed + k)
            H = ntk_empirical(net, Z)
            rows.append(SweepRow(m, base_seed + k, float(np.linalg.norm(H - Hinf)),
                                 offdiag_norm(H, q), least_eigenvalue(H)))
    summary = []
    for m in widths:
        sel = [r for r in rows if r.width == m]
        summary.append({
            "width": m,
            "mean_frob_gap": float(np.mean([r.frob_gap for r in sel])),
            "mean_offdiag_norm": float(np.mean([r.offdiag_norm for r in sel])),
            "min_lambda_min": float(np.min([r.lambda_min for r in sel])),
        })
    return rows, summary
