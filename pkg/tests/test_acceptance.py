"""Acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line (printed in the terminal summary and to
stdout) and then asserts.  Criteria 1, 9 and the covariance part of 10 do not
hold for this implementation; see the project notes for the analysis.
"""
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from debinet.bench import (
    ConvergenceConfig,
    EivConfig,
    ExperimentConfig,
    compare_plms,
    eiv_checks,
    eiv_simulation,
    emit_convergence,
    experiment_checks,
    run_experiment,
)
from debinet.debias import coverage, ols_post
from debinet.kernel_reg import nw_fit, nw_predict, nw_weights
from debinet.ntk_lab import arccos_kernel, concentration_sweep, montecarlo_kernel
from debinet.selection import kkt_residual, lasso_fit, soft_threshold
from debinet.widenet import gradient, init_network, loss

pytestmark = pytest.mark.slow
WORKERS = os.cpu_count() or 1


def record(num, checks):
    """``checks`` is a list of (name, passed, detail)."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{n}={d}{'' if p else ' (x)'}" for n, p, d in checks)
    ACCEPTANCE[num] = (ok, detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} {detail}")
    failed = [c[0] for c in checks if not c[1]]
    assert ok, f"criterion {num} failed: {failed}"


def _unit_rows(rng, n, d):
    Z = rng.standard_normal((n, d))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


@pytest.fixture(scope="module")
def convergence_run():
    t0 = time.perf_counter()
    res = emit_convergence(ConvergenceConfig(n=100, width=5000, learning_rate=0.01, epochs=2000))
    return res, time.perf_counter() - t0


def test_c01_linear_convergence(convergence_run):
    res, secs = convergence_run
    s = res.summary()
    record(1, [
        ("final_loss<=1e-5", s["final_loss"] <= 1e-5, f"{s['final_loss']:.4g}"),
        ("r2>=0.95", s["r_squared"] >= 0.95, f"{s['r_squared']:.4f}"),
        ("rate_bound", s["rate_bound_holds"], f"{s['rate_violations']} violations"),
        ("runtime<=300s", secs <= 300, f"{secs:.0f}s"),
    ])


def test_c02_ntk_concentration():
    Z = _unit_rows(np.random.default_rng(2), 50, 10)
    rows, summary = concentration_sweep(Z, [256, 1024, 4096], 5)
    gaps = [s["mean_frob_gap"] for s in summary]
    ratios = [gaps[i] / gaps[i + 1] for i in range(2)]
    lam_ok = all(r.lambda_min > 0 for r in rows if r.width == 4096)
    record(2, [
        ("shrink_ratios_in[1.6,2.6]", all(1.6 <= r <= 2.6 for r in ratios),
         ",".join(f"{r:.2f}" for r in ratios)),
        ("lambda_min>0@4096", lam_ok, str(lam_ok)),
    ])


def test_c03_block_diagonal_limit():
    Z = _unit_rows(np.random.default_rng(3), 50, 10)
    rows, _ = concentration_sweep(Z, [256, 4096], 5)
    small = max(r.offdiag_norm for r in rows if r.width == 256)
    big = max(r.offdiag_norm for r in rows if r.width == 4096)
    record(3, [("offdiag_ratio<=0.35", big <= 0.35 * small, f"{big / small:.3f}")])


def test_c04_lazy_training(convergence_run):
    res, _ = convergence_run
    lz = res.lazy
    record(4, [("max_drift<=R'", lz.bound_satisfied,
                f"{lz.max_drift:.4g} vs {lz.R_prime:.4g}")])


def test_c05_closed_form_kernel():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(20):
        Z = _unit_rows(rng, 2, 5)
        gap = np.abs(montecarlo_kernel(Z, samples=1_000_000, seed=i) - arccos_kernel(Z)).max()
        worst = max(worst, float(gap))
    record(5, [("max_gap<=3e-3", worst <= 3e-3, f"{worst:.2e}")])


def test_c06_lasso_correctness():
    rng = np.random.default_rng(6)
    worst_kkt = 0.0
    for _ in range(200):
        n, p = int(rng.integers(5, 101)), int(rng.integers(1, 51))
        X = rng.standard_normal((n, p))
        y = X[:, : min(3, p)].sum(1) + rng.standard_normal(n)
        lam = float(rng.uniform(0.01, 1.0)) * float(np.abs(X.T @ y).max())
        fit = lasso_fit(X, y, lam, tol=1e-9)
        worst_kkt = max(worst_kkt, kkt_residual(X, y, fit.theta, lam))
    worst_orth = 0.0
    for _ in range(50):
        n, p = int(rng.integers(20, 101)), int(rng.integers(1, 16))
        Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        X = Q * rng.uniform(0.5, 3.0)
        c = float(X[:, 0] @ X[:, 0])
        y = rng.standard_normal(n) * 3
        lam = float(rng.uniform(0.0, 1.0)) * float(np.abs(X.T @ y).max())
        ref = soft_threshold(X.T @ y, lam) / c
        worst_orth = max(worst_orth, float(np.abs(lasso_fit(X, y, lam, tol=1e-12).theta - ref).max()))
    record(6, [
        ("kkt<=1e-6", worst_kkt <= 1e-6, f"{worst_kkt:.2e}"),
        ("orthonormal<=1e-8", worst_orth <= 1e-8, f"{worst_orth:.2e}"),
    ])


def _fd(net, Z, M, h=1e-5):
    g = np.zeros_like(net.W)
    for idx in np.ndindex(*net.W.shape):
        a, b = net.copy(), net.copy()
        a.W[idx] += h
        b.W[idx] -= h
        g[idx] = (loss(a, Z, M) - loss(b, Z, M)) / (2 * h)
    return g


def test_c07_gradient_correctness():
    rng = np.random.default_rng(7)
    worst_tanh = worst_relu = 0.0
    for i in range(20):
        p, m, pL, n = (int(v) for v in rng.integers(2, 6, 4))
        Z, M = rng.standard_normal((n, p)), rng.standard_normal((n, pL + 1))
        net = init_network(p, m, pL, activation="tanh", seed=i)
        fd = _fd(net, Z, M)
        worst_tanh = max(worst_tanh, np.linalg.norm(gradient(net, Z, M) - fd) / np.linalg.norm(fd))
        relu = init_network(p, m, pL, seed=100 + i)
        while np.abs(Z @ relu.W).min() <= 1e-3:
            Z = rng.standard_normal((n, p))
        fd = _fd(relu, Z, M)
        worst_relu = max(worst_relu, np.linalg.norm(gradient(relu, Z, M) - fd) / np.linalg.norm(fd))
    record(7, [
        ("tanh_rel<=1e-4", worst_tanh <= 1e-4, f"{worst_tanh:.2e}"),
        ("relu_rel<=1e-4", worst_relu <= 1e-4, f"{worst_relu:.2e}"),
    ])


def test_c08_low_sparsity():
    t0 = time.perf_counter()
    res = run_experiment(ExperimentConfig("table2_high_low", replicates=30, n=500, p=1000, k=10,
                                          methods=["debinet", "ols_post"], workers=WORKERS))
    secs = time.perf_counter() - t0
    checks = [(c.name, c.passed, c.detail) for c in experiment_checks(res)]
    record(8, checks + [("runtime<=1200s", secs <= 1200, f"{secs:.0f}s")])


def test_c09_high_sparsity_trend():
    res = run_experiment(ExperimentConfig("table2_high_high", replicates=30, n=500, p=1500, k=150,
                                          methods=["debinet", "ols_post"], workers=WORKERS))
    record(9, [(c.name, c.passed, c.detail) for c in experiment_checks(res)])


def test_c10_measurement_error():
    t0 = time.perf_counter()
    res = eiv_simulation(EivConfig())
    secs = time.perf_counter() - t0
    checks = [(c.name, c.passed, c.detail) for c in eiv_checks(res)]
    record(10, checks + [("runtime<=300s", secs <= 300, f"{secs:.0f}s")])


def test_c11_plm_comparison():
    res = compare_plms(ExperimentConfig("table1", replicates=10, n=2000, workers=WORKERS))
    record(11, [(c.name, c.passed, c.detail) for c in experiment_checks(res)])


def test_c12_ci_calibration():
    beta = np.array([1.0, -0.5, 2.0, 0.0, 0.3])
    results, truths = [], []
    for seed in range(400):
        rng = np.random.default_rng(10_000 + seed)
        X = rng.standard_normal((500, 5))
        y = X @ beta + rng.standard_normal(500)
        results.append(ols_post(X, y, np.arange(5)))
        truths.append(beta)
    cov = coverage(results, truths)
    record(12, [("|coverage-0.95|<=0.03", abs(cov - 0.95) <= 0.03, f"{cov:.4f}")])


def test_c13_nw_properties():
    rng = np.random.default_rng(13)
    worst_sum = worst_const = 0.0
    hull = True
    for _ in range(100):
        n, d, q = int(rng.integers(1, 40)), int(rng.integers(1, 5)), int(rng.integers(1, 3))
        Z, T = rng.standard_normal((n, d)), rng.standard_normal((n, q))
        Qy = rng.standard_normal((10, d))
        h = float(rng.uniform(0.3, 5.0))
        m = nw_fit(Z, T, h)
        worst_sum = max(worst_sum, float(np.abs(nw_weights(m, Qy).sum(1) - 1).max()))
        pred = nw_predict(m, Qy)
        hull &= bool(((pred >= T.min(0) - 1e-12) & (pred <= T.max(0) + 1e-12)).all())
        c = float(rng.standard_normal())
        const = nw_predict(nw_fit(Z, np.full(n, c), h), Qy)
        worst_const = max(worst_const, float(np.abs(const - c).max()))
    record(13, [
        ("weight_sum<=1e-12", worst_sum <= 1e-12, f"{worst_sum:.1e}"),
        ("constant<=1e-12", worst_const <= 1e-12, f"{worst_const:.1e}"),
        ("convex_hull", hull, str(hull)),
    ])
