import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debinet.errors import (
    InvalidParameterError,
    InvalidSizeError,
    NonCorrectableError,
    SingularDesignError,
    UndefinedVarianceError,
)
from debinet.debias import (
    DebiasResult,
    confidence_intervals,
    coverage,
    debiased_lasso,
    debinet_fit,
    eiv_sandwich_cov,
    measurement_correct,
    nw_post,
    ols_post,
    precision_nodewise,
)
from debinet.plm import NetNuisanceConfig
from debinet.selection import LassoSelector, lasso_fit
from debinet.synth_data import gen_table2
from debinet.widenet import EarlyStop, TrainConfig

SMALL_NET = NetNuisanceConfig(
    width=64,
    train=TrainConfig(optimizer="adam", learning_rate=1e-2, max_epochs=30,
                      early_stop=EarlyStop(patience=10), freeze_second_layer=False,
                      record_drift=False),
)


def _point(beta, lo=None, hi=None):
    beta = np.asarray(beta, dtype=float)
    lo = beta if lo is None else np.asarray(lo, dtype=float)
    hi = beta if hi is None else np.asarray(hi, dtype=float)
    return DebiasResult("ols_post", beta, beta, lo, hi, np.arange(beta.size), np.zeros(beta.size))


def _orthonormal(rng, n, p):
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return Q * np.sqrt(n)


class TestConfidenceIntervals:
    def test_quantile(self):
        lo, hi = confidence_intervals([0.0], [[1.0]], 0.95)
        assert hi[0] == pytest.approx(1.959964, abs=1e-5)
        assert lo[0] == pytest.approx(-1.959964, abs=1e-5)

    def test_zero_variance_is_point(self):
        lo, hi = confidence_intervals([1.5, -2.0], np.zeros((2, 2)))
        np.testing.assert_array_equal(lo, [1.5, -2.0])
        np.testing.assert_array_equal(hi, [1.5, -2.0])

    def test_nesting_and_symmetry(self, rng):
        b = rng.standard_normal(4)
        cov = np.diag(rng.uniform(0.1, 2.0, 4))
        lo95, hi95 = confidence_intervals(b, cov, 0.95)
        lo99, hi99 = confidence_intervals(b, cov, 0.99)
        assert (lo99 < lo95).all() and (hi99 > hi95).all()
        np.testing.assert_allclose(hi95 - b, b - lo95, atol=1e-12)

    @pytest.mark.parametrize("level", [0.0, 1.0, -0.5, 1.5])
    def test_invalid_level(self, level):
        with pytest.raises(InvalidParameterError):
            confidence_intervals([0.0], [[1.0]], level)


class TestCoverage:
    def test_infinite_intervals(self):
        r = _point([1.0, 2.0], lo=[-np.inf] * 2, hi=[np.inf] * 2)
        assert coverage([r, r], [[5.0, 5.0], [0.0, 0.0]]) == 1.0

    def test_points_miss(self):
        assert coverage([_point([1.0, 2.0])], [[1.5, 2.5]]) == 0.0

    def test_pooled_vs_per_replicate(self):
        a = _point([0.0], lo=[-1.0], hi=[1.0])
        b = _point([0.0, 0.0, 0.0], lo=[-1.0] * 3, hi=[1.0] * 3)
        truths = [[0.0], [0.0, 5.0, 5.0]]
        assert coverage([a, b], truths) == pytest.approx(0.5)
        assert coverage([a, b], truths, per_replicate=True) == pytest.approx((1 + 1 / 3) / 2)

    def test_full_length_truth_restricted(self):
        r = DebiasResult("ols_post", np.zeros(4), np.array([1.0]), np.array([0.5]),
                         np.array([1.5]), np.array([2]), np.array([0.1]))
        assert coverage([r], [[9.0, 9.0, 1.0, 9.0]]) == 1.0

    def test_empty(self):
        with pytest.raises(InvalidSizeError):
            coverage([], [])

    def test_calibration(self):
        results, truths = [], []
        beta = np.array([1.0, -0.5, 2.0, 0.0, 0.3])
        for seed in range(400):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((500, 5))
            y = X @ beta + rng.standard_normal(500)
            results.append(ols_post(X, y, np.arange(5)))
            truths.append(beta)
        assert abs(coverage(results, truths) - 0.95) <= 0.03


class TestOlsPost:
    def test_all_columns_is_ols(self, rng):
        X = rng.standard_normal((40, 5))
        y = rng.standard_normal(40)
        res = ols_post(X, y, np.arange(5))
        np.testing.assert_allclose(res.beta_hat, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-10)

    def test_noiseless_recovery_and_scatter(self, rng):
        X = rng.standard_normal((30, 8))
        S = np.array([1, 4, 6])
        y = X[:, S] @ [2.0, -1.0, 0.5]
        res = ols_post(X, y, S)
        np.testing.assert_allclose(res.beta_hat, [2.0, -1.0, 0.5], atol=1e-10)
        assert np.count_nonzero(res.theta_full) == 3
        np.testing.assert_array_equal(res.theta_full[S], res.beta_hat)
        np.testing.assert_allclose(res.predict(X), y, atol=1e-9)

    def test_selector_input(self, rng):
        X = rng.standard_normal((60, 10))
        y = 3 * X[:, 2] + 0.1 * rng.standard_normal(60)
        res = ols_post(X, y, LassoSelector(lam_frac=0.5))
        assert 2 in res.active_set

    def test_singular(self, rng):
        x = rng.standard_normal(20)
        X = np.column_stack([x, x, rng.standard_normal(20)])
        with pytest.raises(SingularDesignError):
            ols_post(X, rng.standard_normal(20), [0, 1])


class TestDebinet:
    def test_empty_z_is_ols(self, rng):
        X = rng.standard_normal((50, 4))
        y = X @ [1.0, 0.0, -2.0, 0.5] + rng.standard_normal(50)
        res = debinet_fit(X, y, selection=np.arange(4))
        np.testing.assert_allclose(res.beta_hat, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-8)

    def test_deterministic_and_consistent(self):
        data = gen_table2(120, 40, 3, seed=1)
        a = debinet_fit(data.X, data.y, nn_cfg=SMALL_NET)
        b = debinet_fit(data.X, data.y, nn_cfg=SMALL_NET)
        np.testing.assert_array_equal(a.beta_hat, b.beta_hat)
        np.testing.assert_array_equal(a.ci_low, b.ci_low)
        assert (a.ci_low <= a.beta_hat).all() and (a.beta_hat <= a.ci_high).all()
        assert np.count_nonzero(a.theta_full) == a.active_set.size
        np.testing.assert_array_equal(a.theta_full[a.active_set], a.beta_hat)
        assert a.predict(data.X).shape == (120,)

    def test_to_dict(self, rng):
        d = ols_post(rng.standard_normal((20, 3)), rng.standard_normal(20), [0, 2]).to_dict()
        assert d["method"] == "ols_post" and d["active_set"] == [0, 2]


class TestNwPost:
    def test_infinite_bandwidth_is_centered_ols_post(self, rng):
        X = rng.standard_normal((60, 6))
        y = X[:, :2] @ [1.0, -1.0] + rng.standard_normal(60)
        S = np.array([0, 1])
        res = nw_post(X, y, S, h_y=np.inf, h_D=np.inf)
        Xc = X - X.mean(0)
        ref = ols_post(Xc, y - y.mean(), S)
        np.testing.assert_allclose(res.beta_hat, ref.beta_hat, atol=1e-8)

    def test_deterministic(self, rng):
        X = rng.standard_normal((60, 6))
        y = X[:, 0] + rng.standard_normal(60)
        a = nw_post(X, y, [0, 3], seed=2)
        b = nw_post(X, y, [0, 3], seed=2)
        np.testing.assert_array_equal(a.beta_hat, b.beta_hat)


class TestDebiasedLasso:
    def test_orthonormal_design(self, rng):
        n, p = 200, 10
        X = _orthonormal(rng, n, p)
        y = X[:, :3] @ [2.0, -1.0, 0.5] + rng.standard_normal(n)
        fit = lasso_fit(X, y, 0.3 * n)
        np.testing.assert_allclose(precision_nodewise(X), np.eye(p), atol=1e-8)
        res = debiased_lasso(X, y, fit)
        np.testing.assert_allclose(res.theta_full, X.T @ y / n, atol=1e-6)

    def test_ols_start_needs_no_correction(self, rng):
        X = rng.standard_normal((100, 5))
        y = X @ [1.0, 2.0, 0.0, -1.0, 0.5] + rng.standard_normal(100)
        fit = lasso_fit(X, y, 0.0, tol=1e-12)
        res = debiased_lasso(X, y, fit)
        np.testing.assert_allclose(res.theta_full, fit.theta, atol=1e-8)

    def test_reported_on_active_set(self, rng):
        X = rng.standard_normal((80, 20))
        y = 2 * X[:, 0] - X[:, 5] + rng.standard_normal(80)
        fit = lasso_fit(X, y, 0.2 * 80)
        res = debiased_lasso(X, y, fit)
        np.testing.assert_array_equal(res.active_set, fit.active_set)
        np.testing.assert_array_equal(res.beta_hat, res.theta_full[fit.active_set])
        assert (res.ci_low <= res.beta_hat).all() and (res.beta_hat <= res.ci_high).all()

    def test_workers_match(self, rng):
        X = rng.standard_normal((50, 12))
        np.testing.assert_allclose(precision_nodewise(X, workers=3), precision_nodewise(X),
                                   atol=1e-14)

    def test_bad_penalty(self, rng):
        with pytest.raises(InvalidParameterError):
            precision_nodewise(rng.standard_normal((10, 3)), lambda_node=0.0)


class TestMeasurementCorrection:
    def test_scalar(self):
        x = np.array([1.0, -1.0, 1.0, -1.0]) * np.sqrt(2.0)
        rep = measurement_correct([0.6], x, sigma_X2=1.0)
        assert rep.R_mat[0, 0] == pytest.approx(0.5)
        assert rep.beta_corrected[0] == pytest.approx(1.2)

    def test_no_regressor_noise(self, rng):
        b = rng.standard_normal(3)
        rep = measurement_correct(b, rng.standard_normal((30, 3)), 0.0, 0.2, 1.0)
        np.testing.assert_array_equal(rep.R_mat, 0.0)
        np.testing.assert_array_equal(rep.beta_corrected, b)
        assert rep.asym_cov is None
        with pytest.raises(UndefinedVarianceError):
            measurement_correct(b, rng.standard_normal((30, 3)), 0.0, with_cov=True)

    def test_non_correctable(self):
        x = np.array([1.0, -1.0])
        with pytest.raises(NonCorrectableError):
            measurement_correct([0.5], x, sigma_X2=1.0)

    def test_negative_variance(self, rng):
        with pytest.raises(InvalidParameterError):
            measurement_correct([0.5], rng.standard_normal(10), sigma_X2=-1.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), sx2=st.floats(0.01, 0.5))
    def test_algebra(self, seed, sx2):
        rng = np.random.default_rng(seed)
        Xt = rng.standard_normal((200, 3)) * 1.5
        b = rng.standard_normal(3)
        rep = measurement_correct(b, Xt, sx2, 0.1, 1.0)
        np.testing.assert_allclose(rep.R_mat, sx2 * np.linalg.inv(Xt.T @ Xt / 200), atol=1e-12)
        np.testing.assert_allclose((np.eye(3) - rep.R_mat) @ rep.beta_corrected, b, atol=1e-10)
        np.testing.assert_allclose(rep.Q_hat, Xt.T @ Xt / 200 - sx2 * np.eye(3), atol=1e-12)


class TestSandwichCovariance:
    def test_zero_coefficients_match_plugin(self):
        sx2, sy2, se2 = 0.25, 0.09, 1.0
        R = sx2 * np.linalg.inv((1 + sx2) * np.eye(3))
        np.testing.assert_allclose(eiv_sandwich_cov(np.zeros(3), np.eye(3), sx2, sy2, se2),
                                   (se2 + sy2) / sx2 * R, atol=1e-14)

    def test_monte_carlo(self):
        beta = np.array([1.0, -0.5, 0.8])
        Q = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]])
        L = np.linalg.cholesky(Q)
        sx, sy, se, n = 0.5, 0.3, 1.0, 4000
        R = sx ** 2 * np.linalg.inv(Q + sx ** 2 * np.eye(3))
        target = (np.eye(3) - R) @ beta
        devs = []
        for seed in range(800):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((n, 3)) @ L.T
            Xt = X + sx * rng.standard_normal((n, 3))
            Yt = X @ beta + se * rng.standard_normal(n) + sy * rng.standard_normal(n)
            devs.append(np.sqrt(n) * (np.linalg.lstsq(Xt, Yt, rcond=None)[0] - target))
        devs = np.array(devs)
        emp = devs.T @ devs / len(devs)
        ref = eiv_sandwich_cov(beta, Q, sx ** 2, sy ** 2, se ** 2)
        assert np.linalg.norm(emp - ref) / np.linalg.norm(ref) <= 0.12
