import numpy as np
import pytest

from debinet.errors import (
    InvalidSizeError,
    InvalidSparsityError,
    MissingColumnError,
    NonNumericCellError,
)
from debinet.synth_data import (
    T2_FLOOR,
    Dataset,
    GenSpec,
    complex_from_t,
    gen_complex,
    gen_table1,
    gen_table2,
    load_csv,
    table1_from_z,
    write_csv,
)


class TestTable1:
    def test_shapes(self):
        for s in range(3):
            d = gen_table1(200, s)
            assert d.Z.shape == (200, 10)
            assert d.D.shape == (200, 1)
            assert d.y.shape == (200,)

    def test_origin_without_noise(self):
        d = table1_from_z(np.zeros((1, 10)))
        assert d.D[0, 0] == 0.0
        assert d.y[0] == 10.0

    def test_noise_sd_zero_matches_mechanism(self):
        d = gen_table1(50, 3, noise_sd=0.0)
        np.testing.assert_allclose(d.D[:, 0], 50 * np.sin(d.Z).sum(1))
        np.testing.assert_allclose(d.y, d.D[:, 0] + np.cosh(d.Z).sum(1))

    def test_deterministic(self):
        a, b = gen_table1(100, 9), gen_table1(100, 9)
        np.testing.assert_array_equal(a.Z, b.Z)
        np.testing.assert_array_equal(a.y, b.y)

    def test_moments(self):
        Z = gen_table1(100_000, 1).Z
        assert np.all(np.abs(Z.mean(0)) < 0.02)
        assert np.all(np.abs(Z.var(0) - 1) < 0.05)

    def test_zero_rows_rejected(self):
        with pytest.raises(InvalidSizeError):
            gen_table1(0, 0)


class TestTable2:
    def test_beta_layout(self):
        d = gen_table2(1000, 3000, 10, 0)
        assert d.beta_true.sum() == 10
        np.testing.assert_array_equal(d.beta_true[:10], 1.0)
        np.testing.assert_array_equal(d.beta_true[10:], 0.0)

    def test_all_active(self):
        np.testing.assert_array_equal(gen_table2(5, 3, 3, 1).beta_true, [1, 1, 1])

    def test_sparsity_errors(self):
        with pytest.raises(InvalidSparsityError):
            gen_table2(10, 3, 4, 0)
        with pytest.raises(InvalidSparsityError):
            gen_table2(10, 3, 0, 0)

    def test_ols_recovers_coefficients(self):
        d = gen_table2(50_000, 2, 1, 4)
        coef = np.linalg.lstsq(d.X, d.y, rcond=None)[0]
        np.testing.assert_allclose(coef, [1.0, 0.0], atol=0.02)

    def test_design_moments(self):
        d = gen_table2(200, 100, 5, 2)
        n, p = d.X.shape
        assert abs(d.X.mean()) < 4 / np.sqrt(n * p)
        assert abs(d.X.var() - 1) < 0.1


class TestComplex:
    def test_origin(self):
        d = complex_from_t(np.zeros((1, 5)))
        assert d.D[0, 0] == pytest.approx(1.0)
        assert d.y[0] == pytest.approx(2.0)

    def test_log_domain_clamped(self):
        T = np.zeros((1, 5))
        T[0, 1] = -3.0
        d = complex_from_t(T)
        assert np.isfinite(d.D).all()
        assert d.D[0, 0] == pytest.approx(np.log(T2_FLOOR + 1) + 1.0)

    def test_deterministic(self):
        a, b = gen_complex(300, 5), gen_complex(300, 5)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.Z, b.Z)

    def test_d_and_y_correlated(self):
        d = gen_complex(10_000, 0)
        ok = np.isfinite(d.D[:, 0]) & (np.abs(d.D[:, 0]) < 1e6)
        assert np.corrcoef(d.D[ok, 0], d.y[ok])[0, 1] > 0.5


class TestGenSpec:
    def test_dispatch(self):
        d = GenSpec.from_dict({"regime": "table2", "n": 20, "p": 8, "k": 2, "seed": 1}).generate()
        np.testing.assert_array_equal(d.X, gen_table2(20, 8, 2, 1).X)

    def test_invalid(self):
        with pytest.raises(InvalidSparsityError):
            GenSpec("table2", 10, 3, 5)
        with pytest.raises(ValueError):
            GenSpec("nope", 10)


class TestCsv:
    def test_shape(self, tmp_path):
        f = tmp_path / "a.csv"
        f.write_text("a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
        d = load_csv(f, "y")
        assert d.X.shape == (3, 2)
        np.testing.assert_array_equal(d.y, [3, 6, 9])
        assert d.columns == ("a", "b")

    def test_constant_target(self, tmp_path):
        f = tmp_path / "a.csv"
        f.write_text("y,a\n1,2\n1,3\n")
        assert load_csv(f, "y").y.var() == 0.0

    def test_round_trip(self, tmp_path):
        d = gen_table2(30, 7, 3, 8)
        f = tmp_path / "rt.csv"
        write_csv(d, f)
        back = load_csv(f, "y")
        np.testing.assert_allclose(back.X, d.X, atol=1e-12, rtol=0)
        np.testing.assert_allclose(back.y, d.y, atol=1e-12, rtol=0)

    def test_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "missing.csv", "y")
        f = tmp_path / "bad.csv"
        f.write_text("a,y\n1,2\nx,3\n")
        with pytest.raises(NonNumericCellError) as ei:
            load_csv(f, "y")
        assert ei.value.row == 2 and ei.value.column == "a"
        with pytest.raises(MissingColumnError) as ei:
            load_csv(f, "target")
        assert ei.value.column == "target"


def test_dataset_validates_shapes():
    with pytest.raises(InvalidSizeError):
        Dataset(X=np.zeros((3, 2)), y=np.zeros(4))
