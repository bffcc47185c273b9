import math

import mpmath
import numpy as np
import pytest

from mdlrelu.errors import DegenerateBasisError, NumericalError
from mdlrelu.model import Dataset, NetworkModel, make_rng, sample_weights
from mdlrelu.spectral import (ApproxBasis, FimMatrix, analytic_fim_reconstruction, approx_basis,
                              approx_eigenvalues, beta_D, empirical_fim, exact_spectrum, gram_report,
                              load_matrix, monte_carlo_fim, residual_matrix, save_matrix,
                              spectrum_summary)
from oracles import arccos_kernel_fim, residual_closed_form


def _data(X):
    X = np.asarray(X, dtype=float)
    return Dataset(np.zeros((X.shape[0], 1)), X, np.zeros(X.shape[0]))


def _model(d, m, seed=0):
    return NetworkModel(sample_weights(d, m, make_rng(seed)), 1.0)


def _fim(A):
    return FimMatrix(np.asarray(A, dtype=float), "test")


class TestEmpiricalFim:
    def test_single_row(self):
        np.testing.assert_array_equal(empirical_fim(_data([[1.0, 0.0]])).J, [[1.0, 0.0], [0.0, 0.0]])

    def test_two_rows(self):
        np.testing.assert_array_equal(empirical_fim(_data(np.eye(2))).J, 0.5 * np.eye(2))

    def test_error_shrinks_with_n(self):
        model = _model(2, 6)
        J = arccos_kernel_fim(model.W)
        errs = []
        for n in (1000, 100_000):
            x = make_rng(3, n).standard_normal((n, 2))
            Jh = empirical_fim(_data(model.features(x))).J
            errs.append(np.abs(Jh - J).max())
        # 1/sqrt(n) scaling predicts a factor of 10
        assert errs[1] < errs[0] / 3

    def test_psd(self, rng):
        X = np.maximum(rng.standard_normal((30, 8)), 0)
        assert np.linalg.eigvalsh(empirical_fim(_data(X)).J)[0] > -1e-12


class TestMonteCarloFim:
    def test_half_gaussian_second_moment(self):
        model = NetworkModel(np.array([[1.0]]), 1.0)
        J = monte_carlo_fim(model, 1_000_000, make_rng(1))
        assert abs(J.J[0, 0] / 0.5 - 1.0) < 0.01

    def test_trace_near_half_d(self):
        model = _model(4, 2000, seed=5)
        J = monte_carlo_fim(model, 100_000, make_rng(6))
        assert abs(J.trace / 2.0 - 1.0) < 0.10

    def test_zero_weights(self):
        J = monte_carlo_fim(NetworkModel(np.zeros((2, 3)), 1.0), 100, make_rng(0))
        np.testing.assert_array_equal(J.J, np.zeros((3, 3)))

    def test_matches_arccos_kernel(self):
        model = _model(3, 10, seed=2)
        J = monte_carlo_fim(model, 200_000, make_rng(2))
        np.testing.assert_allclose(J.J, arccos_kernel_fim(model.W), atol=0.01)

    def test_chunking_does_not_change_result(self):
        model = _model(2, 5)
        a = monte_carlo_fim(model, 1000, make_rng(4), chunk=1000)
        b = monte_carlo_fim(model, 1000, make_rng(4), chunk=1000)
        np.testing.assert_array_equal(a.J, b.J)

    def test_rejects_zero_samples(self):
        with pytest.raises(ValueError):
            monte_carlo_fim(_model(2, 3), 0, make_rng(0))

    def test_asymmetric_input_rejected(self):
        with pytest.raises(NumericalError):
            _fim([[1.0, 0.5], [0.0, 1.0]])


class TestExactSpectrum:
    def test_diagonal(self):
        s = exact_spectrum(_fim(np.diag([3.0, 1.0, 2.0])))
        np.testing.assert_allclose(s.eigenvalues, [3.0, 2.0, 1.0])
        np.testing.assert_allclose(np.abs(s.eigenvectors), np.eye(3)[[0, 2, 1]])

    def test_reconstruction(self, rng):
        A = rng.standard_normal((20, 20))
        J = A @ A.T
        s = exact_spectrum(_fim(J))
        assert np.linalg.norm(J - s.reconstruct()) / np.linalg.norm(J) <= 1e-8
        np.testing.assert_allclose(s.eigenvectors @ s.eigenvectors.T, np.eye(20), atol=1e-10)
        assert np.all(np.diff(s.eigenvalues) <= 0)

    def test_rank_one(self):
        u = np.array([2.0, 0.0, 0.0, 0.0])
        u = u / np.linalg.norm(u) * 2.0
        s = exact_spectrum(_fim(np.outer(u, u)))
        assert s.eigenvalues[0] == pytest.approx(4.0)
        np.testing.assert_allclose(s.eigenvalues[1:], 0.0, atol=1e-12)


class TestBetaD:
    def test_full_rank_is_zero(self):
        s = exact_spectrum(_fim(np.diag([3.0, 2.0, 1.0])))
        assert beta_D(s, 3) == 0.0

    def test_direct_ratio(self):
        assert beta_D(exact_spectrum(_fim(np.diag([3.0, 1.0]))), 1) == pytest.approx(0.25)

    def test_monotone_in_D(self, rng):
        A = rng.standard_normal((12, 12))
        s = exact_spectrum(_fim(A @ A.T))
        vals = [beta_D(s, D) for D in range(1, 13)]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))

    def test_zero_trace(self):
        with pytest.raises(NumericalError):
            beta_D(exact_spectrum(_fim(np.zeros((2, 2)))), 1)

    @pytest.mark.parametrize("D", [0, 3])
    def test_D_out_of_range(self, D):
        with pytest.raises(ValueError):
            beta_D(exact_spectrum(_fim(np.eye(2))), D)


class TestApproxBasis:
    def test_single_input(self):
        b = approx_basis(NetworkModel(np.array([[1.0, -1.0]]), 1.0))
        assert b.D == 2
        np.testing.assert_allclose(b.rows[0], [1.0, 1.0])
        np.testing.assert_allclose(b.eigenvalues, [3 / (4 * math.pi), 0.25])

    def test_two_inputs_row_order(self):
        b = approx_basis(_model(2, 50))
        assert b.labels == ("v0", "W1", "W2", "vbar1", "v12")
        assert b.D == 5

    def test_eigenvalue_groups(self):
        lam = approx_eigenvalues(4)
        assert lam.size == 14
        assert lam[0] == pytest.approx(9 / (4 * math.pi))
        np.testing.assert_allclose(lam[1:5], 0.25)
        np.testing.assert_allclose(lam[5:], 1 / (8 * math.pi))

    def test_row_norms(self):
        b = approx_basis(_model(4, 4000, seed=11))
        norms = np.linalg.norm(b.rows, axis=1)
        first = b.D - 6
        assert np.all((norms[:first] > 0.9) & (norms[:first] < 1.1))
        # the cross rows concentrate at sqrt(d/(d+2)) rather than 1
        np.testing.assert_allclose(norms[first:], math.sqrt(4 / 6), rtol=0.08)

    def test_vbar_rows_orthonormal(self):
        b = approx_basis(_model(4, 300))
        vbar = b.rows[5:8]
        np.testing.assert_allclose(vbar @ vbar.T, np.eye(3), atol=1e-10)

    def test_zero_column(self):
        W = np.ones((2, 3))
        W[:, 1] = 0.0
        with pytest.raises(DegenerateBasisError):
            approx_basis(NetworkModel(W, 1.0))

    def test_rank_deficient_span(self):
        # identical rows make every v_gamma equal, so the span has rank 1 instead of 2
        W = np.tile(make_rng(0).standard_normal(6), (3, 1))
        with pytest.raises(DegenerateBasisError):
            approx_basis(NetworkModel(W, 1.0))


def _series_partial_sum(rho, terms=200):
    mpmath.mp.dps = 40
    rho = mpmath.mpf(rho)
    s = mpmath.fsum(mpmath.binomial(2 * k, k) * rho ** (2 * k + 2) / (4**k * (2 * k + 1) * (2 * k + 2))
                    for k in range(1, terms + 1))
    return float(s / (2 * mpmath.pi))


class TestResidualMatrix:
    def test_orthogonal_columns(self):
        R = residual_matrix(NetworkModel(np.eye(3), 1.0))
        np.testing.assert_array_equal(R - np.diag(np.diag(R)), np.zeros((3, 3)))

    def test_unit_diagonal(self):
        R = residual_matrix(NetworkModel(np.eye(2), 1.0))
        mpmath.mp.dps = 40
        exact = float((mpmath.pi / 2 - mpmath.mpf(3) / 2) / (2 * mpmath.pi))
        assert exact == pytest.approx((math.pi - 3) / (4 * math.pi), rel=1e-14)
        np.testing.assert_allclose(np.diag(R), exact, rtol=1e-13)
        # the truncated series creeps toward the same value
        assert abs(_series_partial_sum(1.0) - exact) < 1e-5

    def test_antiparallel_matches_parallel(self):
        R = residual_matrix(NetworkModel(np.array([[1.0, -1.0, 1.0]]), 1.0))
        np.testing.assert_allclose(R, np.full((3, 3), R[0, 0]), rtol=1e-14)

    @pytest.mark.parametrize("rho", [0.05, 0.3, 0.6, 0.7, 0.9, -0.5])
    def test_against_high_precision_series(self, rho):
        W = np.array([[1.0, rho], [0.0, math.sqrt(1 - rho**2)]])
        R = residual_matrix(NetworkModel(W, 1.0))
        mpmath.mp.dps = 40
        r = mpmath.mpf(rho)
        exact = (mpmath.sqrt(1 - r**2) + r * mpmath.asin(r) - 1 - r**2 / 2) / (2 * mpmath.pi)
        assert R[0, 1] == pytest.approx(float(exact), rel=1e-11)
        if abs(rho) < 0.7:
            assert R[0, 1] == pytest.approx(_series_partial_sum(rho), rel=1e-11)

    def test_against_closed_form_random(self):
        model = _model(4, 200, seed=3)
        W = model.W
        nrm = np.linalg.norm(W, axis=0)
        rho = np.clip(W.T @ W / np.outer(nrm, nrm), -1, 1)
        ref = residual_closed_form(rho, nrm[:, None], nrm[None, :])
        R = residual_matrix(model)
        np.testing.assert_allclose(R, R.T)
        np.testing.assert_allclose(R, ref, rtol=1e-9, atol=1e-15)

    def test_psd(self):
        R = residual_matrix(_model(3, 60, seed=4))
        assert np.linalg.eigvalsh(R)[0] > -1e-12

    def test_bad_tolerance(self):
        with pytest.raises(ValueError):
            residual_matrix(_model(2, 3), rel_tol=0.0)


def _basis(rows):
    rows = np.asarray(rows, dtype=float)
    return ApproxBasis(rows, np.ones(rows.shape[0]), tuple(str(i) for i in range(rows.shape[0])), 1)


class TestGramReport:
    def test_orthonormal(self):
        g = gram_report(_basis(np.eye(3)[:2]))
        np.testing.assert_allclose(g.G, np.eye(2))
        assert g.eps1 == 0.0
        np.testing.assert_allclose(g.dual_rows, np.eye(3)[:2])

    def test_inner_product_point_one(self):
        u2 = np.array([0.1, math.sqrt(1 - 0.01)])
        g = gram_report(_basis([[1.0, 0.0], u2]))
        # eigenvalues of G are 1.1 and 0.9, so the inverse deviates by 1/0.9 - 1
        assert g.eps1 == pytest.approx(1 / 0.9 - 1, rel=1e-12)
        assert g.eps1 == pytest.approx(0.1111, abs=1e-4)
        assert g.radius == pytest.approx(math.sqrt(1 + 1 / 9))

    def test_duality(self):
        b = approx_basis(_model(3, 400, seed=1))
        g = gram_report(b)
        np.testing.assert_allclose(b.rows @ g.dual_rows.T, np.eye(b.D), atol=1e-8)
        np.testing.assert_allclose(g.dual_rows @ g.dual_rows.T, np.linalg.inv(g.G), atol=1e-8)

    def test_singular(self):
        with pytest.raises(DegenerateBasisError):
            gram_report(_basis([[1.0, 0.0], [2.0, 0.0]]))


class TestReconstruction:
    def test_single_input_is_exact(self):
        # with d=1 every column cosine is +-1, so the grouped terms plus R reproduce J
        W = np.array([[0.7, -1.3, 0.2, 2.0]])
        model = NetworkModel(W, 1.0)
        b = approx_basis(model)
        J = analytic_fim_reconstruction(b, residual_matrix(model)).J
        np.testing.assert_allclose(J, arccos_kernel_fim(W), atol=1e-14)

    def test_close_to_monte_carlo(self):
        model = _model(4, 2000, seed=8)
        b = approx_basis(model)
        A = analytic_fim_reconstruction(b, residual_matrix(model)).J
        J = monte_carlo_fim(model, 100_000, make_rng(9)).J
        assert np.linalg.norm(A - J) / np.linalg.norm(J) < 0.15

    def test_trace_identity(self):
        model = _model(3, 100, seed=2)
        b = approx_basis(model)
        R = residual_matrix(model)
        A = analytic_fim_reconstruction(b, R)
        expected = float(np.sum(b.eigenvalues * np.sum(b.rows**2, axis=1)) + np.trace(R))
        assert A.trace == pytest.approx(expected, rel=1e-12)
        assert analytic_fim_reconstruction(b).trace < A.trace


class TestSummaryAndDump:
    def test_summary(self):
        s = exact_spectrum(_fim(np.diag([3.0, 1.0])))
        out = spectrum_summary(s, 1)
        assert out["beta_at_D"] == pytest.approx(0.25)
        assert out["eps1"] is None
        assert out["eigenvalues"] == [3.0, 1.0]

    def test_matrix_round_trip(self, tmp_path, rng):
        A = rng.standard_normal((3, 5))
        save_matrix(tmp_path / "j.bin", A)
        raw = (tmp_path / "j.bin").read_bytes()
        assert raw[:4] == b"FIMJ" and len(raw) == 16 + 8 * 15
        np.testing.assert_array_equal(load_matrix(tmp_path / "j.bin"), A)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ValueError):
            load_matrix(tmp_path / "x.bin")
