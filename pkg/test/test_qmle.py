"""
擬似最尤推定のテスト
このモジュールは、hfsem.qmle の機能をテストします。
"""

import sys
import unittest
from unittest.mock import patch

import numpy as np

import config
import utils
from hfsem.errors import DimensionError, DomainError, ModelError
from hfsem.lisrel_model import build_sigma, mask_from_dict
from hfsem.matrix_core import asymcov_w, duplication, vech
from hfsem.qmle import (
    NONPD_SURROGATE,
    Contrast,
    ContrastValue,
    FitResult,
    asymptotic_se,
    contrast_f,
    fit,
    minimize_box,
    population_fit,
    quasi_loglik,
    standard_errors,
)
from hfsem.realized_cov import RealizedCov, realized_cov
from hfsem.sde_sim import SamplingGrid, load_system, simulate_observations
from hfsem.lisrel_model import sigma_jacobian


def load_fixture_mask(name):
    return mask_from_dict(utils.read_json(config.resolve_fixture(name, "models")))


def quadrature_discrepancy(Q, sigma, nodes=40):
    """(vech Q − vech Σ)ᵀ V (vech Q − vech Σ)。V は二重積分を Gauss–Legendre 法で評価します。"""
    x, w = np.polynomial.legendre.leggauss(nodes)
    u, wu = 0.5 * (x + 1.0), 0.5 * w
    p = sigma.shape[0]
    D = duplication(p).D
    kernel = np.zeros((p * p, p * p))
    for l1, w1 in zip(u, wu):
        for l2, w2 in zip(u, wu):
            inv = np.linalg.inv(sigma + l1 * l2 * (Q - sigma))
            kernel += w1 * w2 * l2 * np.kron(inv, inv)
    d = vech(Q) - vech(sigma)
    return float(d @ (D.T @ kernel @ D) @ d)


class TestContrast(unittest.TestCase):
    """コントラスト関数のテストクラス"""

    @classmethod
    def setUpClass(cls):
        cls.mask = load_fixture_mask("small_correct")
        cls.sigma0 = build_sigma(cls.mask, cls.mask.theta_true)
        cls.q = RealizedCov(cls.sigma0, 10000, 10.0)

    def test_zero_at_truth(self):
        self.assertLess(abs(contrast_f(self.q, self.mask, self.mask.theta_true)), 1e-12)

    def test_positive_away_from_truth(self):
        theta = self.mask.theta_true.copy()
        theta[0] += 0.5
        self.assertGreater(contrast_f(self.q, self.mask, theta), 0.0)

    def test_non_pd_sigma_returns_largest_float(self):
        theta = self.mask.theta_true.copy()
        theta[self.mask.labels.index("Sdd[1,1]")] = -5.0
        self.assertEqual(contrast_f(self.q, self.mask, theta), sys.float_info.max)
        self.assertEqual(NONPD_SURROGATE, sys.float_info.max)

    def test_gradient_against_finite_differences(self):
        contrast = Contrast(self.q, self.mask)
        theta = self.mask.theta_true * 1.05 + 0.1
        grad = contrast.evaluate(theta).grad
        numeric = np.zeros_like(theta)
        for j in range(theta.size):
            step = 1e-6 * (1.0 + abs(theta[j]))
            up, down = theta.copy(), theta.copy()
            up[j] += step
            down[j] -= step
            numeric[j] = (contrast.evaluate(up, False).value - contrast.evaluate(down, False).value) / (2.0 * step)
        self.assertLess(np.max(np.abs(grad - numeric)), 1e-6)

    def test_quadratic_form_identity(self):
        rng = np.random.default_rng(8)
        for p in (1, 2, 3):
            with self.subTest(p=p):
                a = rng.standard_normal((p, p))
                sigma = a @ a.T + p * np.eye(p)
                b = rng.standard_normal((p, p))
                Q = sigma + 0.3 * (b @ b.T)
                direct = np.linalg.slogdet(sigma)[1] - np.linalg.slogdet(Q)[1] + np.trace(np.linalg.solve(sigma, Q)) - p
                self.assertAlmostEqual(quadrature_discrepancy(Q, sigma), direct, delta=1e-8)

    def test_diagonal_hand_value(self):
        payload = {
            "dims": {"p1": 2, "p2": 0, "k1": 1, "k2": 0},
            "matrices": {"Lx1": [[0], [0]], "Sxx": [[1]], "Sdd": {"diag": ["free", "free"]}},
        }
        mask = mask_from_dict(payload)
        q = RealizedCov(np.diag([2.0, 2.0]), 10, 1.0)
        # 2 − ln 4
        self.assertAlmostEqual(contrast_f(q, mask, [1.0, 1.0]), 0.6137056389, places=9)
        self.assertLess(abs(contrast_f(q, mask, [2.0, 2.0])), 1e-14)

    def test_singular_q_uses_identity_weight(self):
        singular = RealizedCov(np.zeros((6, 6)), 10, 1.0)
        contrast = Contrast(singular, self.mask)
        self.assertTrue(contrast.identity_weight)
        value = contrast.evaluate(self.mask.theta_true, False).value
        self.assertAlmostEqual(value, float(vech(self.sigma0) @ vech(self.sigma0)))

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            Contrast(RealizedCov(np.eye(3), 10, 1.0), self.mask)


class TestQuasiLoglik(unittest.TestCase):
    """擬似対数尤度のテストクラス"""

    def test_scalar_formula(self):
        n, h = 10, 0.1
        expected = -0.5 * n * np.log(2.0 * np.pi) - 0.5 * n * np.log(h) - 0.5 * n * np.log(1.0) - 0.5 * n * 2.0
        self.assertAlmostEqual(quasi_loglik([[2.0]], [[1.0]], n, h), expected)


class TestMinimizeBox(unittest.TestCase):
    """箱型制約付き最適化のテストクラス"""

    def test_solution_on_bound(self):
        center = np.array([2.0, -3.0, 0.5])

        def evaluate(x, with_grad=True):
            return ContrastValue(float(np.sum((x - center) ** 2)), 2.0 * (x - center), True)

        outcome = minimize_box(evaluate, np.zeros(3), np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
        self.assertTrue(outcome.converged)
        np.testing.assert_allclose(outcome.x, [1.0, -1.0, 0.5], atol=1e-8)

    def test_rosenbrock(self):
        def evaluate(x, with_grad=True):
            value = (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2
            grad = np.array([
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
                200.0 * (x[1] - x[0] ** 2),
            ])
            return ContrastValue(value, grad, True)

        outcome = minimize_box(evaluate, np.array([-1.2, 1.0]), np.full(2, -5.0), np.full(2, 5.0))
        self.assertTrue(outcome.converged)
        np.testing.assert_allclose(outcome.x, [1.0, 1.0], atol=1e-5)

    def test_infeasible_start(self):
        def evaluate(x, with_grad=True):
            return ContrastValue(NONPD_SURROGATE, None, False)

        outcome = minimize_box(evaluate, np.zeros(1), np.full(1, -1.0), np.full(1, 1.0))
        self.assertFalse(outcome.converged)


class TestFit(unittest.TestCase):
    """推定のテストクラス"""

    @classmethod
    def setUpClass(cls):
        cls.mask = load_fixture_mask("small_correct")
        cls.sigma0 = build_sigma(cls.mask, cls.mask.theta_true)

    def test_population_recovers_truth(self):
        start = self.mask.clip(self.mask.theta_true * 1.1)
        result = population_fit(self.sigma0, self.mask, start)
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.theta_hat, self.mask.theta_true, atol=1e-4)
        self.assertLess(result.contrast, 1e-10)

    def test_perturbed_q(self):
        Q = self.sigma0.copy()
        Q[0, 0] += 1e-6
        result = fit(RealizedCov(Q, 10000, 10.0), self.mask)
        self.assertTrue(result.converged)
        self.assertLess(np.max(np.abs(result.theta_hat - self.mask.theta_true)), 1e-3)

    def test_misspecified_population(self):
        model_a = load_fixture_mask("small_model_a")
        result = population_fit(self.sigma0, model_a)
        self.assertTrue(result.converged)
        self.assertGreater(result.contrast, 1e-3)

    def test_simulated_path(self):
        system = load_system(config.resolve_fixture("small_true", "systems"))
        sample = simulate_observations(system, SamplingGrid(2000, 1e-3), 21)
        q = realized_cov(sample)
        result = fit(q, self.mask)
        self.assertTrue(result.converged)
        self.assertTrue(self.mask.within_bounds(result.theta_hat))
        self.assertGreaterEqual(result.contrast, 0.0)
        self.assertIsNotNone(result.se)
        self.assertTrue(np.all(result.se > 0.0))
        self.assertTrue(result.latent_pd)
        self.assertFalse(result.fallback_identity_v)
        self.assertEqual(result.n, 2000)

    def test_multistart(self):
        result = fit(RealizedCov(self.sigma0, 10000, 10.0), self.mask, multistart=2, rng=np.random.default_rng(1))
        self.assertEqual(result.starts, 3)
        self.assertTrue(result.converged)

    def test_line_search_settings_are_forwarded(self):
        q = RealizedCov(self.sigma0, 10000, 10.0)
        with patch("hfsem.qmle.minimize_box", wraps=minimize_box) as spy:
            result = fit(q, self.mask, c1=0.3, max_backtracks=7)
        self.assertTrue(result.converged)
        self.assertEqual(spy.call_args.kwargs["c1"], 0.3)
        self.assertEqual(spy.call_args.kwargs["max_backtracks"], 7)

    def test_start_outside_box(self):
        theta = self.mask.theta_true.copy()
        theta[self.mask.labels.index("See[2,2]")] = 500.0
        with self.assertRaises(DomainError):
            fit(RealizedCov(self.sigma0, 100, 1.0), self.mask, theta)

    def test_to_dict_handles_non_finite(self):
        result = FitResult(
            model="m", labels=("a",), theta_hat=np.array([1.0]), contrast=float("inf"), loglik=None,
            converged=False, iterations=0, grad_norm=float("inf"), fallback_identity_v=False, n=1, T=1.0,
        )
        payload = result.to_dict()
        self.assertIsNone(payload["contrast"])
        self.assertIsNone(payload["grad_norm"])
        self.assertEqual(payload["theta"], {"a": 1.0})


class TestStandardErrors(unittest.TestCase):
    """漸近標準誤差のテストクラス"""

    @classmethod
    def setUpClass(cls):
        cls.mask = load_fixture_mask("small_correct")

    def test_matches_direct_inverse(self):
        theta = self.mask.theta_true
        n = 10000
        delta = sigma_jacobian(self.mask, theta).delta
        w = asymcov_w(build_sigma(self.mask, theta))
        covariance = np.linalg.inv(delta.T @ np.linalg.solve(w, delta))
        expected = np.sqrt(np.diag(covariance) / n)
        np.testing.assert_allclose(asymptotic_se(self.mask, theta, n), expected, rtol=1e-6)

    def test_reference_values_at_truth(self):
        se = asymptotic_se(self.mask, self.mask.theta_true, 10000)
        self.assertAlmostEqual(se[self.mask.labels.index("Lx1[2,1]")], 0.026, delta=6e-4)
        self.assertAlmostEqual(se[self.mask.labels.index("See[2,2]")], 0.343, delta=0.002)

    def test_not_converged(self):
        result = FitResult(
            model="m", labels=self.mask.labels, theta_hat=self.mask.theta_true, contrast=0.0, loglik=None,
            converged=False, iterations=0, grad_norm=1.0, fallback_identity_v=False, n=100, T=1.0,
        )
        with self.assertRaises(DomainError):
            standard_errors(result, self.mask)

    def test_unidentified_model(self):
        payload = {
            "dims": {"p1": 3, "p2": 0, "k1": 1, "k2": 0},
            "matrices": {
                "Lx1": [["free"], ["free"], ["free"]],
                "Sxx": [["free"]],
                "Sdd": {"diag": ["free", "free", "free"]},
            },
        }
        mask = mask_from_dict(payload)
        with self.assertRaises(ModelError):
            asymptotic_se(mask, [1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 1.0], 100)


if __name__ == '__main__':
    unittest.main()
