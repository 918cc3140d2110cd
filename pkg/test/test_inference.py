"""
適合度検定のテスト
このモジュールは、hfsem.inference の機能をテストします。
"""

import unittest

import numpy as np
import scipy.stats

import config
import utils
from hfsem.errors import ConsistencyError, DomainError, TestUndefinedError
from hfsem.inference import (
    chi2_plotting_quantiles,
    chi2_sf,
    chi2_upper_quantile,
    gof_test,
    likelihood_ratio,
    penalized_gof_test,
)
from hfsem.lisrel_model import build_sigma, mask_from_dict
from hfsem.qmle import FitResult, contrast_f, fit
from hfsem.realized_cov import RealizedCov


def load_fixture_mask(name):
    return mask_from_dict(utils.read_json(config.resolve_fixture(name, "models")))


def manual_fit(mask, contrast, n, converged=True):
    return FitResult(
        model=mask.name, labels=mask.labels, theta_hat=mask.theta_true, contrast=contrast, loglik=None,
        converged=converged, iterations=1, grad_norm=0.0, fallback_identity_v=False, n=n, T=1.0,
    )


class TestChi2Quantile(unittest.TestCase):
    """χ² 分位点のテストクラス"""

    def test_against_scipy(self):
        for df in (1, 2, 6, 15, 64, 300):
            for alpha in (0.001, 0.01, 0.05, 0.5, 0.95):
                with self.subTest(df=df, alpha=alpha):
                    expected = scipy.stats.chi2.isf(alpha, df)
                    self.assertAlmostEqual(chi2_upper_quantile(df, alpha) / expected, 1.0, delta=1e-9)

    def test_reference_values(self):
        self.assertAlmostEqual(chi2_upper_quantile(1, 0.5), 0.454936, places=6)
        self.assertAlmostEqual(chi2_upper_quantile(6, 0.05), 12.5916, places=4)

    def test_survival_function(self):
        self.assertAlmostEqual(chi2_sf(chi2_upper_quantile(6, 0.05), 6), 0.05, places=10)

    def test_invalid_arguments(self):
        for df, alpha in ((0, 0.05), (-1, 0.05), (3, 0.0), (3, 1.0), (3, 1.5)):
            with self.subTest(df=df, alpha=alpha):
                with self.assertRaises(DomainError):
                    chi2_upper_quantile(df, alpha)

    def test_plotting_quantiles(self):
        values = chi2_plotting_quantiles(6, 10)
        self.assertEqual(values.shape, (10,))
        self.assertTrue(np.all(np.diff(values) > 0.0))
        self.assertAlmostEqual(values[0], scipy.stats.chi2.ppf(0.05, 6), places=8)


class TestGofTest(unittest.TestCase):
    """擬似尤度比検定のテストクラス"""

    @classmethod
    def setUpClass(cls):
        cls.mask = load_fixture_mask("small_correct")
        cls.sigma0 = build_sigma(cls.mask, cls.mask.theta_true)

    def test_statistic_and_df(self):
        q = RealizedCov(self.sigma0, 1000, 1.0)
        report = gof_test(q, manual_fit(self.mask, 0.01, 1000), self.mask)
        self.assertAlmostEqual(report.statistic, 10.0)
        self.assertEqual(report.df, 6)
        self.assertAlmostEqual(report.critical, 12.5916, places=4)
        self.assertFalse(report.reject)
        self.assertEqual(report.kind, "plain")

    def test_rejects_large_statistic(self):
        q = RealizedCov(self.sigma0, 1000, 1.0)
        report = gof_test(q, manual_fit(self.mask, 0.5, 1000), self.mask, alpha=0.01)
        self.assertTrue(report.reject)
        self.assertLess(report.p_value, 0.01)

    def test_not_converged(self):
        q = RealizedCov(self.sigma0, 1000, 1.0)
        with self.assertRaises(ConsistencyError):
            gof_test(q, manual_fit(self.mask, 0.0, 1000, converged=False), self.mask)

    def test_saturated_model(self):
        payload = {
            "dims": {"p1": 1, "p2": 0, "k1": 1, "k2": 0},
            "matrices": {"Lx1": [[1]], "Sxx": [["free"]], "Sdd": [[1]]},
        }
        mask = mask_from_dict(payload)
        q = RealizedCov(np.array([[3.0]]), 100, 1.0)
        result = fit(q, mask, [1.0])
        with self.assertRaises(TestUndefinedError):
            gof_test(q, result, mask)

    def test_likelihood_ratio_equals_scaled_contrast(self):
        Q = self.sigma0 + 0.05 * np.eye(6)
        q = RealizedCov(Q, 500, 0.5)
        result = manual_fit(self.mask, contrast_f(q, self.mask, self.mask.theta_true), 500)
        self.assertAlmostEqual(likelihood_ratio(q, result, self.mask) / (500 * result.contrast), 1.0, delta=1e-9)

    def test_likelihood_ratio_requires_pd_q(self):
        q = RealizedCov(np.zeros((6, 6)), 10, 1.0)
        with self.assertRaises(DomainError):
            likelihood_ratio(q, manual_fit(self.mask, 0.0, 10), self.mask)


class TestPenalizedGofTest(unittest.TestCase):
    """罰則付き検定のテストクラス"""

    @classmethod
    def setUpClass(cls):
        cls.mask = load_fixture_mask("sparse_correct")
        cls.q = RealizedCov(build_sigma(cls.mask, cls.mask.theta_true), 10000, 1.0)

    def test_df_uses_active_set(self):
        report = penalized_gof_test(self.q, manual_fit(self.mask, 0.008, 10000), 33, self.mask)
        self.assertEqual(report.df, self.mask.p_bar - 33)
        self.assertEqual(report.kind, "penalized")
        self.assertAlmostEqual(report.statistic, 80.0)

    def test_full_active_set_is_undefined(self):
        with self.assertRaises(TestUndefinedError):
            penalized_gof_test(self.q, manual_fit(self.mask, 0.0, 10000), self.mask.p_bar, self.mask)

    def test_negative_active_count(self):
        with self.assertRaises(DomainError):
            penalized_gof_test(self.q, manual_fit(self.mask, 0.0, 10000), -1, self.mask)


if __name__ == '__main__':
    unittest.main()
