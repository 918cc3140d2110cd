"""
モンテカルロ実験のテスト
このモジュールは、hfsem.harness の機能をテストします。
"""

import csv
import os
import tempfile
import unittest
from unittest.mock import patch

import numpy as np

import utils
from hfsem.errors import ConfigError, HarnessError
from hfsem.harness import (
    DATA_MODEL,
    SUMMARY_HEADER,
    describe,
    emit_tables,
    experiment_from_dict,
    load_experiment,
    replication_spawn_keys,
    run_experiment,
    run_replication,
    vech_names,
)
from hfsem.qmle import FitResult
from hfsem.sde_sim import euler_maruyama, simulate_observations, stream_rng


def small_payload(**changes):
    payload = {
        "name": "tiny",
        "true_model": "small_true",
        "fit_models": ["small_correct", "small_model_a"],
        "grid": {"n": 500, "h": 0.001},
        "replications": 4,
        "seed": 3,
        "alpha": 0.05,
        "failure_ratio": 1.0,
    }
    payload.update(changes)
    return payload


class TestExperimentConfig(unittest.TestCase):
    """実験設定のテストクラス"""

    def test_from_dict(self):
        cfg = experiment_from_dict(small_payload())
        self.assertEqual(cfg.name, "tiny")
        self.assertEqual([m.name for m in cfg.fit_models], ["small_correct", "small_model_a"])
        self.assertEqual(cfg.grid.n, 500)
        self.assertEqual(cfg.system.p, 6)

    def test_overrides_win(self):
        cfg = experiment_from_dict(small_payload(), overrides={"replications": 9, "seed": 11, "alpha": None})
        self.assertEqual((cfg.replications, cfg.seed, cfg.alpha), (9, 11, 0.05))

    def test_invalid_values(self):
        cases = [
            small_payload(replications=0),
            small_payload(alpha=1.5),
            small_payload(seed=-1),
            small_payload(regime_label="weekly"),
            small_payload(fit_models=[]),
            small_payload(fit_models=["small_correct", "small_correct"]),
            small_payload(fit_models=["no_such_model"]),
            small_payload(support_from="oracle"),
            {"true_model": "small_true"},
        ]
        for payload in cases:
            with self.subTest(payload=payload):
                with self.assertRaises(ConfigError):
                    experiment_from_dict(payload)

    def test_dimension_mismatch(self):
        with self.assertRaises(ConfigError):
            experiment_from_dict(small_payload(fit_models=["sparse_correct"]))

    def test_load_experiment_fixture(self):
        cfg = load_experiment("small_nonergodic", overrides={"replications": 2})
        self.assertEqual(cfg.replications, 2)
        self.assertEqual(cfg.grid.n, 10000)
        self.assertEqual(cfg.seed, 20240501)

    def test_load_missing_experiment(self):
        with self.assertRaises(ConfigError):
            load_experiment("does_not_exist")

    def test_to_dict_excludes_runtime_options(self):
        payload = experiment_from_dict(small_payload()).to_dict()
        self.assertNotIn("threads", payload)
        self.assertNotIn("outputs", payload)
        self.assertEqual(payload["true_model"], "small_true")

    def test_fit_options_carry_line_search_settings(self):
        cfg = experiment_from_dict(small_payload(optimizer={"c1": 0.25, "max_backtracks": 7}))
        options = cfg.fit_options()
        self.assertEqual((options["c1"], options["max_backtracks"]), (0.25, 7))
        self.assertEqual(options["gtol"], 1e-8)

    def test_spawn_keys(self):
        cfg = experiment_from_dict(small_payload())
        self.assertEqual(
            replication_spawn_keys(cfg, 2),
            {"xi": [2, 0], "delta": [2, 1], "eps": [2, 2], "zeta": [2, 3]},
        )
        keys = replication_spawn_keys(experiment_from_dict(small_payload(multistart=1)), 0)
        self.assertEqual(keys["multistart:small_model_a"], [0, 5])

    def test_spawn_keys_reproduce_path(self):
        cfg = experiment_from_dict(small_payload(grid={"n": 5, "h": 0.001}))
        keys = replication_spawn_keys(cfg, 1)
        process = cfg.system.delta
        grid = cfg.grid
        expected = euler_maruyama(process.drift, process.S, process.c, grid, stream_rng(cfg.seed, *keys["delta"]))
        sample = simulate_observations(cfg.system, grid, cfg.seed, replication=1, keep_latent=True)
        np.testing.assert_array_equal(sample.latent["delta"], expected)


class TestHelpers(unittest.TestCase):
    """集計用ヘルパーのテストクラス"""

    def test_describe(self):
        stats = describe([1.0, 2.0, 3.0, 4.0])
        self.assertAlmostEqual(stats["mean"], 2.5)
        self.assertAlmostEqual(stats["sd"], 1.2909944487, places=9)
        self.assertAlmostEqual(stats["q1"], 1.75)
        self.assertAlmostEqual(stats["median"], 2.5)
        self.assertAlmostEqual(stats["q3"], 3.25)
        self.assertEqual((stats["min"], stats["max"]), (1.0, 4.0))

    def test_describe_empty(self):
        self.assertIsNone(describe([])["mean"])

    def test_vech_names(self):
        self.assertEqual(vech_names(2), ["Q[1,1]", "Q[2,1]", "Q[2,2]"])
        self.assertEqual(vech_names(1, "z_Q"), ["z_Q[1,1]"])


class TestRunExperiment(unittest.TestCase):
    """実験の実行のテストクラス"""

    @classmethod
    def setUpClass(cls):
        cls.cfg = experiment_from_dict(small_payload())
        cls.report = run_experiment(cls.cfg, threads=1)

    def test_replication_is_deterministic(self):
        first = run_replication(self.cfg, 2)
        second = run_replication(self.cfg, 2)
        self.assertEqual(first.values, second.values)

    def test_threads_do_not_change_results(self):
        parallel = run_experiment(self.cfg, threads=2)
        self.assertEqual(parallel.estimates, self.report.estimates)
        self.assertEqual([r.statistic for _, r in parallel.tests], [r.statistic for _, r in self.report.tests])

    def test_records(self):
        row = self.report.summary_row(DATA_MODEL, "Q[1,1]")
        self.assertEqual(row.count, 4)
        self.assertAlmostEqual(row.theory_mean, 3.0)
        t_row = self.report.summary_row("small_correct", "T_n")
        self.assertEqual(t_row.theory_mean, 6.0)
        self.assertAlmostEqual(t_row.theory_sd, np.sqrt(12.0))
        a_row = self.report.summary_row("small_model_a", "T_n")
        self.assertIsNotNone(a_row.theory_mean)
        self.assertGreater(a_row.theory_mean, 6.0)

    def test_rejections(self):
        entry = self.report.rejections["small_model_a:plain"]
        self.assertEqual(entry["count"] + sum(1 for _, m, _ in self.report.failures if m == "small_model_a"), 4)
        self.assertGreaterEqual(entry["rate"], 0.0)

    def test_emit_tables(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = emit_tables(self.report, tmp)
            self.assertEqual(sorted(os.path.basename(p) for p in paths),
                             ["estimates.csv", "qq.csv", "run.json", "summary.csv", "tests.csv"])
            with open(os.path.join(tmp, "summary.csv"), newline="", encoding="utf-8") as handle:
                rows = list(csv.reader(handle))
            self.assertEqual(rows[0], SUMMARY_HEADER)
            with open(os.path.join(tmp, "tests.csv"), newline="", encoding="utf-8") as handle:
                header = next(csv.reader(handle))
            self.assertEqual(header, ["rep", "model", "kind", "statistic", "df", "critical", "p_value", "reject"])
            manifest = utils.read_json(os.path.join(tmp, "run.json"))
            self.assertEqual(manifest["base_seed"], 3)
            self.assertEqual(len(manifest["replication_seeds"]), 4)
            self.assertEqual(manifest["replication_seeds"][3]["spawn_keys"]["zeta"], [3, 3])
            self.assertNotIn("threads", manifest["config"])
            self.assertIn("numpy", manifest["versions"])


class TestFailureHandling(unittest.TestCase):
    """失敗の扱いのテストクラス"""

    @staticmethod
    def _failed_fit(q, mask, theta_init=None, **kwargs):
        return FitResult(
            model=mask.name, labels=mask.labels, theta_hat=mask.theta_init, contrast=1.0, loglik=None,
            converged=False, iterations=0, grad_norm=1.0, fallback_identity_v=False, n=q.n, T=q.T,
            message="forced",
        )

    def test_failures_are_excluded(self):
        cfg = experiment_from_dict(small_payload(replications=2))
        with patch("hfsem.harness.fit", side_effect=self._failed_fit):
            report = run_experiment(cfg, threads=1)
        self.assertEqual(report.failed_replications, 2)
        self.assertIsNone(report.summary_row("small_correct", "T_n"))
        self.assertIsNotNone(report.summary_row(DATA_MODEL, "Q[1,1]"))

    def test_too_many_failures(self):
        cfg = experiment_from_dict(small_payload(replications=2, failure_ratio=0.0))
        with patch("hfsem.harness.fit", side_effect=self._failed_fit):
            with self.assertRaises(HarnessError) as ctx:
                run_experiment(cfg, threads=1)
        self.assertEqual(len(ctx.exception.failures), 4)


if __name__ == '__main__':
    unittest.main()
