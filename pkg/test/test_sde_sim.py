"""
拡散過程シミュレーションのテスト
このモジュールは、hfsem.sde_sim の機能をテストします。
"""

import os
import tempfile
import unittest

import numpy as np

import config
from hfsem.errors import ConfigError, DataError, DimensionError, DomainError, ModelError, SimulationError
from hfsem.sde_sim import (
    DiffusionSystem,
    LatentProcess,
    PathSample,
    SamplingGrid,
    euler_maruyama,
    load_system,
    ou_drift,
    read_path_csv,
    simulate_observations,
    stream_rng,
    system_from_dict,
    write_path_csv,
)


def small_system():
    return load_system(config.resolve_fixture("small_true", "systems"))


class TestSamplingGrid(unittest.TestCase):
    """時間格子のテストクラス"""

    def test_horizon(self):
        grid = SamplingGrid(100, 0.01)
        self.assertAlmostEqual(grid.T, 1.0)
        self.assertEqual(grid.times().shape, (101,))

    def test_invalid(self):
        with self.assertRaises(DomainError):
            SamplingGrid(0, 0.1)
        with self.assertRaises(DomainError):
            SamplingGrid(10, -0.1)
        with self.assertRaises(DomainError):
            SamplingGrid(10, 0.1, T=2.0)


class TestEulerMaruyama(unittest.TestCase):
    """Euler–Maruyama 法のテストクラス"""

    def test_deterministic_decay(self):
        grid = SamplingGrid(3, 0.1)
        path = euler_maruyama(ou_drift([[1.0]], [0.0]), [[0.0]], [1.0], grid, stream_rng(0, 0, 0))
        np.testing.assert_allclose(path[:, 0], [1.0, 0.9, 0.81, 0.729], rtol=1e-14)

    def test_ou_drift_sign(self):
        drift = ou_drift([[2.0, 0.0], [0.0, 1.0]], [2.0, 1.0])
        np.testing.assert_array_equal(drift(np.array([1.0, 1.0])), [0.0, 0.0])
        np.testing.assert_array_equal(drift(np.array([0.0, 0.0])), [2.0, 1.0])

    def test_ou_drift_coupled(self):
        drift = ou_drift([[0.5, 0.3], [0.2, 0.4]], [2.0, 4.0])
        np.testing.assert_allclose(drift(np.array([3.0, 5.0])), [-1.0, 1.4], atol=1e-12)

    def test_ou_drift_shapes(self):
        with self.assertRaises(DimensionError):
            ou_drift([[1.0, 0.0]], [0.0])
        with self.assertRaises(DimensionError):
            ou_drift([[1.0]], [0.0, 1.0])

    def test_non_finite_drift(self):
        grid = SamplingGrid(5, 0.1)
        with self.assertRaises(SimulationError) as ctx:
            euler_maruyama(lambda x: np.full_like(x, np.nan), [[1.0]], [0.0], grid, stream_rng(0, 0, 0))
        self.assertEqual(ctx.exception.step, 1)

    def test_increment_variance(self):
        grid = SamplingGrid(100000, 1e-4)
        path = euler_maruyama(ou_drift([[0.0]], [0.0]), [[2.0]], [0.0], grid, stream_rng(11, 0, 0))
        increments = np.diff(path[:, 0])
        estimate = float(np.sum(increments ** 2) / grid.T)
        # 標本分散/h の標準誤差は 4·√(2/n)
        self.assertLess(abs(estimate - 4.0), 3.0 * 4.0 * np.sqrt(2.0 / grid.n))


class TestStreams(unittest.TestCase):
    """乱数ストリームのテストクラス"""

    def test_reproducible(self):
        a = stream_rng(42, 3, 1).standard_normal(5)
        b = stream_rng(42, 3, 1).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_independent_streams(self):
        a = stream_rng(42, 3, 1).standard_normal(5)
        self.assertFalse(np.array_equal(a, stream_rng(42, 3, 2).standard_normal(5)))
        self.assertFalse(np.array_equal(a, stream_rng(42, 4, 1).standard_normal(5)))


class TestDiffusionSystem(unittest.TestCase):
    """真のモデルのテストクラス"""

    def setUp(self):
        self.system = small_system()

    def test_dimensions(self):
        self.assertEqual((self.system.p1, self.system.p2, self.system.k1, self.system.k2), (4, 2, 2, 1))
        self.assertEqual(self.system.p, 6)

    def test_sigma0(self):
        sigma0 = self.system.sigma0()
        self.assertEqual(sigma0.shape, (6, 6))
        np.testing.assert_allclose(sigma0, sigma0.T)
        self.assertAlmostEqual(sigma0[0, 0], 3.0)
        # Σξξ = [[2,2],[2,4]], Λx1[2,1] = 2
        self.assertAlmostEqual(sigma0[1, 0], 4.0)

    def test_strict_requires_pd_measurement_noise(self):
        zero = LatentProcess(ou_drift(np.eye(4), np.zeros(4)), np.zeros((4, 4)), np.zeros(4))
        kwargs = dict(
            xi=self.system.xi,
            delta=zero,
            eps=self.system.eps,
            zeta=self.system.zeta,
            Lx1=self.system.Lx1,
            Lx2=self.system.Lx2,
            Gamma=self.system.Gamma,
            B=self.system.B,
        )
        with self.assertRaises(ModelError):
            DiffusionSystem(**kwargs)
        relaxed = DiffusionSystem(strict=False, **kwargs)
        self.assertEqual(relaxed.p, 6)

    def test_rank_deficient_loadings(self):
        with self.assertRaises(ModelError):
            DiffusionSystem(
                xi=self.system.xi,
                delta=self.system.delta,
                eps=self.system.eps,
                zeta=self.system.zeta,
                Lx1=np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]),
                Lx2=self.system.Lx2,
                Gamma=self.system.Gamma,
                B=self.system.B,
            )

    def test_missing_process(self):
        with self.assertRaises(ConfigError):
            system_from_dict({"Lx1": [[1]], "Lx2": [[1]], "Gamma": [[1]]})


class TestSimulateObservations(unittest.TestCase):
    """観測過程の生成のテストクラス"""

    @classmethod
    def setUpClass(cls):
        cls.system = small_system()
        cls.grid = SamplingGrid(200, 1e-3)

    def test_same_seed_same_path(self):
        a = simulate_observations(self.system, self.grid, 7, replication=2)
        b = simulate_observations(self.system, self.grid, 7, replication=2)
        np.testing.assert_array_equal(a.X, b.X)
        self.assertEqual(a.X.shape, (201, 6))

    def test_replications_differ(self):
        a = simulate_observations(self.system, self.grid, 7, replication=0)
        b = simulate_observations(self.system, self.grid, 7, replication=1)
        self.assertFalse(np.array_equal(a.X, b.X))

    def test_measurement_equations(self):
        sample = simulate_observations(self.system, self.grid, 3, keep_latent=True)
        latent = sample.latent
        np.testing.assert_allclose(sample.X[:, :4], latent["xi"] @ self.system.Lx1.T + latent["delta"], atol=1e-12)
        np.testing.assert_allclose(sample.X[:, 4:], latent["eta"] @ self.system.Lx2.T + latent["eps"], atol=1e-12)
        np.testing.assert_allclose(sample.X[0, :2], [3.0, 2.0 * 3.0 + 0.0])

    def test_initial_state(self):
        sample = simulate_observations(self.system, self.grid, 3, keep_latent=True)
        np.testing.assert_array_equal(sample.latent["xi"][0], self.system.xi.c)


class TestPathCsv(unittest.TestCase):
    """経路 CSV の入出力のテストクラス"""

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.temp_dir.name, "path.csv")

    def tearDown(self):
        self.temp_dir.cleanup()

    def _write(self, text):
        with open(self.path, "w", encoding="utf-8") as handle:
            handle.write(text)

    def test_round_trip_is_exact(self):
        sample = simulate_observations(small_system(), SamplingGrid(50, 1e-3), 5)
        write_path_csv(sample, self.path)
        loaded = read_path_csv(self.path)
        np.testing.assert_array_equal(loaded.X, sample.X)
        self.assertEqual(loaded.grid.n, 50)
        self.assertAlmostEqual(loaded.grid.h, 1e-3, places=15)

    def test_header(self):
        sample = PathSample(SamplingGrid(1, 1.0), np.zeros((2, 2)))
        write_path_csv(sample, self.path)
        with open(self.path, encoding="utf-8") as handle:
            self.assertEqual(handle.readline().strip(), "t,x1,x2")

    def test_bad_header(self):
        self._write("time,x1\n0,1\n1,2\n")
        with self.assertRaises(DataError):
            read_path_csv(self.path)

    def test_non_finite(self):
        self._write("t,x1\n0,1\n1,nan\n2,3\n")
        with self.assertRaises(DataError) as ctx:
            read_path_csv(self.path)
        self.assertEqual(ctx.exception.row, 2)

    def test_irregular_grid(self):
        self._write("t,x1\n0,1\n1,2\n3,3\n")
        with self.assertRaises(DataError):
            read_path_csv(self.path)


if __name__ == '__main__':
    unittest.main()
