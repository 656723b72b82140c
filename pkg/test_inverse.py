import unittest

import numpy as np

from src.errors import ConfigError, InputError
from src.experiments.base_experiment import GAP_FLOOR
from src.fem import BoundaryFunction, Conductivity, RobinSpec, ScalarField, solve_robin
from src.geometry import disk_polygon, partition_boundary, triangulate, unit_square
from src.inverse import (
    CauchyData,
    RecoveryResult,
    add_trace_noise,
    complete_cauchy_data,
    data_misfit,
    discrepancy_sweep,
    gamma_coordinate,
    gap_trend,
    recover_robin,
    recover_robin_from_data,
    uniqueness_gap,
)


def square_problem():
    """u* = 2 − x on the unit square with λ = 1 on the middle of the right side"""
    mesh = triangulate(unit_square(), 0.1)
    part = partition_boundary(mesh, [(1.25, 1.75)])
    x, y = mesh.boundary_points.T
    g = np.where(x == 0.0, 1.0, 0.0) - np.where(x == 1.0, 1.0, 0.0)
    g[(y == 0.0) | (y == 1.0)] *= 0.5
    spec = RobinSpec(Conductivity.constant(mesh, 1.0), part,
                     BoundaryFunction(np.where(part.gamma_mask, 1.0, 0.0), mesh),
                     BoundaryFunction(g, mesh))
    return mesh, spec


def disk_problem(lam=0.5):
    """Γ is the lower half of the 64-gon, g = cos θ on the upper half"""
    mesh = triangulate(disk_polygon(64), 0.1)
    L = mesh.perimeter
    part = partition_boundary(mesh, [(0.5 * L, L)])
    x, y = mesh.boundary_points.T
    spec = RobinSpec(Conductivity.constant(mesh, 1.0), part,
                     BoundaryFunction(np.where(part.gamma_mask, lam, 0.0), mesh),
                     BoundaryFunction(np.cos(np.arctan2(y, x)), mesh))
    return mesh, spec


class TestRecovery(unittest.TestCase):

    def test_linear_solution_gives_unit_lambda(self):
        """u* = 2 − x with Γ on the right side gives λ̂ = 1."""
        mesh, spec = square_problem()
        u = solve_robin(spec, mesh)
        res = recover_robin(u, spec.sigma, spec.partition)
        np.testing.assert_allclose(res.lambda_hat.values[res.trusted], 1.0, atol=1e-10)
        self.assertEqual(res.masked_fraction, 0.0)

    def test_disk_constant_lambda(self):
        """λ = 0.7 on the lower half of the disk is recovered within 2%."""
        mesh, spec = disk_problem(0.7)
        u = solve_robin(spec, mesh)
        res = recover_robin(u, spec.sigma, spec.partition)
        self.assertLess(res.error_against(spec.lam), 0.02)
        self.assertLess(res.masked_fraction, 0.5)

    def test_vanishing_trace(self):
        """u ≡ 0 on Γ leaves λ undetermined."""
        mesh, spec = square_problem()
        u = solve_robin(spec.with_g(spec.g.scaled(0.0)), mesh)
        with self.assertRaises(InputError):
            recover_robin(u, spec.sigma, spec.partition)

    def test_floor_relative_to_gamma(self):
        """A trace small on Γ but large on Γ₀ is not masked: λ̂ = 1/0.001 for u = 1.001 − x."""
        mesh, spec = square_problem()
        u = ScalarField.from_function(mesh, lambda x, y: 1.001 - x)
        res = recover_robin(u, spec.sigma, spec.partition)
        self.assertEqual(res.masked_fraction, 0.0)
        np.testing.assert_allclose(res.lambda_hat.values[res.trusted], 1000.0, rtol=1e-8)

    def test_error_is_weighted_l2(self):
        """One bad node moves the L² error by its share of Γ, not by its size."""
        mesh, spec = disk_problem(1.0)
        gm = spec.partition.gamma_mask
        lam = spec.lam.values.copy()
        k = np.flatnonzero(gm)[len(np.flatnonzero(gm)) // 2]
        lam[k] = 3.0
        res = RecoveryResult(BoundaryFunction(lam, mesh), ~gm, gamma_mask=gm)
        w = mesh.boundary_weights
        expected = np.sqrt(4.0 * w[k] / w[gm].sum())
        self.assertAlmostEqual(res.error_against(spec.lam), expected, places=12)
        self.assertLess(res.error_against(spec.lam), 2.0)

    def test_series_fit(self):
        """The Legendre fit of −σ∂ₙu/u returns λ = 1 for u* = 2 − x."""
        mesh, spec = square_problem()
        u = solve_robin(spec, mesh)
        res = recover_robin(u, spec.sigma, spec.partition, degree=2)
        np.testing.assert_allclose(res.lambda_hat.values[spec.partition.gamma_mask], 1.0, atol=1e-10)
        self.assertEqual(res.degree, 2)

    def test_gamma_coordinate(self):
        """Γ arclength runs from −1 to 1 in loop order and is undefined on Γ₀."""
        mesh, spec = disk_problem()
        t = gamma_coordinate(mesh, spec.partition)
        gm = spec.partition.gamma_mask
        self.assertTrue(np.all(np.isnan(t[~gm])))
        self.assertAlmostEqual(np.nanmin(t), -1.0)
        self.assertAlmostEqual(np.nanmax(t), 1.0)
        self.assertTrue(np.all(np.diff(t[spec.partition.gamma_nodes]) > 0))


class TestNoisyRecovery(unittest.TestCase):

    def check(self, mesh, spec, seeds=(0, 1, 2)):
        u = solve_robin(spec, mesh)
        exact = CauchyData.from_solution(u, spec)
        for seed in seeds:
            data = add_trace_noise(exact, 0.01, np.random.default_rng(seed))
            res = recover_robin_from_data(mesh, spec.sigma, spec.partition, data, 0.01)
            with self.subTest(seed=seed):
                self.assertLessEqual(res.error_against(spec.lam), 0.2)
                self.assertIsNotNone(res.misfit)
                self.assertIsNotNone(res.regularization)
                self.assertLess(res.misfit, 0.05)

    def test_square_unit_lambda(self):
        """λ = 1 on the square survives 1% trace noise within 20%."""
        self.check(*square_problem())

    def test_disk_linear_lambda(self):
        """λ = 1 + x/2 on the lower half disk survives 1% trace noise within 20%."""
        mesh, spec = disk_problem()
        x = mesh.boundary_points[:, 0]
        lam = np.where(spec.partition.gamma_mask, 1.0 + 0.5 * x, 0.0)
        self.check(mesh, spec.with_lambda(BoundaryFunction(lam, mesh)))

    def test_noiseless_within_two_percent(self):
        """Exact data recovers a smooth λ in [0.2, 2] within 2%."""
        mesh, spec = disk_problem()
        t = np.nan_to_num(gamma_coordinate(mesh, spec.partition))
        lam = np.where(spec.partition.gamma_mask, np.exp(0.5 * t - 0.3 * t ** 2), 0.0)
        spec = spec.with_lambda(BoundaryFunction(lam, mesh))
        data = CauchyData.from_solution(solve_robin(spec, mesh), spec)
        res = recover_robin_from_data(mesh, spec.sigma, spec.partition, data)
        self.assertLess(res.error_against(spec.lam), 0.02)

    def test_completion_records_regularization(self):
        """recover_robin keeps the misfit and reg of the completion it was given."""
        mesh, spec = square_problem()
        data = CauchyData.from_solution(solve_robin(spec, mesh), spec)
        u = complete_cauchy_data(mesh, spec.sigma, spec.partition, data, 1e-8)
        res = recover_robin(u, spec.sigma, spec.partition, data=data, reg=1e-8)
        self.assertEqual(res.regularization, 1e-8)
        self.assertAlmostEqual(res.misfit, data_misfit(u, spec.sigma, data))


class TestCompletion(unittest.TestCase):

    def setUp(self):
        self.mesh, self.spec = square_problem()
        self.u = solve_robin(self.spec, self.mesh)
        self.data = CauchyData.from_solution(self.u, self.spec)

    def test_data_vanish_off_gamma0(self):
        """Cauchy data is restricted to Γ₀."""
        gm = self.spec.partition.gamma_mask
        np.testing.assert_array_equal(self.data.trace.values[gm], 0.0)
        self.assertLess(data_misfit(self.u, self.spec.sigma, self.data), 1e-10)

    def test_exact_data_recovers_lambda(self):
        """Completed noiseless data gives λ̂ within 2% of 1 on Γ."""
        u = complete_cauchy_data(self.mesh, self.spec.sigma, self.spec.partition, self.data)
        self.assertLess(data_misfit(u, self.spec.sigma, self.data), 1e-3)
        res = recover_robin(u, self.spec.sigma, self.spec.partition)
        self.assertLess(res.error_against(self.spec.lam), 0.02)

    def test_zero_data(self):
        """Zero Cauchy data completes to zero."""
        zero = CauchyData(self.data.g.scaled(0.0), self.data.trace.scaled(0.0), self.data.gamma0_mask)
        self.assertTrue(zero.is_zero)
        u = complete_cauchy_data(self.mesh, self.spec.sigma, self.spec.partition, zero)
        np.testing.assert_array_equal(u.values, 0.0)

    def test_negative_regularization(self):
        """Regularization weights are nonnegative."""
        with self.assertRaises(InputError):
            complete_cauchy_data(self.mesh, self.spec.sigma, self.spec.partition, self.data, reg=-1.0)

    def test_noise_only_on_gamma0(self):
        """Trace noise touches Γ₀ nodes and nothing else."""
        noisy = add_trace_noise(self.data, 0.05, np.random.default_rng(3))
        m0 = self.data.gamma0_mask
        np.testing.assert_array_equal(noisy.trace.values[~m0], 0.0)
        self.assertTrue(np.all(noisy.trace.values[m0] != self.data.trace.values[m0]))
        np.testing.assert_array_equal(noisy.g.values, self.data.g.values)

    def test_discrepancy_sweep(self):
        """The sweep walks down from the largest regularization and returns one it tried."""
        noisy = add_trace_noise(self.data, 0.01, np.random.default_rng(0))
        reg, u, rows = discrepancy_sweep(self.mesh, self.spec.sigma, self.spec.partition, noisy, 0.01)
        self.assertEqual(rows[0].reg, 1.0)
        self.assertIn(reg, [r.reg for r in rows])
        self.assertTrue(all(a.reg > b.reg for a, b in zip(rows, rows[1:])))
        self.assertEqual(u.values.shape, (self.mesh.n_nodes,))


class TestUniqueness(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.mesh, cls.spec = disk_problem(0.5)

    def test_identical_lambda(self):
        """The same λ gives no gap."""
        self.assertLessEqual(uniqueness_gap(self.spec, self.spec, self.mesh), 1e-12)

    def test_different_lambda(self):
        """λ = 0.5 and λ = 1 are told apart on the upper half."""
        other = self.spec.with_lambda(self.spec.lam.scaled(2.0))
        self.assertGreater(uniqueness_gap(self.spec, other, self.mesh), 1e-3)
        self.assertGreater(uniqueness_gap(self.spec, other, self.mesh, symmetric=True), 1e-3)

    def test_pair_must_share_sigma(self):
        """Gaps only compare problems with the same σ, partition and g."""
        other = RobinSpec(Conductivity.constant(self.mesh, 2.0), self.spec.partition, self.spec.lam, self.spec.g)
        with self.assertRaises(ConfigError):
            uniqueness_gap(self.spec, other, self.mesh)

    def test_trend(self):
        """The gap grows with the support of the λ perturbation."""
        rows = gap_trend(self.spec, self.mesh, sizes=(2, 8))
        self.assertEqual([r.nodes for r in rows], [2, 8])
        self.assertGreater(rows[0].gap, 0.0)
        self.assertGreater(rows[1].gap, rows[0].gap)
        self.assertGreater(rows[1].arc_length, rows[0].arc_length)

    def test_trend_ten_pairs(self):
        """Ten nested perturbations from 2 nodes to half of Γ all clear 10× the floor and grow with arc length."""
        n_gamma = len(self.spec.partition.gamma_nodes)
        sizes = np.unique(np.linspace(2, n_gamma // 2, 10).round().astype(int))
        rows = gap_trend(self.spec, self.mesh, sizes=sizes)
        self.assertEqual(len(rows), len(sizes))
        self.assertTrue(all(r.gap > 10.0 * GAP_FLOOR for r in rows))
        arcs = [r.arc_length for r in rows]
        gaps = [r.gap for r in rows]
        self.assertEqual(arcs, sorted(arcs))
        self.assertTrue(all(b >= a for a, b in zip(gaps, gaps[1:])), gaps)


if __name__ == '__main__':
    unittest.main()
