import unittest

import numpy as np

from src.errors import CoefficientError, CompatibilityError, InputError
from src.fem import (
    BoundaryFunction,
    Conductivity,
    RobinSpec,
    ScalarField,
    boundary_load,
    conjugate_tolerance,
    conormal_flux,
    disk_series_oracle,
    flux_balance,
    is_symmetric_positive_definite,
    l2_norm,
    normal_derivative,
    robin_energy_norm,
    robin_system,
    sigma_conjugate,
    solve_neumann,
    solve_robin,
    stiffness_matrix,
    tangential_derivative,
    w12_norm,
)
from src.geometry import disk_mesh, disk_polygon, partition_boundary, triangulate, unit_square


def square_robin(h=0.1):
    """u* = 2 − x on the unit square: λ = 1 on the middle of the right side.

    Corner data is the average of the two adjacent side fluxes so that the
    lumped load is the exact Galerkin load of u*.
    """
    mesh = triangulate(unit_square(), h)
    part = partition_boundary(mesh, [(1.25, 1.75)])
    x, y = mesh.boundary_points.T
    g = np.where(x == 0.0, 1.0, 0.0) - np.where(x == 1.0, 1.0, 0.0)
    g[(y == 0.0) | (y == 1.0)] *= 0.5
    sigma = Conductivity.constant(mesh, 1.0)
    lam = BoundaryFunction(np.where(part.gamma_mask, 1.0, 0.0), mesh)
    return mesh, RobinSpec(sigma, part, lam, BoundaryFunction(g, mesh))


class TestConductivity(unittest.TestCase):

    def test_rejects_nonpositive(self):
        """σ must be positive at every node."""
        with self.assertRaises(CoefficientError):
            Conductivity(np.array([1.0, -0.5, 2.0]))

    def test_ellipticity_constant(self):
        """Values outside [c, 1/c] are rejected."""
        with self.assertRaises(CoefficientError):
            Conductivity(np.array([0.1, 1.0]), ellipticity_c=0.5)

    def test_rejects_nonsymmetric_matrix(self):
        """Matrix-valued σ must be symmetric."""
        S = np.array([[[2.0, 0.5], [0.0, 1.0]]])
        with self.assertRaises(CoefficientError):
            Conductivity(S)


class TestNeumann(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.mesh = triangulate(disk_polygon(64), 0.1)
        x, y = cls.mesh.boundary_points.T
        cls.g = BoundaryFunction(np.cos(np.arctan2(y, x)), cls.mesh)

    def test_linear_solution(self):
        """g = cos θ on the 64-gon gives u = x up to the polygon's normal defect."""
        u = solve_neumann(self.mesh, Conductivity.constant(self.mesh, 1.0), self.g)
        x = self.mesh.nodes[:, 0]
        self.assertLess(np.abs(u.values - x).max(), 2e-3)

    def test_convergence_rate(self):
        """u = x from g = cos θ converges at rate ≥ 1.8 in L² over h = 0.2, 0.1, 0.05."""
        errors = []
        for h in (0.2, 0.1, 0.05):
            mesh = disk_mesh(h)
            x, y = mesh.boundary_points.T
            u = solve_neumann(mesh, Conductivity.constant(mesh, 1.0), BoundaryFunction(np.cos(np.arctan2(y, x)), mesh))
            exact = ScalarField.from_function(mesh, lambda x, y: x)
            errors.append(l2_norm(u - exact) / l2_norm(exact))
        rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        self.assertTrue(np.all(rates >= 1.8), rates)
        self.assertLessEqual(errors[-1], 1e-3)

    def test_quadrature_load(self):
        """Callable side fluxes on the square reproduce u = x − 1/2 without corner averaging."""
        mesh = triangulate(unit_square(), 0.1)
        sigma = Conductivity.constant(mesh, 1.0)
        flux = lambda x, y: (x == 1.0).astype(float) - (x == 0.0).astype(float)
        load = boundary_load(mesh, flux)
        self.assertAlmostEqual(load.sum(), 0.0, delta=1e-14)
        self.assertAlmostEqual(np.abs(load).sum(), 2.0, delta=1e-12)
        u = solve_neumann(mesh, sigma, flux)
        np.testing.assert_allclose(u.values, mesh.nodes[:, 0] - 0.5, atol=1e-10)

    def test_zero_data(self):
        """g ≡ 0 gives u ≡ 0."""
        u = solve_neumann(self.mesh, Conductivity.constant(self.mesh, 1.0), self.g.scaled(0.0))
        np.testing.assert_allclose(u.values, 0.0, atol=1e-14)

    def test_conormal_scaling(self):
        """With flux data σ ≡ 2 halves the solution; with ∂ₙu data it does not."""
        one = Conductivity.constant(self.mesh, 1.0)
        two = Conductivity.constant(self.mesh, 2.0)
        u1 = solve_neumann(self.mesh, one, self.g)
        np.testing.assert_allclose(solve_neumann(self.mesh, two, self.g, conormal=True).values,
                                   0.5 * u1.values, atol=1e-12)
        np.testing.assert_allclose(solve_neumann(self.mesh, two, self.g).values, u1.values, atol=1e-12)

    def test_incompatible_data(self):
        """Constant outward flux cannot be balanced."""
        with self.assertRaises(CompatibilityError):
            solve_neumann(self.mesh, Conductivity.constant(self.mesh, 1.0), self.g.with_values(np.ones_like(self.g.values)))

    def test_flux_against_sigma_vanishes(self):
        """⟨∂ₙu, σ⟩ = 0 for a Neumann solution."""
        sigma = Conductivity.from_function(self.mesh, lambda x, y: 1.0 + 0.5 * np.exp(-4 * (x ** 2 + y ** 2)))
        u = solve_neumann(self.mesh, sigma, self.g)
        dn = normal_derivative(u, sigma)
        total = np.dot(dn.weights, dn.values * sigma.boundary_values(self.mesh))
        self.assertLess(abs(total), 1e-8 * dn.l2_norm())


class TestRobin(unittest.TestCase):

    def setUp(self):
        self.mesh, self.spec = square_robin()

    def test_manufactured_linear(self):
        """The discrete solution reproduces u* = 2 − x."""
        u = solve_robin(self.spec, self.mesh)
        np.testing.assert_allclose(u.values, 2.0 - self.mesh.nodes[:, 0], atol=1e-10)

    def test_flux_balance(self):
        """∫_Γ λu = ∫_Γ₀ g."""
        u = solve_robin(self.spec, self.mesh)
        lhs, rhs = flux_balance(u, self.spec)
        self.assertAlmostEqual(lhs, rhs, delta=1e-8 * max(abs(rhs), 1.0))

    def test_linearity(self):
        """Doubling g doubles u; g ≡ 0 gives u ≡ 0."""
        u = solve_robin(self.spec, self.mesh)
        u2 = solve_robin(self.spec.with_g(self.spec.g.scaled(2.0)), self.mesh)
        np.testing.assert_allclose(u2.values, 2.0 * u.values, rtol=1e-12, atol=1e-13)
        u0 = solve_robin(self.spec.with_g(self.spec.g.scaled(0.0)), self.mesh)
        np.testing.assert_allclose(u0.values, 0.0, atol=1e-14)

    def test_system_spd(self):
        """The Robin system matrix is symmetric positive definite."""
        A, _ = robin_system(self.spec, self.mesh)
        self.assertTrue(is_symmetric_positive_definite(A))

    def test_random_specs(self):
        """Twenty random problems give SPD systems and a balanced flux."""
        rng = np.random.default_rng(7)
        mesh = triangulate(unit_square(), 0.2)
        nb = len(mesh.boundary_nodes)
        for k in range(20):
            start = rng.uniform(0.0, 3.0)
            part = partition_boundary(mesh, [(start, start + rng.uniform(0.4, 1.0))])
            sigma = Conductivity(rng.uniform(0.5, 2.0, mesh.n_nodes))
            lam = BoundaryFunction(rng.uniform(0.1, 2.0, nb), mesh)
            spec = RobinSpec(sigma, part, lam, BoundaryFunction(rng.standard_normal(nb), mesh))
            with self.subTest(case=k):
                A, _ = robin_system(spec, mesh)
                self.assertTrue(is_symmetric_positive_definite(A))
                lhs, rhs = flux_balance(solve_robin(spec, mesh), spec)
                self.assertAlmostEqual(lhs, rhs, delta=1e-8 * max(abs(lhs), abs(rhs), 1.0))

    def test_lambda_sign(self):
        """λ must be nonnegative and not identically zero on Γ."""
        with self.assertRaises(CoefficientError):
            self.spec.with_lambda(self.spec.lam.scaled(-1.0))
        with self.assertRaises(CoefficientError):
            self.spec.with_lambda(self.spec.lam.scaled(0.0))

    def test_g_zeroed_on_gamma(self):
        """Flux data is dropped on Γ."""
        np.testing.assert_array_equal(self.spec.g.values[self.spec.partition.gamma_mask], 0.0)

    def test_energy_norm_scaling(self):
        """Scaling λ by 4 scales the squared Γ term by 4."""
        u = solve_robin(self.spec, self.mesh)
        k = u.values @ (stiffness_matrix(self.mesh, self.spec.sigma) @ u.values)
        e1 = robin_energy_norm(u, self.spec.sigma, self.spec.lam, self.spec.partition) ** 2 - k
        e4 = robin_energy_norm(u, self.spec.sigma, self.spec.lam.scaled(4.0), self.spec.partition) ** 2 - k
        self.assertAlmostEqual(e4, 4.0 * e1, delta=1e-10)
        self.assertEqual(robin_energy_norm(u.scaled(0.0), self.spec.sigma, self.spec.lam, self.spec.partition), 0.0)


class TestBoundaryQuantities(unittest.TestCase):

    def setUp(self):
        self.mesh = triangulate(unit_square(), 0.1)
        self.sigma = Conductivity.constant(self.mesh, 1.0)
        self.u = ScalarField.from_function(self.mesh, lambda x, y: x)

    def test_normal_derivative_of_x(self):
        """∂ₙx is 1 on the right side and −1 on the left, away from corners."""
        dn = normal_derivative(self.u, self.sigma).values
        x, y = self.mesh.boundary_points.T
        inner = (y > 0.0) & (y < 1.0)
        np.testing.assert_allclose(dn[inner & (x == 1.0)], 1.0, atol=1e-12)
        np.testing.assert_allclose(dn[inner & (x == 0.0)], -1.0, atol=1e-12)

    def test_constant_has_no_flux(self):
        """Constants have zero conormal flux."""
        c = ScalarField.from_function(self.mesh, lambda x, y: 3.0)
        np.testing.assert_allclose(conormal_flux(c, self.sigma).values, 0.0, atol=1e-12)

    def test_tangential_derivative(self):
        """∂_τ x = 1 inside the bottom side, a constant has ∂_τ = 0, and ∫∂_τ = 0 on the loop."""
        dt = tangential_derivative(self.u.trace())
        x, y = self.mesh.boundary_points.T
        bottom = (y == 0.0) & (x > 0.0) & (x < 1.0)
        np.testing.assert_allclose(dt.values[bottom], 1.0, atol=1e-12)
        self.assertAlmostEqual(dt.integral(), 0.0, delta=1e-12)
        flat = tangential_derivative(BoundaryFunction.constant(self.mesh, 2.0))
        np.testing.assert_allclose(flat.values, 0.0)

    def test_conjugate_of_x(self):
        """The σ-conjugate of x for σ ≡ 1 is y, normalized to zero boundary mean."""
        v = sigma_conjugate(self.u, self.sigma)
        np.testing.assert_allclose(v.values, self.mesh.nodes[:, 1] - 0.5, atol=1e-10)

    def test_conjugate_rejects_non_solutions(self):
        """A random field has a σ∇u far from curl-free."""
        rng = np.random.default_rng(0)
        noise = ScalarField(rng.standard_normal(self.mesh.n_nodes), self.mesh)
        with self.assertRaises(InputError):
            sigma_conjugate(noise, self.sigma)

    def test_conjugate_tolerance(self):
        """The gate widens with the mesh size and is capped."""
        fine = conjugate_tolerance(self.mesh)
        coarse = conjugate_tolerance(triangulate(unit_square(), 0.25))
        self.assertGreater(coarse, fine)
        self.assertGreater(fine, 0.25)
        self.assertLessEqual(coarse, 0.75)

    def test_w12_zero(self):
        """‖0‖_{W^{1,2}} = 0."""
        self.assertEqual(w12_norm(self.u.scaled(0.0)), 0.0)


class TestDiskOracle(unittest.TestCase):

    def test_self_convergence(self):
        """Doubling the resolution shrinks the change in the trace."""
        theta = 2.0 * np.pi * np.arange(64) / 64
        split = [(np.pi, 2.0 * np.pi)]
        t = [disk_series_oracle([(1, 1.0)], 1.0, split, K).trace_at(theta) for K in (32, 64, 128)]
        self.assertLess(np.abs(t[2] - t[1]).max(), np.abs(t[1] - t[0]).max())

    def test_fem_agrees(self):
        """FEM on the 64-gon and the disk series agree on the boundary trace."""
        mesh = triangulate(disk_polygon(64), 0.1)
        L = mesh.perimeter
        part = partition_boundary(mesh, [(0.5 * L, L)])
        x, y = mesh.boundary_points.T
        theta = np.mod(np.arctan2(y, x), 2.0 * np.pi)
        spec = RobinSpec(Conductivity.constant(mesh, 1.0), part,
                         BoundaryFunction(np.where(part.gamma_mask, 1.0, 0.0), mesh),
                         BoundaryFunction(np.cos(theta), mesh))
        u = solve_robin(spec, mesh)
        oracle = disk_series_oracle([(1, 1.0)], 1.0, [(np.pi, 2.0 * np.pi)], 128)
        ref = oracle.trace_at(theta)
        self.assertLess(np.abs(u.trace().values - ref).max(), 0.05 * np.abs(ref).max())


if __name__ == '__main__':
    unittest.main()
