import os
import tempfile
import unittest

import numpy as np

from src.disk_hardy import (
    CircleSeries,
    DiskFunction,
    a2_constant,
    boundary_values,
    circle_nodes,
    conjugate_function,
    hardy_norm,
    hardy_projection,
    hl_maximal,
    holomorphic,
    nontangential_max,
    outer_function,
    poisson_extend,
    read_series,
    weighted_conjugation_ratio,
    write_series,
)
from src.errors import CoefficientError, DomainError


class TestConjugateFunction(unittest.TestCase):

    def test_cos_to_sin(self):
        """The conjugate of cos θ is sin θ."""
        cos = CircleSeries.from_modes([(-1, 0.5), (1, 0.5)], 4)
        conj = conjugate_function(cos)
        np.testing.assert_allclose(conj.samples(), np.sin(circle_nodes(4)), atol=1e-14)

    def test_constant_has_zero_conjugate(self):
        """Constants are killed by the conjugation multiplier."""
        c = CircleSeries.from_modes([(0, 3.0)], 8)
        np.testing.assert_allclose(conjugate_function(c).coefficients, 0.0)

    def test_twice_is_minus_identity_on_mean_zero(self):
        """Conjugating twice returns −(ψ − mean ψ)."""
        psi = CircleSeries.from_function(lambda t: 1.0 + np.cos(2 * t) + 0.3 * np.sin(5 * t), 16)
        twice = conjugate_function(conjugate_function(psi))
        np.testing.assert_allclose(twice.samples(), -(psi.samples() - 1.0), atol=1e-12)

    def test_all_monomials_to_degree_128(self):
        """cos kθ ↦ sin kθ and sin kθ ↦ −cos kθ for every k ≤ 128."""
        theta = circle_nodes(256)
        for k in range(1, 129):
            cos = conjugate_function(CircleSeries.from_function(lambda t: np.cos(k * t), 256))
            sin = conjugate_function(CircleSeries.from_function(lambda t: np.sin(k * t), 256))
            np.testing.assert_allclose(cos.samples().real, np.sin(k * theta), atol=1e-12, err_msg=f"k={k}")
            np.testing.assert_allclose(sin.samples().real, -np.cos(k * theta), atol=1e-12, err_msg=f"k={k}")

    def test_complex_input_rejected(self):
        """Only real-valued series have a real conjugate."""
        with self.assertRaises(CoefficientError):
            conjugate_function(CircleSeries.from_modes([(1, 1.0)], 2))

    def test_weighted_ratio_unit_weight(self):
        """With w ≡ 1 the conjugate of cos θ has the same weighted norm."""
        theta = circle_nodes(16)
        ratio = weighted_conjugation_ratio(np.ones_like(theta), np.cos(theta))
        self.assertAlmostEqual(ratio, 1.0, places=12)


class TestHardyFunctions(unittest.TestCase):

    def test_projection_drops_negative_modes(self):
        """P₊ keeps k ≥ 0 only."""
        s = CircleSeries.from_modes([(-2, 1.0), (0, 2.0), (3, 1.0)], 4)
        p = hardy_projection(s)
        self.assertEqual(p.coefficient(-2), 0j)
        self.assertEqual(p.coefficient(3), 1 + 0j)

    def test_h2_norm_of_z(self):
        """‖z‖_{H²} = √(2π)."""
        f = holomorphic(CircleSeries.from_modes([(1, 1.0)], 8))
        self.assertAlmostEqual(hardy_norm(f), np.sqrt(2.0 * np.pi))

    def test_poisson_extend_outside(self):
        """Points on the circle are outside the open disk."""
        s = CircleSeries.from_modes([(1, 1.0)], 2)
        with self.assertRaises(DomainError):
            poisson_extend(s, 1.0)

    def test_poisson_extend_holomorphic(self):
        """The extension of e^{iθ} is z."""
        s = CircleSeries.from_modes([(1, 1.0)], 2)
        z = np.array([0.3 + 0.2j, -0.5j])
        np.testing.assert_allclose(poisson_extend(s, z), z, atol=1e-15)


class TestOuterFunction(unittest.TestCase):

    def setUp(self):
        self.N = 64
        self.h = 2.0 + np.cos(circle_nodes(self.N))

    def test_modulus_matches_weight(self):
        """|E_h| = h on the circle."""
        E = outer_function(None, self.h)
        np.testing.assert_allclose(np.abs(boundary_values(E)), self.h, rtol=1e-12)

    def test_value_at_origin(self):
        """E_h(0) = exp(mean log h) = (2 + √3)/2 for h = 2 + cos θ."""
        E = outer_function(None, self.h)
        self.assertAlmostEqual(E(0.0).real, (2.0 + np.sqrt(3.0)) / 2.0, places=10)
        self.assertAlmostEqual(E(0.0).imag, 0.0, places=12)

    def test_exponential_weight_round_trip(self):
        """h = e^{cos θ} at N = 64: |E_h| = h to 1e-8 and E_h(0) = exp(mean log h) = 1."""
        h = np.exp(np.cos(circle_nodes(64)))
        E = outer_function(None, h)
        self.assertLessEqual(np.abs(np.abs(boundary_values(E)) - h).max(), 1e-8)
        self.assertAlmostEqual(E(0.0).real, np.exp(np.mean(np.log(h))), delta=1e-10)

    def test_nonpositive_weight(self):
        """log h must exist at every node."""
        with self.assertRaises(CoefficientError):
            outer_function(None, np.cos(circle_nodes(8)))


class TestWeightsAndMaximal(unittest.TestCase):

    def test_a2_constant_weight(self):
        """Constant weights have A₂ constant 1."""
        self.assertEqual(a2_constant(np.full(33, 4.0)), 1.0)

    def test_a2_scale_invariant(self):
        """[w]_{A₂} does not change under w ↦ 3w and is at least 1."""
        w = 2.0 + np.cos(circle_nodes(32))
        a = a2_constant(w)
        self.assertGreaterEqual(a, 1.0)
        self.assertAlmostEqual(a2_constant(3.0 * w), a, places=12)

    def test_a2_power_weight_stable(self):
        """[|θ|^{1/2}]_{A₂} moves by less than 5% when the samples are doubled."""
        def weight(M):
            theta = -np.pi + 2.0 * np.pi * (np.arange(M) + 0.5) / M
            return np.sqrt(np.abs(theta))
        coarse, fine = a2_constant(weight(256)), a2_constant(weight(512))
        self.assertGreater(coarse, 1.0)
        self.assertLess(abs(fine / coarse - 1.0), 0.05)

    def test_a2_rejects_zero(self):
        """Weights must be strictly positive."""
        with self.assertRaises(CoefficientError):
            a2_constant(np.array([1.0, 0.0, 2.0]))

    def test_maximal_dominates(self):
        """Mφ ≥ |φ| at every node, with equality for constants."""
        phi = np.cos(3 * circle_nodes(20))
        np.testing.assert_array_less(np.abs(phi) - 1e-15, hl_maximal(phi))
        np.testing.assert_allclose(hl_maximal(np.full(41, 2.0)), 2.0)

    def test_nontangential_of_z(self):
        """For f = z the cone maximum is |ξ| = 1 at every boundary node."""
        f = holomorphic(CircleSeries.from_modes([(1, 1.0)], 16))
        np.testing.assert_allclose(nontangential_max(f, 2.0), 1.0, atol=1e-12)

    def test_nontangential_alpha(self):
        """Cone aperture must exceed 1."""
        f = DiskFunction(CircleSeries.from_modes([(0, 1.0)], 2))
        with self.assertRaises(DomainError):
            nontangential_max(f, 1.0)


class TestSeriesFile(unittest.TestCase):

    def test_write_read(self):
        """Series files keep every coefficient at full precision."""
        s = CircleSeries.from_function(lambda t: np.exp(np.cos(t)), 12)
        with tempfile.TemporaryDirectory() as tmp:
            back = read_series(write_series(s, os.path.join(tmp, "s.series")))
        np.testing.assert_array_equal(back.coefficients, s.coefficients)

    def test_empty_file(self):
        """A file without coefficient lines is rejected."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "empty.series")
            with open(path, "w") as fh:
                fh.write("# k re im\n")
            with self.assertRaises(CoefficientError):
                read_series(path)


if __name__ == '__main__':
    unittest.main()
