import os
import tempfile
import unittest

import numpy as np

from src.conformal import (
    a2_of_derivative,
    arclength_pullback,
    area_integral,
    boundary_correspondence,
    evaluate,
    inverse_derivative_norm,
    map_derivative,
    perimeter_integral,
    read_map,
    schwarz_christoffel,
    side_lengths,
    smirnov_norm,
    write_map,
)
from src.errors import DomainError
from src.geometry import l_shape, rectangle, regular_ngon, unit_square


class TestSquareMap(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.m = schwarz_christoffel(unit_square())

    def test_turning_exponents(self):
        """Every corner of the square turns by 1/2 and the exponents sum to 2."""
        np.testing.assert_allclose(self.m.turning_exponents, 0.5)
        self.assertAlmostEqual(self.m.turning_exponents.sum(), 2.0)

    def test_side_lengths(self):
        """All four image sides have length 1."""
        np.testing.assert_allclose(side_lengths(self.m), 1.0, atol=1e-5)

    def test_prevertices_quarter_spaced(self):
        """Symmetry puts the prevertices a quarter turn apart."""
        gaps = np.diff(np.sort(self.m.angles))
        np.testing.assert_allclose(gaps, np.pi / 2, atol=1e-6)

    def test_center_maps_to_centroid(self):
        """φ(0) is the centroid of the square."""
        self.assertAlmostEqual(evaluate(self.m, 0.0), complex(0.5, 0.5))

    def test_perimeter_identity(self):
        """∫_𝕋 |φ′| = 4."""
        self.assertAlmostEqual(perimeter_integral(self.m), 4.0, delta=4e-3)

    def test_area_identity(self):
        """∫_𝔻 |φ′|² = area within 1%."""
        self.assertAlmostEqual(area_integral(self.m), 1.0, delta=1e-2)

    def test_arclength_pullback(self):
        """Pulling back the whole boundary gives 4, one side gives 1, nothing gives 0."""
        self.assertAlmostEqual(arclength_pullback(self.m, [(0.0, 4.0)]), 4.0, delta=1e-3)
        self.assertAlmostEqual(arclength_pullback(self.m, [(1.0, 2.0)]), 1.0, delta=1e-3)
        self.assertEqual(arclength_pullback(self.m, []), 0.0)

    def test_boundary_correspondence_on_boundary(self):
        """Images of circle points land on the square's boundary."""
        w = boundary_correspondence(self.m, np.linspace(0.1, 6.0, 7))
        d = np.minimum.reduce([np.abs(w.real), np.abs(w.real - 1), np.abs(w.imag), np.abs(w.imag - 1)])
        np.testing.assert_allclose(d, 0.0, atol=1e-9)

    def test_smirnov_constant(self):
        """‖1‖ in the Smirnov space is √perimeter."""
        self.assertAlmostEqual(smirnov_norm(lambda z: np.ones_like(z), self.m), 2.0, delta=2e-3)
        self.assertEqual(smirnov_norm(lambda z: np.zeros_like(z), self.m), 0.0)

    def test_smirnov_matches_boundary_l2(self):
        """For f = z the pullback norm equals the direct boundary integral √(10/3)."""
        self.assertAlmostEqual(smirnov_norm(lambda z: z, self.m), np.sqrt(10.0 / 3.0), delta=1e-3)

    def test_a2_scale_invariant(self):
        """Doubling the polygon leaves both A₂ constants unchanged."""
        a, b = a2_of_derivative(self.m)
        a2, b2 = a2_of_derivative(self.m.scaled(2.0))
        self.assertAlmostEqual(a, a2, delta=1e-10)
        self.assertAlmostEqual(b, b2, delta=1e-10)
        self.assertGreaterEqual(min(a, b), 1.0)

    def test_a2_refinement_stable(self):
        """Both A₂ constants are finite and move by less than 10% when the samples double."""
        coarse = a2_of_derivative(self.m, 256)
        fine = a2_of_derivative(self.m, 512)
        for a, b in zip(coarse, fine):
            self.assertTrue(np.isfinite(a) and np.isfinite(b))
            self.assertLess(abs(b / a - 1.0), 0.1)

    def test_inverse_derivative_bounded(self):
        """1/φ′ has a finite H² norm on the 0.9 circle."""
        self.assertTrue(np.isfinite(inverse_derivative_norm(self.m)))

    def test_singular_points(self):
        """φ′ is not evaluated at a prevertex or outside the closed disk; φ only inside."""
        with self.assertRaises(DomainError):
            map_derivative(self.m, self.m.prevertices[0])
        with self.assertRaises(DomainError):
            map_derivative(self.m, 1.5)
        with self.assertRaises(DomainError):
            evaluate(self.m, 1.0)

    def test_map_file(self):
        """A written map reproduces the same side lengths."""
        with tempfile.TemporaryDirectory() as tmp:
            back = read_map(write_map(self.m, os.path.join(tmp, "map.txt")))
        np.testing.assert_allclose(side_lengths(back), side_lengths(self.m), rtol=1e-12)


class TestOtherPolygons(unittest.TestCase):

    def test_rectangle_opposite_sides(self):
        """A 2×1 rectangle has opposite image sides of equal length."""
        L = side_lengths(schwarz_christoffel(rectangle(2.0, 1.0)))
        np.testing.assert_allclose(L, [2.0, 1.0, 2.0, 1.0], atol=1e-5)

    def test_regular_polygon_near_identity(self):
        """For a regular 16-gon |φ′| on |z| = 0.5 lies between the inradius and 1."""
        m = schwarz_christoffel(regular_ngon(16))
        z = 0.5 * np.exp(2j * np.pi * np.arange(32) / 32)
        d = np.abs(map_derivative(m, z))
        self.assertGreater(d.min(), np.cos(np.pi / 16))
        self.assertLess(d.max(), 1.0)
        self.assertLess(d.max() / d.min() - 1.0, 1e-4)
        a, b = a2_of_derivative(m)
        self.assertLess(max(a, b), 1.1)

    def test_l_shape_perimeter(self):
        """The reentrant corner keeps the perimeter identity."""
        m = schwarz_christoffel(l_shape())
        self.assertAlmostEqual(perimeter_integral(m), 4.0, delta=4e-3)


if __name__ == '__main__':
    unittest.main()
