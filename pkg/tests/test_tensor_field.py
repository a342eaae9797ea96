"""
Unit tests for the orientation tensor field.
"""

import unittest
import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from geometry import InvalidParameterError, Polygon
from tensor_field import (
    DegenerateEdgeError,
    DegenerateTensorError,
    EmptyFieldError,
    FieldOutOfBoundsError,
    SymTensor2,
    TensorField,
    basis_from_edge,
    build_field,
    eval_field,
    field_glyphs,
    major_direction,
)


def brute_force_sum(polygons, decay, p):
    a = b = 0.0
    for poly in polygons:
        pts = poly.vertices
        for i in range(len(pts)):
            q = pts[(i + 1) % len(pts)]
            dx, dy = q[0] - pts[i][0], q[1] - pts[i][1]
            length = math.hypot(dx, dy)
            theta = math.atan2(dy, dx)
            w = math.exp(-decay * math.hypot(p[0] - pts[i][0], p[1] - pts[i][1]))
            a += w * length * math.cos(2 * theta)
            b += w * length * math.sin(2 * theta)
    return a, b


class TestBasisFromEdge(unittest.TestCase):

    def test_horizontal_edge(self):
        basis = basis_from_edge((0, 0), (1, 0))
        t = basis.tensor()

        self.assertAlmostEqual(basis.magnitude, 1.0)
        self.assertAlmostEqual(basis.angle, 0.0)
        np.testing.assert_allclose(t.matrix(), [[1, 0], [0, -1]], atol=1e-12)

    def test_vertical_edge(self):
        basis = basis_from_edge((0, 0), (0, 2))

        self.assertAlmostEqual(basis.magnitude, 2.0)
        self.assertAlmostEqual(basis.angle, math.pi / 2)
        np.testing.assert_allclose(basis.tensor().matrix(), [[-2, 0], [0, 2]], atol=1e-12)

    def test_diagonal_edge(self):
        t = basis_from_edge((0, 0), (1, 1)).tensor()

        np.testing.assert_allclose(t.matrix(), [[0, math.sqrt(2)], [math.sqrt(2), 0]], atol=1e-12)

    def test_reversed_edge_same_tensor(self):
        a = basis_from_edge((0, 0), (1, 2)).tensor()
        b = basis_from_edge((1, 2), (0, 0)).tensor()

        self.assertAlmostEqual(a.a, b.a)
        self.assertAlmostEqual(a.b, b.b)

    def test_angle_never_minus_pi(self):
        self.assertAlmostEqual(basis_from_edge((1, 0), (0, 0)).angle, math.pi)

    def test_zero_length(self):
        with self.assertRaises(DegenerateEdgeError):
            basis_from_edge((1, 1), (1, 1))


class TestBuildField(unittest.TestCase):

    def test_empty_polygon_list(self):
        with self.assertRaises(EmptyFieldError):
            build_field([], 1.0, 0.5, (0, 0, 1, 1))

    def test_bad_parameters(self):
        with self.assertRaises(InvalidParameterError):
            build_field([Polygon.rectangle(1, 1)], 0.0, 0.5, (0, 0, 1, 1))
        with self.assertRaises(InvalidParameterError):
            build_field([Polygon.rectangle(1, 1)], 1.0, -0.5, (0, 0, 1, 1))

    def test_lattice_covers_store(self):
        field = build_field([Polygon.rectangle(10, 4)], 0.4, 0.25, (0, 0, 10, 4))

        self.assertEqual(field.shape, (41, 17))
        self.assertEqual(field.extent(), (0.0, 0.0, 10.0, 4.0))

    def test_matches_brute_force_at_center(self):
        square = Polygon.rectangle(1, 1)
        field = build_field([square], 1.0, 0.5, (0, 0, 1, 1))

        got = eval_field(field, (0.5, 0.5))
        a, b = brute_force_sum([square], 1.0, (0.5, 0.5))

        self.assertAlmostEqual(got.a, a, places=12)
        self.assertAlmostEqual(got.b, b, places=12)

    def test_linearity(self):
        poly = Polygon([[0, 0], [3, 0], [3, 1]])
        single = build_field([poly], 0.5, 0.5, (0, 0, 4, 4))
        double = build_field([poly, poly], 0.5, 0.5, (0, 0, 4, 4))

        np.testing.assert_allclose(double.grid, 2.0 * single.grid, atol=1e-12)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(4)
        poly = Polygon([[-2.0, -1.0], [1.5, -1.5], [2.0, 1.0], [0.0, 0.5], [-1.5, 1.5]])
        rect = (-5.0, -5.0, 5.0, 5.0)
        field = build_field([poly], 0.4, 2.5, rect)
        for phi in (0.3, 1.2, -2.5):
            c, s = math.cos(phi), math.sin(phi)
            r = np.array([[c, -s], [s, c]])
            rotated = build_field([Polygon(poly.vertices @ r.T)], 0.4, 2.5, rect)
            for p in rng.uniform(-3, 3, (10, 2)):

                psi = major_direction(eval_field(field, p, analytic=True))
                psi_rot = major_direction(eval_field(rotated, r @ p, analytic=True))

                diff = (psi_rot - psi - phi) % math.pi
                self.assertLess(min(diff, math.pi - diff), 1e-9)

    def test_locality_along_ray(self):
        basis = basis_from_edge((1.0, 2.0), (2.0, 3.0))
        field = TensorField((basis,), 0.7, 1.0, (0.0, 0.0), (1, 1), np.zeros((1, 1, 2)))
        direction = np.array([math.cos(0.4), math.sin(0.4)])

        norms = [field.analytic(np.array(basis.anchor) + t * direction).norm() for t in np.linspace(0, 6, 40)]

        self.assertTrue(all(a > b for a, b in zip(norms, norms[1:])))

    def test_doubling_decay_shrinks_field(self):
        # parallel edges: every basis tensor points the same way, so no cancellation
        edges = [basis_from_edge((x, y), (x + 0.5, y)) for x, y in ((0, 0), (2, 1), (4, 3), (1, 4))]
        rng = np.random.default_rng(9)
        for decay in (0.1, 0.5, 2.0):
            single = TensorField(tuple(edges), decay, 1.0, (0.0, 0.0), (1, 1), np.zeros((1, 1, 2)))
            doubled = TensorField(tuple(edges), 2 * decay, 1.0, (0.0, 0.0), (1, 1), np.zeros((1, 1, 2)))
            for p in rng.uniform(-1, 5, (25, 2)):
                self.assertLessEqual(doubled.analytic(p).norm(), single.analytic(p).norm())

    def test_anchor_weight_is_one(self):
        near = Polygon([[0, 0], [1, 0], [0, 1]])
        field = build_field([near], 50.0, 0.5, (0, 0, 1, 1))

        t = field.analytic(np.array([0.0, 0.0]))
        # only the (0,0)->(1,0) edge is anchored at the origin
        self.assertAlmostEqual(t.a, 1.0, places=6)
        self.assertAlmostEqual(t.b, 0.0, places=6)


class TestEvalField(unittest.TestCase):

    def setUp(self):
        self.poly = Polygon([[0.3, 0.2], [3.1, 0.7], [2.2, 2.9], [0.4, 2.2]])
        self.field = build_field([self.poly], 0.6, 0.5, (0, 0, 4, 3))

    def test_lattice_point_exact(self):
        t = eval_field(self.field, (1.5, 2.0))

        self.assertAlmostEqual(t.a, self.field.grid[3, 4, 0])
        self.assertAlmostEqual(t.b, self.field.grid[3, 4, 1])

    def test_midpoint_is_mean(self):
        t = eval_field(self.field, (1.25, 2.0))
        mean = 0.5 * (self.field.grid[2, 4] + self.field.grid[3, 4])

        self.assertAlmostEqual(t.a, mean[0])
        self.assertAlmostEqual(t.b, mean[1])

    def test_out_of_bounds(self):
        with self.assertRaises(FieldOutOfBoundsError):
            eval_field(self.field, (4.5, 1.0))
        with self.assertRaises(FieldOutOfBoundsError):
            eval_field(self.field, (1.0, -0.1))

    def test_analytic_flag(self):
        p = np.array([1.37, 0.91])
        a, b = brute_force_sum([self.poly], 0.6, p)
        t = eval_field(self.field, p, analytic=True)

        self.assertAlmostEqual(t.a, a, places=10)
        self.assertAlmostEqual(t.b, b, places=10)

    def test_refinement_converges(self):
        rng = np.random.default_rng(4)
        fine = build_field([self.poly], 0.6, 0.5 / 8, (0, 0, 4, 3))
        coarse_total = fine_total = 0.0
        for _ in range(20):
            p = rng.uniform([0.1, 0.1], [3.9, 2.9])
            exact = np.array(brute_force_sum([self.poly], 0.6, p))
            coarse_total += np.linalg.norm(np.array([eval_field(self.field, p).a, eval_field(self.field, p).b]) - exact)
            fine_total += np.linalg.norm(np.array([eval_field(fine, p).a, eval_field(fine, p).b]) - exact)
        self.assertLess(fine_total, 0.25 * coarse_total)


class TestMajorDirection(unittest.TestCase):

    def test_horizontal(self):
        self.assertAlmostEqual(major_direction(SymTensor2(1.0, 0.0)), 0.0)

    def test_vertical(self):
        self.assertAlmostEqual(major_direction(SymTensor2(-1.0, 0.0)), math.pi / 2)

    def test_diagonal(self):
        self.assertAlmostEqual(major_direction(SymTensor2(0.0, 1.0)), math.pi / 4)

    def test_is_eigenvector(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            t = SymTensor2(*rng.normal(size=2))
            psi = major_direction(t)
            v = np.array([math.cos(psi), math.sin(psi)])
            lam = math.hypot(t.a, t.b)
            np.testing.assert_allclose(t.matrix() @ v, lam * v, atol=1e-9)
            self.assertGreaterEqual(psi, 0.0)
            self.assertLess(psi, math.pi)

    def test_degenerate(self):
        with self.assertRaises(DegenerateTensorError):
            major_direction(SymTensor2(0.0, 1e-9))


class TestGlyphs(unittest.TestCase):

    def test_wall_field_glyphs_follow_walls(self):
        field = build_field([Polygon.rectangle(10, 2)], 0.4, 0.5, (0, 0, 10, 2))

        glyphs = field_glyphs(field)

        self.assertGreater(len(glyphs), 0)
        # long horizontal walls dominate the middle of a thin store
        mid = [psi for x, y, psi in glyphs if abs(x - 5.0) < 1e-9 and abs(y - 1.0) < 1e-9]
        self.assertEqual(len(mid), 1)
        self.assertLess(min(mid[0], math.pi - mid[0]), math.radians(5))


if __name__ == "__main__":
    unittest.main()
