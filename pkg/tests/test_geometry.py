import math
import unittest
import sys
import os

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from hypothesis import given, settings, strategies as st

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import DimensionMismatchError, NoComplementError
from core.geometry import (
    Subspace,
    ball_vector,
    cap_contains,
    chordal_distance,
    orthonormal_complement_basis,
    principal_angles,
    project,
    random_subspace,
    random_unit,
    restrict_and_lift,
    sector_contains,
    unit,
)

E = np.eye(3)


class TestSubspace(unittest.TestCase):
    def test_rejects_non_orthonormal_basis(self):
        with self.assertRaises(ValueError):
            Subspace(np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))

    def test_vector_becomes_line(self):
        line = Subspace(np.array([0.0, 1.0, 0.0]))
        self.assertEqual((line.ambient_dim, line.dim), (3, 1))

    def test_span_drops_dependent_vectors(self):
        H = Subspace.span([E[0], 2 * E[0], E[1]], 3)
        self.assertEqual(H.dim, 2)

    def test_span_of_zero_vectors_fails(self):
        with self.assertRaises(ValueError):
            Subspace.span([np.zeros(3)], 3)

    def test_dict_round_trip_is_bitwise(self):
        H = random_subspace(5, 2, np.random.default_rng(3))
        self.assertEqual(Subspace.from_dict(H.to_dict()), H)

    def test_basis_is_read_only(self):
        H = Subspace.standard(3, 2)
        with self.assertRaises(ValueError):
            H.basis[0, 0] = 5.0

    def test_ball_vector_rejects_outside_points(self):
        with self.assertRaises(ValueError):
            ball_vector([1.0, 1.0])
        with self.assertRaises(DimensionMismatchError):
            ball_vector([1.0, 0.0], d=3)


class TestProjection(unittest.TestCase):
    def test_identity_case(self):
        assert_array_equal(project(np.eye(2)[0], Subspace.standard(2, 1)), np.eye(2)[0])

    def test_orthogonal_vector_projects_to_zero(self):
        assert_array_equal(project(np.eye(2)[1], Subspace.standard(2, 1)), np.zeros(2))

    def test_vector_already_in_subspace(self):
        x = np.array([0.6, 0.8, 0.0])
        assert_allclose(project(x, Subspace.standard(3, 2)), x)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            project(np.ones(2) / 2, Subspace.standard(3, 1))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), d=st.integers(1, 12))
    def test_idempotent_and_contracting(self, seed, d):
        rng = np.random.default_rng(seed)
        H = random_subspace(d, int(rng.integers(1, d + 1)), rng)
        x = random_unit(d, rng) * rng.uniform(0.0, 1.0)
        once = project(x, H)
        assert_allclose(project(once, H), once, atol=1e-12)
        self.assertLessEqual(np.linalg.norm(once), np.linalg.norm(x) + 1e-12)


class TestCapsAndSectors(unittest.TestCase):
    def test_cap_examples(self):
        self.assertTrue(cap_contains(E[0], 0.9, E[0]))
        self.assertFalse(cap_contains(E[0], 0.9, 0.5 * E[0]))
        self.assertFalse(cap_contains(E[0], 0.9, E[1]))

    def test_cap_rejects_zero_direction(self):
        with self.assertRaises(ValueError):
            cap_contains(np.zeros(3), 0.9, E[0])

    def test_cap_boundary_is_outside(self):
        self.assertFalse(cap_contains(E[0], 0.9, 0.9 * E[0]))

    def test_sector_examples(self):
        self.assertTrue(sector_contains(Subspace(E[0]), 0.9, E[0]))
        self.assertFalse(sector_contains(Subspace.standard(3, 2), 0.9, E[2]))
        self.assertFalse(sector_contains(Subspace(E[0]), 0.9, np.array([0.8, 0.6, 0.0])))

    def test_zero_vector_is_in_no_sector(self):
        self.assertFalse(sector_contains(Subspace.full(3), 0.9, np.zeros(3)))

    def test_sector_ignores_length(self):
        x = np.array([0.95, 0.1, 0.0])
        x = x / np.linalg.norm(x)
        H = Subspace(E[0])
        self.assertTrue(sector_contains(H, 0.9, x))
        self.assertTrue(sector_contains(H, 0.9, 0.01 * x))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_sector_is_two_sided(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 8))
        H = random_subspace(d, int(rng.integers(1, d + 1)), rng)
        x = random_unit(d, rng)
        self.assertEqual(sector_contains(H, 0.9, x), sector_contains(H, 0.9, -x))


class TestAngles(unittest.TestCase):
    def test_identical_subspaces(self):
        H = random_subspace(4, 2, np.random.default_rng(0))
        assert_allclose(principal_angles(H, H).angles, [0.0, 0.0], atol=1e-7)
        self.assertAlmostEqual(chordal_distance(H, H), 0.0, delta=1e-7)

    def test_orthogonal_lines(self):
        A, B = Subspace(np.eye(2)[0]), Subspace(np.eye(2)[1])
        assert_allclose(principal_angles(A, B).angles, [math.pi / 2])
        self.assertAlmostEqual(chordal_distance(A, B), 1.0)

    def test_diagonal_line(self):
        A = Subspace(np.eye(2)[0])
        B = Subspace(np.array([1.0, 1.0]) / math.sqrt(2))
        assert_allclose(principal_angles(A, B).angles, [math.pi / 4])
        self.assertAlmostEqual(chordal_distance(A, B), math.sqrt(2) / 2)

    def test_mismatched_dims(self):
        with self.assertRaises(DimensionMismatchError):
            principal_angles(Subspace.standard(3, 1), Subspace.standard(3, 2))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_lines_match_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 9))
        a, b = random_unit(d, rng), random_unit(d, rng)
        brute = math.sin(math.acos(min(1.0, abs(float(a @ b)))))
        self.assertAlmostEqual(chordal_distance(Subspace(a), Subspace(b)), brute, delta=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_angles_sorted_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        A, B = random_subspace(6, 3, rng), random_subspace(6, 3, rng)
        angles = principal_angles(A, B).angles
        self.assertEqual(list(angles), sorted(angles))
        self.assertTrue(all(0.0 <= t <= math.pi / 2 for t in angles))
        self.assertLessEqual(chordal_distance(A, B), math.sqrt(3) + 1e-12)


class TestComplement(unittest.TestCase):
    def test_complement_of_first_axis(self):
        C = orthonormal_complement_basis([E[0]], 3)
        self.assertEqual(C.dim, 2)
        self.assertTrue(Subspace.standard(3, 3).contains_subspace(C))
        assert_allclose(C.basis.T @ E[0], [0.0, 0.0], atol=1e-12)

    def test_empty_input_gives_full_space(self):
        self.assertEqual(orthonormal_complement_basis([], 2).dim, 2)

    def test_row_reduction_example(self):
        C = orthonormal_complement_basis([np.array([1.0, 1.0, 0.0]) / math.sqrt(2), E[2]], 3)
        expected = np.array([1.0, -1.0, 0.0]) / math.sqrt(2)
        self.assertAlmostEqual(abs(float(C.basis[:, 0] @ expected)), 1.0)

    def test_spanning_set_has_no_complement(self):
        with self.assertRaises(NoComplementError):
            orthonormal_complement_basis(list(E), 3)


class TestRestrictAndLift(unittest.TestCase):
    def test_full_space_is_identity(self):
        line = Subspace(np.array([0.0, 0.6, 0.8]))
        lifted = restrict_and_lift(Subspace.full(3), [E[0]], lambda points, dim: line)
        self.assertAlmostEqual(abs(float(lifted.basis[:, 0] @ line.basis[:, 0])), 1.0)

    def test_orthogonal_point_restricts_to_zero(self):
        seen = []

        def inner(points, dim):
            seen.extend(points)
            return Subspace.standard(dim, 1)

        lifted = restrict_and_lift(Subspace.standard(3, 2), [E[2]], inner)
        assert_array_equal(seen[0], np.zeros(2))
        self.assertTrue(Subspace.standard(3, 2).contains_subspace(lifted))

    def test_explicit_lift(self):
        seen = []

        def inner(points, dim):
            seen.extend(points)
            return Subspace(np.array([0.0, 1.0]))

        lifted = restrict_and_lift(Subspace.standard(3, 2), [np.array([0.6, 0.0, 0.8])], inner)
        assert_allclose(seen[0], [0.6, 0.0])
        assert_allclose(np.abs(lifted.basis[:, 0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_inner_result_in_wrong_space(self):
        with self.assertRaises(DimensionMismatchError):
            restrict_and_lift(Subspace.standard(3, 2), [E[0]], lambda points, dim: Subspace.standard(3, 1))

    def test_unit_vector(self):
        assert_array_equal(unit(1, 3), E[1])


if __name__ == '__main__':
    unittest.main()
