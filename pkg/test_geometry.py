#!/usr/bin/env python3
"""
Tests for the camera model, rotations, board layout and ray/sphere geometry.
"""

import math
import os
import sys
import unittest
import logging

import numpy as np
from hypothesis import given, settings, strategies as st

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gaze.errors import InvalidCamera, NonPositiveDepth, UnknownMarker, ZeroVector
from gaze.geometry import (
    BoardLayout, CameraIntrinsics, Pose, angular_error_deg, apply_pose, backproject,
    board_marker_point, canonical_rotvec, ray_sphere_intersect, rodrigues, project,
    target_via_reference,
)

logging.basicConfig(level=logging.ERROR)

CAM = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)

coord = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False, allow_infinity=False)
rotvec = st.tuples(coord, coord, coord)


class TestCameraIntrinsics(unittest.TestCase):
    """Test intrinsics validation."""

    def test_rejects_non_positive_focal(self):
        with self.assertRaises(InvalidCamera):
            CameraIntrinsics(0.0, 600.0, 320.0, 240.0, 640, 480)

    def test_rejects_principal_point_outside_image(self):
        with self.assertRaises(InvalidCamera):
            CameraIntrinsics(600.0, 600.0, 640.0, 240.0, 640, 480)

    def test_dict_round_trip(self):
        self.assertEqual(CameraIntrinsics.from_dict(CAM.to_dict()), CAM)


class TestRodrigues(unittest.TestCase):
    """Test rotation vectors."""

    def test_zero_is_identity(self):
        np.testing.assert_array_equal(rodrigues((0, 0, 0)), np.eye(3))

    def test_quarter_turn_about_z(self):
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        np.testing.assert_allclose(rodrigues((0, 0, math.pi / 2)), expected, atol=1e-12)

    def test_half_turn_about_x(self):
        np.testing.assert_allclose(rodrigues((math.pi, 0, 0)), np.diag([1.0, -1.0, -1.0]), atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(rotvec)
    def test_orthonormal(self, r):
        R = rodrigues(r)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        self.assertAlmostEqual(np.linalg.det(R), 1.0, delta=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.tuples(*[st.floats(-10.0, 10.0, allow_nan=False)] * 3))
    def test_canonicalisation_preserves_rotation(self, r):
        canonical = canonical_rotvec(r)
        self.assertLessEqual(np.linalg.norm(canonical), math.pi + 1e-12)
        np.testing.assert_allclose(rodrigues(canonical), rodrigues(r), atol=1e-9)

    def test_half_turn_sign_is_fixed(self):
        np.testing.assert_allclose(canonical_rotvec((-math.pi, 0, 0)), (math.pi, 0, 0))
        np.testing.assert_allclose(canonical_rotvec((0, -math.pi, 0)), (0, math.pi, 0))


class TestPose(unittest.TestCase):
    """Test rigid transforms."""

    def test_identity(self):
        np.testing.assert_array_equal(apply_pose(Pose(), (1, 2, 3)), (1, 2, 3))

    def test_translation(self):
        np.testing.assert_array_equal(apply_pose(Pose(t=(0, 0, 1)), (0, 0, 0)), (0, 0, 1))

    def test_rotation(self):
        np.testing.assert_allclose(apply_pose(Pose(r=(0, 0, math.pi / 2)), (1, 0, 0)), (0, 1, 0), atol=1e-12)

    def test_matrix_matches_apply(self):
        pose = Pose(r=(0.3, -0.2, 1.1), t=(0.1, 0.2, 0.3))
        p = np.array([0.5, -1.0, 2.0])
        homogeneous = pose.matrix() @ np.append(p, 1.0)
        np.testing.assert_allclose(homogeneous[:3], apply_pose(pose, p), atol=1e-12)


class TestProjection(unittest.TestCase):
    """Test the pinhole model."""

    def test_project_examples(self):
        np.testing.assert_allclose(project((0, 0, 1), CAM), (320, 240))
        np.testing.assert_allclose(project((0.1, 0, 1), CAM), (380, 240))
        np.testing.assert_allclose(project((0.1, 0.1, 2), CAM), (350, 270))

    def test_project_behind_camera(self):
        with self.assertRaises(NonPositiveDepth):
            project((0, 0, 0), CAM)
        with self.assertRaises(NonPositiveDepth):
            project((0, 0, -1), CAM)

    def test_backproject_examples(self):
        np.testing.assert_allclose(backproject((320, 240), 1.0, CAM), (0, 0, 1))
        np.testing.assert_allclose(backproject((380, 240), 1.0, CAM), (0.1, 0, 1))
        np.testing.assert_allclose(backproject((320, 240), 2.0, CAM), (0, 0, 2))

    def test_backproject_rejects_depth(self):
        with self.assertRaises(NonPositiveDepth):
            backproject((320, 240), 0.0, CAM)

    def test_round_trip_sweep(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            p = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.3, 3.0)])
            np.testing.assert_allclose(backproject(project(p, CAM), p[2], CAM), p, atol=1e-9)


class TestBoardLayout(unittest.TestCase):
    """Test marker positions on the board."""

    def test_origin_marker(self):
        np.testing.assert_array_equal(board_marker_point(BoardLayout(), 16), (0, 0, 0))

    def test_one_step_right(self):
        np.testing.assert_allclose(board_marker_point(BoardLayout(), 17), (0.14, 0, 0))

    def test_one_step_right_and_down(self):
        # origin moved off the last row so a marker below it exists
        layout = BoardLayout(origin_marker_id=6)
        np.testing.assert_allclose(board_marker_point(layout, 12), (0.14, -0.14, 0))

    def test_unknown_marker(self):
        with self.assertRaises(UnknownMarker):
            board_marker_point(BoardLayout(), 99)

    def test_duplicate_ids_rejected(self):
        with self.assertRaises(UnknownMarker):
            BoardLayout(rows=1, cols=2, origin_marker_id=1, ids=((1, 1),))

    def test_default_layout(self):
        layout = BoardLayout()
        self.assertEqual(len(layout.marker_ids), 20)
        self.assertAlmostEqual(layout.pitch, 0.14)


class TestTargetViaReference(unittest.TestCase):
    """Test the external-camera-to-robot-camera chain."""

    def test_identity_chain(self):
        out = target_via_reference((0.3, 0.2, 0.1), (0, 0, 0), np.eye(3), (0, 0, 0), Pose())
        np.testing.assert_allclose(out, (0.3, 0.2, 0.1))

    def test_zero_offset(self):
        board = Pose(r=(0.1, 0.2, 0.3), t=(0.0, 0.3, 0.8))
        R_ref = rodrigues((0.4, -0.1, 0.2))
        out = target_via_reference((1, 2, 3), (1, 2, 3), R_ref, (0.14, 0.28, 0), board)
        np.testing.assert_allclose(out, apply_pose(board, (0.14, 0.28, 0)), atol=1e-12)

    def test_matches_composed_matrix(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            board = Pose(r=rng.uniform(-2, 2, 3), t=rng.uniform(-1, 1, 3))
            R_ref = rodrigues(rng.uniform(-2, 2, 3))
            p_ref_wcs, p_ref_bcs, p_t_wcs = rng.uniform(-1, 1, (3, 3))

            to_ref = np.eye(4)
            to_ref[:3, :3] = R_ref.T
            to_ref[:3, 3] = -R_ref.T @ p_ref_wcs
            ref_to_board = np.eye(4)
            ref_to_board[:3, 3] = p_ref_bcs
            oracle = board.matrix() @ ref_to_board @ to_ref @ np.append(p_t_wcs, 1.0)

            out = target_via_reference(p_t_wcs, p_ref_wcs, R_ref, p_ref_bcs, board)
            np.testing.assert_allclose(out, oracle[:3], atol=1e-9)


class TestRaySphere(unittest.TestCase):
    """Test ray/sphere intersection."""

    def test_two_roots(self):
        roots = ray_sphere_intersect((0, 0, 0), (0, 0, 1), (0, 0, 1), 0.1)
        np.testing.assert_allclose(roots, (0.9, 1.1))

    def test_miss(self):
        self.assertEqual(ray_sphere_intersect((0, 0, 0), (1, 0, 0), (0, 0, 1), 0.1), ())

    def test_origin_on_sphere(self):
        roots = ray_sphere_intersect((0, 0, 0), (0, 0, 1), (0, 0, 1), 1.0)
        np.testing.assert_allclose(roots, (0.0, 2.0))

    def test_tangent_single_root(self):
        roots = ray_sphere_intersect((0, 0, 0), (0, 0, 1), (0.1, 0, 1), 0.1)
        self.assertEqual(len(roots), 1)
        self.assertAlmostEqual(roots[0], 1.0)

    def test_residual_sweep(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            origin = rng.uniform(-1, 1, 3)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            center = rng.uniform(-1, 1, 3)
            radius = rng.uniform(0.05, 1.0)
            oc = origin - center
            disc = (direction @ oc) ** 2 - (oc @ oc - radius ** 2)
            roots = ray_sphere_intersect(origin, direction, center, radius)
            if disc < -1e-12:
                self.assertEqual(roots, ())
            for s in roots:
                self.assertGreaterEqual(s, 0.0)
                residual = np.linalg.norm(origin + s * direction - center) - radius
                self.assertLessEqual(abs(residual), 1e-9)
            self.assertEqual(list(roots), sorted(roots))


class TestAngularError(unittest.TestCase):
    """Test angular error."""

    def test_examples(self):
        self.assertAlmostEqual(angular_error_deg((0, 0, 1), (0, 0, 1)), 0.0)
        self.assertAlmostEqual(angular_error_deg((1, 0, 0), (0, 1, 0)), 90.0)
        self.assertAlmostEqual(angular_error_deg((1, 0, 0), (1, 1, 0)), 45.0)
        self.assertAlmostEqual(angular_error_deg((1, 0, 0), (-1, 0, 0)), 180.0)

    def test_zero_vector(self):
        with self.assertRaises(ZeroVector):
            angular_error_deg((0, 0, 0), (1, 0, 0))

    @settings(max_examples=200, deadline=None)
    @given(rotvec, rotvec, st.floats(0.01, 100.0), st.floats(0.01, 100.0))
    def test_symmetric_and_scale_invariant(self, u, v, a, b):
        u, v = np.asarray(u), np.asarray(v)
        if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
            return
        base = angular_error_deg(u, v)
        self.assertAlmostEqual(base, angular_error_deg(v, u), delta=1e-9)
        self.assertAlmostEqual(base, angular_error_deg(a * u, b * v), delta=1e-9)


if __name__ == '__main__':
    unittest.main()
