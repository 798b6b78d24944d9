import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visform.geometry import (
    CameraPose,
    Configuration,
    UnitQuaternion,
    backproject,
    formation_error,
    is_rotation,
    project,
    project_many,
    quat_to_rotation,
    rotate_planar,
    rotation_to_quat,
    rotz,
)


class TestQuaternion:
    def test_identity_maps_to_identity_matrix(self):
        np.testing.assert_allclose(quat_to_rotation(UnitQuaternion.identity()), np.eye(3))

    def test_z_quarter_turn(self):
        q = UnitQuaternion.from_components(math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4))
        np.testing.assert_allclose(q.rotate([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_inverse_symmetry(self, rng):
        for _ in range(200):
            v = rng.normal(size=4)
            q = UnitQuaternion.from_components(*v)
            r = quat_to_rotation(q) @ quat_to_rotation(q.conjugate())
            np.testing.assert_allclose(r, np.eye(3), atol=1e-12)

    def test_canonical_sign(self):
        q = UnitQuaternion.from_components(-1.0, 0.0, 0.0, 0.0)
        assert q.w == 1.0
        q = UnitQuaternion.from_components(0.0, -1.0, 0.0, 0.0)
        assert q.x == 1.0

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            UnitQuaternion.from_components(0.0, 0.0, 0.0, 0.0)

    @given(
        st.floats(-1, 1),
        st.floats(-1, 1),
        st.floats(-1, 1),
        st.floats(0.01, math.pi - 0.01),
    )
    @settings(max_examples=200, deadline=None)
    def test_matrix_round_trip(self, ax, ay, az, angle):
        norm = math.sqrt(ax * ax + ay * ay + az * az)
        if norm < 1e-3:
            return
        q = UnitQuaternion.from_axis_angle((ax, ay, az), angle)
        r = quat_to_rotation(q)
        assert is_rotation(r)
        q2 = rotation_to_quat(r)
        np.testing.assert_allclose(q.as_array(), q2.as_array(), atol=1e-9)

    def test_round_trip_random_rotations(self, rng):
        for _ in range(1000):
            q = UnitQuaternion.from_components(*rng.normal(size=4))
            r = quat_to_rotation(q)
            r2 = quat_to_rotation(rotation_to_quat(r))
            np.testing.assert_allclose(r, r2, atol=1e-9)

    def test_composition_homomorphism(self, rng):
        for _ in range(50):
            a = UnitQuaternion.from_components(*rng.normal(size=4))
            b = UnitQuaternion.from_components(*rng.normal(size=4))
            np.testing.assert_allclose(
                quat_to_rotation(a.multiply(b)),
                quat_to_rotation(a) @ quat_to_rotation(b),
                atol=1e-12,
            )


class TestProjection:
    def test_on_axis_point_hits_principal_point(self, intrinsics):
        pose = CameraPose(np.zeros(3), np.eye(3))
        assert project(intrinsics, pose, [0.0, 0.0, 5.0]) == (160.0, 120.0)

    def test_behind_camera_not_visible(self, intrinsics):
        pose = CameraPose(np.zeros(3), np.eye(3))
        assert project(intrinsics, pose, [0.0, 0.0, -5.0]) is None

    def test_hand_pinhole_example(self, intrinsics):
        # landmark at (1, 0, 5) in the camera frame, focal 250 -> (210, 120)
        pose = CameraPose(np.zeros(3), np.eye(3))
        uv = project(intrinsics, pose, [1.0, 0.0, 5.0])
        assert uv == (210.0, 120.0)

    def test_backproject_principal_point(self, intrinsics):
        np.testing.assert_allclose(backproject((160.0, 120.0), intrinsics), [0.0, 0.0, 1.0])

    def test_backproject_inverts_projection_example(self, intrinsics):
        np.testing.assert_allclose(backproject((210.0, 120.0), intrinsics), [0.2, 0.0, 1.0])

    def test_backproject_third_component_is_one(self, intrinsics, rng):
        for _ in range(100):
            px = rng.uniform((0, 0), (320, 240))
            assert backproject(px, intrinsics)[2] == 1.0

    def test_round_trip_duality(self, intrinsics, rng):
        pose = CameraPose(rng.normal(size=3), quat_to_rotation(
            UnitQuaternion.from_components(*rng.normal(size=4))))
        hits = 0
        for _ in range(1000):
            p = rng.uniform((-20, -20, -20), (20, 20, 20))
            uv = project(intrinsics, pose, p)
            if uv is None:
                continue
            hits += 1
            bearing = backproject(uv, intrinsics)
            p_cam = pose.rotation @ (p - pose.position)
            # bearing parallel to the camera-frame point
            np.testing.assert_allclose(
                np.cross(bearing, p_cam / p_cam[2]), 0.0, atol=1e-9
            )
        assert hits > 10

    def test_project_many_matches_scalar(self, intrinsics, rng):
        pose = CameraPose(np.array([1.0, -2.0, 3.0]), rotz(0.3))
        pts = rng.uniform((-30, -30, -30), (30, 30, 30), size=(200, 3))
        pixels, visible = project_many(intrinsics, pose, pts)
        for k in range(200):
            single = project(intrinsics, pose, pts[k])
            assert visible[k] == (single is not None)
            if single is not None:
                np.testing.assert_allclose(pixels[k], single, atol=1e-12)


class TestRotatePlanar:
    def test_quarter_turn(self):
        np.testing.assert_allclose(rotate_planar([1.0, 0.0], math.pi / 2), [0.0, 1.0], atol=1e-12)

    def test_identity(self):
        np.testing.assert_allclose(rotate_planar([3.0, -2.0], 0.0), [3.0, -2.0])

    def test_negative_quarter_turn(self):
        np.testing.assert_allclose(rotate_planar([1.0, 0.0], -math.pi / 2), [0.0, -1.0], atol=1e-12)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-10, 10))
    @settings(max_examples=200, deadline=None)
    def test_norm_preserved(self, x, y, theta):
        v = np.array([x, y])
        assert abs(np.linalg.norm(rotate_planar(v, theta)) - np.linalg.norm(v)) < 1e-12


def _similarity(points, theta, scale, shift):
    pts = np.asarray(points, dtype=float)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    return scale * pts @ rot.T + np.asarray(shift)


def _grid_search_error(q, spec):
    """Brute-force similarity alignment over a fine (theta, scale) grid."""
    qp = np.asarray(q, float).reshape(-1, 2)
    sp = np.asarray(spec, float).reshape(-1, 2)
    qc = qp - qp.mean(0)
    sc = sp - sp.mean(0)
    denom = np.linalg.norm(sc)
    best = math.inf
    for theta in np.linspace(0.0, 2 * math.pi, 3000, endpoint=False):
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        rotated = sc @ rot.T
        # optimal nonnegative scale for this angle in closed form
        s = max(0.0, float((qc * rotated).sum() / (rotated * rotated).sum()))
        best = min(best, float(np.linalg.norm(qc - s * rotated)))
    return best / denom


class TestFormationError:
    TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.866]])

    def test_zero_on_itself(self):
        assert formation_error(self.TRIANGLE, self.TRIANGLE) < 1e-12

    def test_similarity_invariance(self):
        moved = _similarity(self.TRIANGLE, math.radians(30), 2.0, (5.0, -7.0))
        assert formation_error(moved, self.TRIANGLE) < 1e-10

    def test_matches_grid_search_oracle(self, rng):
        for _ in range(5):
            q = self.TRIANGLE + rng.normal(scale=0.2, size=(3, 2))
            closed = formation_error(q, self.TRIANGLE)
            brute = _grid_search_error(q, self.TRIANGLE)
            assert abs(closed - brute) < 1e-4

    def test_invariant_under_similarity_of_first_argument(self, rng):
        q = self.TRIANGLE + rng.normal(scale=0.3, size=(3, 2))
        e0 = formation_error(q, self.TRIANGLE)
        for theta, s, shift in [(0.7, 1.6, (2, 3)), (-1.2, 0.4, (-5, 1))]:
            e1 = formation_error(_similarity(q, theta, s, shift), self.TRIANGLE)
            assert abs(e0 - e1) < 1e-10

    def test_mismatched_sizes_error(self):
        with pytest.raises(ValueError):
            formation_error(np.zeros((4, 2)), self.TRIANGLE)

    def test_degenerate_spec_error(self):
        with pytest.raises(ValueError):
            formation_error(self.TRIANGLE, np.ones((3, 2)))

    def test_configuration_type(self):
        c = Configuration.from_points(self.TRIANGLE)
        assert c.n == 3
        assert formation_error(c, Configuration.from_points(self.TRIANGLE)) < 1e-12
        with pytest.raises(ValueError):
            Configuration(np.zeros(3))
