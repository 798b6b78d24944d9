import math

import numpy as np
import pytest

from visform.geometry import UnitQuaternion, quat_to_rotation, rotz
from visform.pose import (
    AmbiguousCheiralityError,
    Correspondence,
    DegenerateSampleError,
    NoParallaxError,
    PoseHypothesis,
    UnobservableScaleError,
    epipolar_residual,
    epipolar_residuals,
    kernels,
    recover_scale,
    relative_position,
    select_cheiral,
    solve_minimal,
    triangulate_depths,
    triangulation_residual,
)
from visform.pose.core import bearing_arrays
from visform.pose.synthetic import random_scene

SPEC_POSE = PoseHypothesis(UnitQuaternion.identity(), np.array([-1.0, 0.0, 0.0]))
SPEC_CORR = Correspondence(np.array([0.0, 0.0, 1.0]), np.array([-0.2, 0.0, 1.0]))


class TestEpipolarResidual:
    def test_consistent_point_is_zero(self):
        assert abs(epipolar_residual(SPEC_POSE, SPEC_CORR)) < 1e-15

    def test_hand_arithmetic(self):
        c = Correspondence(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.1, 1.0]))
        assert epipolar_residual(SPEC_POSE, c) == pytest.approx(0.1, abs=1e-15)

    def test_synthetic_scene_residuals_vanish(self):
        sc = random_scene(7, n_points=1000)
        h = PoseHypothesis(sc.quaternion, sc.translation)
        res = epipolar_residuals(h, sc.correspondences)
        assert np.max(np.abs(res)) < 1e-10

    def test_sign_flips_with_translation(self):
        c = Correspondence(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.1, 1.0]))
        flipped = PoseHypothesis(SPEC_POSE.quaternion, -SPEC_POSE.translation)
        assert epipolar_residual(flipped, c) == pytest.approx(-0.1, abs=1e-15)


def _five_from_scene(seed, **kw):
    return random_scene(seed, n_points=5, **kw).correspondences


class TestSolveMinimal:
    def test_identical_views_degenerate(self, rng):
        cs = []
        for _ in range(5):
            b = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4), 1.0])
            cs.append(Correspondence(b, b.copy()))
        with pytest.raises(DegenerateSampleError):
            solve_minimal(cs)

    def test_pure_rotation_degenerate(self, rng):
        rot = rotz(math.radians(15.0))
        cs = []
        for _ in range(5):
            m = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4), 1.0])
            n = rot @ m
            n = n / n[2]
            cs.append(Correspondence(m, n))
        with pytest.raises(DegenerateSampleError):
            solve_minimal(cs)

    def test_recovers_known_pose(self):
        # 10 degrees about z, unit x baseline, landmarks at depths 4-10
        q_true = UnitQuaternion.from_axis_angle((0, 0, 1), math.radians(10.0))
        rot = quat_to_rotation(q_true)
        t = np.array([1.0, 0.0, 0.0])
        rng = np.random.default_rng(3)
        cs = []
        while len(cs) < 5:
            m = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), 1.0])
            p1 = rng.uniform(4.0, 10.0) * m
            p2 = rot @ p1 + t
            if p2[2] < 0.5:
                continue
            cs.append(Correspondence(m, p2 / p2[2]))
        hyps = solve_minimal(cs)
        assert hyps
        best = min(hyps, key=lambda h: h.quaternion.angle_to(q_true))
        assert best.quaternion.angle_to(q_true) < 1e-6
        assert math.acos(min(1.0, abs(float(best.translation @ t)))) < 1e-6

    def test_wrong_count_rejected(self):
        cs = _five_from_scene(0)
        with pytest.raises(ValueError):
            solve_minimal(cs[:4])

    def test_duplicate_bearings_rejected(self):
        cs = _five_from_scene(0)
        cs[1] = Correspondence(cs[0].m.copy(), cs[1].n.copy())
        with pytest.raises(ValueError):
            solve_minimal(cs)

    def test_at_most_twenty_hypotheses_with_unit_translations(self):
        for seed in range(5):
            hyps = solve_minimal(_five_from_scene(seed))
            assert len(hyps) <= 20
            for h in hyps:
                assert abs(np.linalg.norm(h.translation) - 1.0) < 1e-9
                assert h.quaternion.w >= 0.0

    def test_generator_pose_recovered_over_many_scenes(self):
        hits = 0
        for seed in range(40):
            sc = random_scene(seed, n_points=5)
            try:
                hyps = solve_minimal(sc.correspondences)
            except DegenerateSampleError:
                continue
            if hyps and min(sc.rotation_error(h.quaternion) for h in hyps) < 1e-6:
                hits += 1
        assert hits >= 38


class TestTriangulateDepths:
    def test_direct_substitution(self):
        d = triangulate_depths(SPEC_POSE, SPEC_CORR)
        assert d.u == pytest.approx(5.0, abs=1e-9)
        assert d.v == pytest.approx(5.0, abs=1e-9)
        assert d.is_cheiral
        assert triangulation_residual(SPEC_POSE, SPEC_CORR, d) < 1e-9

    def test_matches_generator_depths(self):
        sc = random_scene(11, n_points=50)
        h = PoseHypothesis(sc.quaternion, sc.translation)
        for c, depth in zip(sc.correspondences, sc.depths_m):
            d = triangulate_depths(h, c)
            assert d.u == pytest.approx(depth, rel=1e-9)
            assert triangulation_residual(h, c, d) < 1e-8

    def test_point_behind_second_camera_flags_negative(self):
        # second camera far forward along z: the point sits behind it
        h = PoseHypothesis(UnitQuaternion.identity(), np.array([0.0, 0.0, 1.0]))
        m = np.array([0.3, 0.0, 1.0])
        p1 = 0.5 * m  # depth 0.5 in front of camera 1, behind camera 2 plane
        p2 = p1 - np.array([0.0, 0.0, 1.0])
        n = p2 / p2[2]
        d = triangulate_depths(h, Correspondence(m, n))
        assert d.v < 0.0
        assert not d.is_cheiral

    def test_no_parallax(self):
        c = Correspondence(np.array([0.1, 0.2, 1.0]), np.array([0.1, 0.2, 1.0]))
        with pytest.raises(NoParallaxError):
            triangulate_depths(PoseHypothesis(UnitQuaternion.identity(), np.array([0.0, 0.0, 1.0])), c)
        # direction along the bearing: rank-deficient system


class TestSelectCheiral:
    def test_singleton_with_positive_depths_unchanged(self):
        sc = random_scene(2, n_points=20)
        h = PoseHypothesis(sc.quaternion, sc.translation)
        out = select_cheiral([h], sc.correspondences)
        np.testing.assert_array_equal(out.translation, h.translation)

    def test_true_pose_beats_negated_twin(self):
        sc = random_scene(4, n_points=20)
        h_true = PoseHypothesis(sc.quaternion, sc.translation)
        h_neg = PoseHypothesis(sc.quaternion, -sc.translation)
        out = select_cheiral([h_neg, h_true], sc.correspondences)
        np.testing.assert_allclose(out.translation, sc.translation, atol=1e-12)

    def test_empty_set_errors(self):
        with pytest.raises(ValueError):
            select_cheiral([], [])


class TestRefinementGradient:
    def test_jacobian_matches_central_differences(self):
        sc = random_scene(5, n_points=30, noise_px=1.0)
        ms, ns = bearing_arrays(sc.correspondences)
        q = sc.quaternion.as_array()
        t = sc.translation
        rho, jac = kernels.residual_jacobian(q, t, ms, ns)
        grad = 2.0 * jac.T @ rho

        def objective(theta):
            qq = theta[:4] / np.linalg.norm(theta[:4])
            tt = theta[4:] / np.linalg.norm(theta[4:])
            r = kernels.epipolar_residuals(qq, tt, ms, ns)
            return float(r @ r)

        theta0 = np.concatenate([q, t])
        fd = np.zeros(7)
        eps = 1e-6
        for k in range(7):
            tp = theta0.copy()
            tp[k] += eps
            tm = theta0.copy()
            tm[k] -= eps
            fd[k] = (objective(tp) - objective(tm)) / (2 * eps)
        denom = max(np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(grad - fd) / denom < 1e-5


class TestScaleRecovery:
    def _downward_scene(self, baseline=5.0, altitude=20.0, n=30, elevated=0):
        """Two downward cameras `baseline` apart at `altitude` over z=0 ground."""
        from visform.agent import MOUNT_DOWN

        rng = np.random.default_rng(8)
        r_wc = MOUNT_DOWN
        p_i = np.array([0.0, 0.0, altitude])
        p_j = np.array([baseline, 0.0, altitude])
        rot_true = r_wc @ r_wc.T  # identity
        t_full = r_wc @ (p_j - p_i)
        cs = []
        for k in range(n):
            ground = np.array([rng.uniform(-4, 8), rng.uniform(-6, 6), 0.0])
            if elevated and k < elevated:
                ground[2] = rng.uniform(1.0, 6.0)
            pj_cam = r_wc @ (ground - p_j)
            pi_cam = r_wc @ (ground - p_i)
            cs.append(Correspondence(pj_cam / pj_cam[2], pi_cam / pi_cam[2]))
        h = PoseHypothesis(
            UnitQuaternion.identity(), t_full / np.linalg.norm(t_full)
        )
        return h, cs, np.linalg.norm(t_full), r_wc

    def test_known_baseline_recovered(self):
        h, cs, true_baseline, r_wc = self._downward_scene()
        scale = recover_scale(h, cs, altitude=20.0, camera_rotation=r_wc)
        assert scale == pytest.approx(true_baseline, rel=1e-9)

    def test_unit_depth_arithmetic(self):
        # altitude 20 with unit-baseline vertical drop 4 -> scale 5
        h, cs, true_baseline, r_wc = self._downward_scene(baseline=5.0, altitude=20.0)
        ms, ns = bearing_arrays(cs)
        from visform.pose.core import _triangulate_arrays

        u, v, ok = _triangulate_arrays(h, ms, ns)
        drops = u * (ms @ (r_wc @ np.array([0.0, 0.0, -1.0])))
        assert np.median(drops) == pytest.approx(4.0, rel=1e-9)
        assert recover_scale(h, cs, 20.0, r_wc) == pytest.approx(5.0, rel=1e-9)

    def test_zero_altitude_rejected(self):
        h, cs, _, r_wc = self._downward_scene()
        with pytest.raises(ValueError):
            recover_scale(h, cs, altitude=0.0, camera_rotation=r_wc)

    def test_level_points_unobservable(self):
        # all points at the cameras' own height: zero vertical drop
        from visform.agent import MOUNT_FORWARD

        rng = np.random.default_rng(9)
        r_wc = MOUNT_FORWARD
        p_i = np.array([0.0, 0.0, 20.0])
        p_j = np.array([0.0, 3.0, 20.0])
        cs = []
        for _ in range(20):
            pt = np.array([rng.uniform(10, 30), rng.uniform(-10, 10), 20.0])
            a = r_wc @ (pt - p_j)
            b = r_wc @ (pt - p_i)
            cs.append(Correspondence(a / a[2], b / b[2]))
        t_full = r_wc @ (p_j - p_i)
        h = PoseHypothesis(UnitQuaternion.identity(), t_full / np.linalg.norm(t_full))
        with pytest.raises(UnobservableScaleError):
            recover_scale(h, cs, altitude=20.0, camera_rotation=r_wc)

    def test_scale_ambiguity_is_explicit(self):
        # scaling the whole scene leaves the pose invariant, only the scale moves
        h1, cs1, b1, r_wc = self._downward_scene(baseline=5.0, altitude=20.0)
        h2, cs2, b2, _ = self._downward_scene(baseline=10.0, altitude=40.0)
        np.testing.assert_allclose(h1.translation, h2.translation, atol=1e-9)
        s1 = recover_scale(h1, cs1, 20.0, r_wc)
        s2 = recover_scale(h2, cs2, 40.0, r_wc)
        assert s2 == pytest.approx(2.0 * s1, rel=1e-9)


class TestRelativePosition:
    def test_identity_mounting(self):
        h = PoseHypothesis(UnitQuaternion.identity(), np.array([1.0, 0.0, 0.0]))
        np.testing.assert_allclose(relative_position(h, 5.0, np.eye(3)), [5.0, 0.0])

    def test_downward_mounting(self):
        from visform.agent import MOUNT_DOWN

        h = PoseHypothesis(UnitQuaternion.identity(), np.array([0.0, 1.0, 0.0]))
        offset = relative_position(h, 2.0, MOUNT_DOWN)
        assert np.linalg.norm(offset) == pytest.approx(2.0)
        np.testing.assert_allclose(offset, (MOUNT_DOWN.T @ np.array([0.0, 2.0, 0.0]))[:2])

    def test_vertical_translation_projects_to_zero(self):
        from visform.agent import MOUNT_DOWN

        # camera-frame translation along camera z = world down for this mounting
        h = PoseHypothesis(UnitQuaternion.identity(), np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(relative_position(h, 1.0, MOUNT_DOWN), [0.0, 0.0], atol=1e-12)

    def test_nonpositive_scale_rejected(self):
        h = PoseHypothesis(UnitQuaternion.identity(), np.array([1.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            relative_position(h, 0.0, np.eye(3))
