"""Synthetic two-view scenes with known ground truth for tests and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..geometry import CameraIntrinsics, UnitQuaternion, backproject, quat_to_rotation
from .core import Correspondence

DEFAULT_INTRINSICS = CameraIntrinsics(focal=250.0, cx=160.0, cy=120.0, width=320, height=240)


@dataclass(frozen=True)
class TwoViewScene:
    """Ground-truth relative pose plus the correspondences observing it."""

    correspondences: list[Correspondence]
    quaternion: UnitQuaternion
    translation: NDArray[np.float64]  # unit direction, m-side camera in n-side frame
    true_match: NDArray[np.bool_]
    depths_m: NDArray[np.float64]

    def rotation_error(self, q: UnitQuaternion) -> float:
        return self.quaternion.angle_to(q)

    def direction_error(self, t: NDArray[np.float64]) -> float:
        dot = abs(float(np.dot(self.translation, t)))
        return float(np.arccos(min(1.0, dot)))


def random_scene(
    seed: int,
    n_points: int = 20,
    *,
    noise_px: float = 0.0,
    mismatch_rate: float = 0.0,
    max_angle_deg: float = 25.0,
    depth_range: tuple[float, float] = (4.0, 10.0),
    baseline: float = 1.0,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
) -> TwoViewScene:
    """Build a two-view scene from a random pose and in-frame landmarks.

    Landmarks are drawn in the m-side camera frame and kept only when they
    project inside both images, so the correspondences satisfy the rigid-motion
    constraint by construction (before noise and mismatches).
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(max_angle_deg) * rng.uniform(0.2, 1.0)
    q = UnitQuaternion.from_axis_angle(axis, float(angle))
    rot = quat_to_rotation(q)
    t_dir = rng.normal(size=3)
    # bias the baseline toward the image plane so parallax is generic but views overlap
    t_dir[2] *= 0.3
    t_dir /= np.linalg.norm(t_dir)
    t = baseline * t_dir

    ms: list[NDArray] = []
    ns: list[NDArray] = []
    depths: list[float] = []
    attempts = 0
    while len(ms) < n_points and attempts < 200 * n_points:
        attempts += 1
        px = rng.uniform(0.05 * intrinsics.width, 0.95 * intrinsics.width)
        py = rng.uniform(0.05 * intrinsics.height, 0.95 * intrinsics.height)
        depth = rng.uniform(*depth_range)
        m = backproject((px, py), intrinsics)
        p1 = depth * m
        p2 = rot @ p1 + t
        if p2[2] <= 0.1:
            continue
        u2 = intrinsics.focal * p2[0] / p2[2] + intrinsics.cx
        v2 = intrinsics.focal * p2[1] / p2[2] + intrinsics.cy
        if not (0 <= u2 <= intrinsics.width and 0 <= v2 <= intrinsics.height):
            continue
        if noise_px > 0.0:
            px += rng.normal(0.0, noise_px)
            py += rng.normal(0.0, noise_px)
            u2 += rng.normal(0.0, noise_px)
            v2 += rng.normal(0.0, noise_px)
        ms.append(backproject((px, py), intrinsics))
        ns.append(backproject((u2, v2), intrinsics))
        depths.append(depth)
    if len(ms) < n_points:
        raise RuntimeError("could not realize the requested scene geometry")

    true_match = np.ones(n_points, dtype=bool)
    if mismatch_rate > 0.0:
        k = int(round(mismatch_rate * n_points))
        if k >= 2:
            chosen = rng.choice(n_points, size=k, replace=False)
            rolled = np.roll(chosen, 1)
            ns_arr = [ns[i] for i in range(n_points)]
            for dst, src in zip(chosen, rolled):
                ns[dst] = ns_arr[src]
            true_match[chosen] = False

    cs = [Correspondence(m, n) for m, n in zip(ms, ns)]
    return TwoViewScene(cs, q, t / np.linalg.norm(t), true_match, np.array(depths))
