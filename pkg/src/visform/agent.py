"""Per-agent control stack: estimate neighbors from feature messages, apply the
gain law, rotate-or-stop collision avoidance, saturated single-integrator step."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from .geometry import CameraIntrinsics, backproject, is_rotation, rotate_planar
from .percept import FeatureMessage, FeaturePoint, match_features
from .pose import (
    AmbiguousCheiralityError,
    Correspondence,
    NoConsensusError,
    RansacParams,
    UnobservableScaleError,
    ransac_pose,
    recover_scale,
    relative_position,
    select_cheiral,
)

log = logging.getLogger(__name__)

MAX_AVOID_ROTATION = math.pi / 2.0

# camera z looks straight down (body -z), x along body y
MOUNT_DOWN = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
# camera z looks forward (body +x), image x right, image y down
MOUNT_FORWARD = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class AgentState:
    """World-frame vehicle state during the constant-altitude phase."""

    position: NDArray[np.float64]  # (3,) meters
    yaw: float  # radians in (-pi, pi]
    mounting: NDArray[np.float64]  # body -> camera rotation

    def __post_init__(self) -> None:
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        m = np.asarray(self.mounting, dtype=np.float64).reshape(3, 3)
        if not (-math.pi < self.yaw <= math.pi):
            raise ValueError("yaw must lie in (-pi, pi]")
        if not is_rotation(m):
            raise ValueError("camera mounting must be a rotation matrix")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "mounting", m)

    @property
    def altitude(self) -> float:
        return float(self.position[2])


@dataclass(frozen=True)
class NeighborEstimate:
    neighbor: int
    offset: NDArray[np.float64]  # q_j^i, body-frame planar meters
    distance: float
    freshness: int = 0  # steps since the last successful estimate
    scale_observed: bool = True
    # estimated relative camera pose, logged for diagnostics but never fed back
    rel_quaternion: object = None
    rel_direction: NDArray[np.float64] | None = None

    def avoidance_point(self) -> NDArray[np.float64]:
        d = float(np.linalg.norm(self.offset))
        if d < 1e-12:
            return np.asarray(self.offset, dtype=np.float64)
        return np.asarray(self.offset, dtype=np.float64) / d * self.distance


@dataclass(frozen=True)
class AvoidanceParams:
    safety_radius: float = 2.0  # meters
    horizon: float = 2.0  # seconds
    grid_step: float = math.radians(1.0)
    v_max: float = 2.0  # m/s, caps the predicted travel

    def __post_init__(self) -> None:
        if self.safety_radius <= 0 or self.horizon <= 0 or self.v_max <= 0:
            raise ValueError("avoidance parameters must be positive")
        if not 0.0 < self.grid_step <= math.radians(5.0):
            raise ValueError("grid step must be in (0, 5 degrees]")


@dataclass(frozen=True)
class ControlCommand:
    u: NDArray[np.float64]  # (2,) m/s, body frame
    rotation: float = 0.0  # applied avoidance rotation, radians
    stopped: bool = False

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=np.float64).reshape(2)
        if self.stopped and float(np.linalg.norm(u)) != 0.0:
            raise ValueError("a stopped command must carry zero velocity")
        if abs(self.rotation) > MAX_AVOID_ROTATION + 1e-12:
            raise ValueError("avoidance rotation exceeds 90 degrees")
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class PerceptionParams:
    """Knobs for the message -> neighbor-offset pipeline."""

    intrinsics: CameraIntrinsics
    ransac: RansacParams
    mismatch_rate: float = 0.0
    stale_limit: int = 10
    fallback_distance: float = 4.0
    min_matches: int = 8


def _point_segment_distance(p: NDArray, end: NDArray) -> float:
    """Distance from point p to the segment from the origin to `end`."""
    seg2 = float(end @ end)
    if seg2 < 1e-24:
        return float(np.linalg.norm(p))
    s = float(p @ end) / seg2
    s = min(1.0, max(0.0, s))
    return float(np.linalg.norm(p - s * end))


def avoid_collision(
    u: NDArray[np.float64], neighbors: list[NeighborEstimate], params: AvoidanceParams
) -> ControlCommand:
    """Rotate the command away from predicted conflicts, or stop.

    Sweeps rotations 0, +step, -step, ... up to +/-90 degrees (counterclockwise
    preferred on ties) and returns the first whose straight prediction segment
    keeps the safety radius to every neighbor point; if none does, stops.
    Neighbors are treated as static over the horizon.
    """
    u = np.asarray(u, dtype=np.float64).reshape(2)
    speed = min(float(np.linalg.norm(u)), params.v_max)
    if speed < 1e-12:
        return ControlCommand(u=u, rotation=0.0, stopped=False)
    travel = speed * params.horizon
    direction = u / float(np.linalg.norm(u))
    points = [e.avoidance_point() for e in neighbors]

    def clears(theta: float) -> bool:
        end = rotate_planar(direction, theta) * travel
        return all(_point_segment_distance(p, end) >= params.safety_radius for p in points)

    n_steps = int(math.ceil(MAX_AVOID_ROTATION / params.grid_step - 1e-12))
    angles = [0.0]
    for k in range(1, n_steps + 1):
        theta = min(k * params.grid_step, MAX_AVOID_ROTATION)
        angles.extend([theta, -theta])
    for theta in angles:
        if clears(theta):
            return ControlCommand(u=rotate_planar(u, theta), rotation=theta, stopped=False)
    return ControlCommand(u=np.zeros(2), rotation=0.0, stopped=True)


def step_dynamics(
    state: AgentState, command: ControlCommand, dt: float, v_max: float
) -> AgentState:
    """Saturated single-integrator planar step; altitude and yaw are held."""
    if dt <= 0 or v_max <= 0:
        raise ValueError("dt and v_max must be positive")
    u = command.u
    speed = float(np.linalg.norm(u))
    if speed > v_max:
        u = u * (v_max / speed)
    u_world = rotate_planar(u, state.yaw)
    pos = state.position.copy()
    pos[0] += u_world[0] * dt
    pos[1] += u_world[1] * dt
    return replace(state, position=pos)


def _correspondences(
    neighbor_feats: list[FeaturePoint],
    own_feats: list[FeaturePoint],
    match,
    intrinsics: CameraIntrinsics,
) -> list[Correspondence]:
    out = []
    for ia, ib in zip(match.indices_a, match.indices_b):
        m = backproject(neighbor_feats[int(ia)].pixel, intrinsics)
        n = backproject(own_feats[int(ib)].pixel, intrinsics)
        out.append(Correspondence(m, n))
    return out


def estimate_neighbors(
    state: AgentState,
    inbox: list[FeatureMessage],
    own_features: list[FeaturePoint],
    previous: dict[int, NeighborEstimate],
    params: PerceptionParams,
    seed: int,
) -> dict[int, NeighborEstimate]:
    """Fuse neighbor feature messages into planar offsets q_j^i.

    Per message: match descriptors, estimate the relative pose with RANSAC,
    resolve cheirality, anchor the scale on own altitude, and rotate into the
    body frame. Any stage failure falls back to the previous estimate with its
    freshness incremented; estimates staler than the limit are dropped.
    """
    estimates: dict[int, NeighborEstimate] = {}
    for k, msg in enumerate(inbox):
        j = int(msg.sender)
        fresh = _estimate_one(state, msg, own_features, params, seed + 7919 * k)
        if fresh is not None:
            estimates[j] = fresh
            continue
        prev = previous.get(j)
        if prev is None:
            continue
        aged = replace(prev, freshness=prev.freshness + 1)
        if aged.freshness > params.stale_limit:
            log.debug("dropping stale estimate of neighbor %d (age %d)", j, aged.freshness)
            continue
        estimates[j] = aged
    return estimates


def _estimate_one(
    state: AgentState,
    msg: FeatureMessage,
    own_features: list[FeaturePoint],
    params: PerceptionParams,
    seed: int,
) -> NeighborEstimate | None:
    if len(own_features) == 0 or len(msg.features) == 0:
        return None
    match = match_features(msg.features, own_features, params.mismatch_rate, seed)
    if len(match) < max(params.min_matches, 5):
        return None
    cs = _correspondences(msg.features, own_features, match, params.intrinsics)
    try:
        rr = ransac_pose(cs, replace(params.ransac, seed=seed))
        inliers = [c for c, keep in zip(cs, rr.inlier_mask) if keep]
        best = select_cheiral([rr.best], inliers)
    except (NoConsensusError, AmbiguousCheiralityError, ValueError):
        return None
    # level flight: the m-side camera orientation equals the mounting up to yaw,
    # which leaves the vertical component unchanged
    try:
        scale = recover_scale(best, inliers, state.altitude, state.mounting)
        offset = relative_position(best, scale, state.mounting)
        return NeighborEstimate(
            neighbor=int(msg.sender),
            offset=offset,
            distance=float(np.linalg.norm(offset)),
            freshness=0,
            scale_observed=True,
            rel_quaternion=best.quaternion,
            rel_direction=best.translation,
        )
    except UnobservableScaleError:
        offset = relative_position(best, 1.0, state.mounting)
        return NeighborEstimate(
            neighbor=int(msg.sender),
            offset=offset,
            distance=params.fallback_distance,
            freshness=0,
            scale_observed=False,
            rel_quaternion=best.quaternion,
            rel_direction=best.translation,
        )
