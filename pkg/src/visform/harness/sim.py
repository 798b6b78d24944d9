"""Synchronous round-based multi-agent simulation."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from ..agent import (
    AgentState,
    ControlCommand,
    NeighborEstimate,
    PerceptionParams,
    avoid_collision,
    estimate_neighbors,
    step_dynamics,
)
from ..gains import GainSet, control_law, design_gains, load_gains
from ..geometry import CameraPose, formation_error, rotate_planar, rotation_to_quat, rotz
from ..percept import capture, decode_message, encode_message, generate_world
from .config import ScenarioConfig


def derive_seed(master: int, *parts) -> int:
    """Stable 64-bit stage seed from the master seed and stage tags."""
    h = hashlib.sha256(repr((master,) + parts).encode("ascii")).digest()
    return int.from_bytes(h[:8], "little")


@dataclass(frozen=True)
class StepAgentRow:
    """One agent at one round: pre-step state, command, and round metrics."""

    step: int
    time: float
    agent: int
    x: float
    y: float
    z: float
    yaw: float
    ux: float
    uy: float
    rotation: float
    stopped: bool
    pose_rot_err: float  # median over fresh neighbor estimates, radians; nan if none
    pose_dir_err: float
    formation_error: float
    min_pair_distance: float


@dataclass
class TrajectoryLog:
    rows: list[StepAgentRow] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return 0 if not self.rows else self.rows[-1].step + 1

    def agents(self) -> list[int]:
        return sorted({r.agent for r in self.rows})

    def formation_errors(self) -> NDArray[np.float64]:
        """Per-step formation error (shared across agents within a step)."""
        seen: dict[int, float] = {}
        for r in self.rows:
            seen[r.step] = r.formation_error
        return np.array([seen[k] for k in sorted(seen)])

    def min_distances(self) -> NDArray[np.float64]:
        seen: dict[int, float] = {}
        for r in self.rows:
            seen[r.step] = r.min_pair_distance
        return np.array([seen[k] for k in sorted(seen)])


@dataclass(frozen=True)
class RunSummary:
    converged: bool
    steps_run: int
    steps_to_threshold: int  # -1 when the threshold was never reached
    initial_error: float
    final_error: float
    min_distance: float
    pose_rot_err_median: float
    pose_dir_err_median: float
    bytes_exchanged: int

    def lines(self) -> list[tuple[str, object]]:
        return [
            ("converged", self.converged),
            ("steps_run", self.steps_run),
            ("steps_to_threshold", self.steps_to_threshold),
            ("initial_error", self.initial_error),
            ("final_error", self.final_error),
            ("min_distance", self.min_distance),
            ("pose_rot_err_median", self.pose_rot_err_median),
            ("pose_dir_err_median", self.pose_dir_err_median),
            ("bytes_exchanged", self.bytes_exchanged),
        ]


def _min_pairwise(planar: NDArray[np.float64]) -> float:
    n = planar.shape[0]
    if n < 2:
        return math.inf
    d = planar[:, None, :] - planar[None, :, :]
    dist = np.hypot(d[:, :, 0], d[:, :, 1])
    dist[np.eye(n, dtype=bool)] = np.inf
    return float(dist.min())


def run_simulation(cfg: ScenarioConfig) -> tuple[TrajectoryLog, RunSummary]:
    """Run the scenario to termination under synchronous round semantics.

    Each round: every agent captures from the shared world, messages flow to
    graph neighbors, every agent computes its estimates and command from the
    pre-round state, then all states commit simultaneously. Output is a pure
    function of (config, seed).
    """
    spec = cfg.formation.to_spec()
    gains: GainSet = (
        load_gains(cfg.formation.gains_file, spec)
        if cfg.formation.gains_file
        else design_gains(spec)
    )
    intr = cfg.camera.to_intrinsics()
    mounting = cfg.agents.mounting()
    vision = cfg.control.perception == "vision"
    master = cfg.seed

    states = [
        AgentState(
            position=np.array([p[0], p[1], cfg.agents.altitude]),
            yaw=cfg.agents.yaw,
            mounting=mounting,
        )
        for p in cfg.agents.initial
    ]
    n = len(states)
    neighbors = [spec.neighbors(i) for i in range(n)]

    world = generate_world(cfg.world.to_params(), derive_seed(master, "world")) if vision else None
    pparams = PerceptionParams(
        intrinsics=intr,
        ransac=cfg.ransac.to_params(),
        mismatch_rate=cfg.noise.mismatch_rate,
        stale_limit=cfg.control.stale_limit,
        fallback_distance=cfg.control.fallback_distance,
        min_matches=cfg.control.min_matches,
    )
    avoidance = cfg.avoidance.to_params(cfg.control.v_max) if cfg.avoidance.enabled else None
    scale_lo, scale_hi = cfg.robustness.scaling_range
    fixed_rotation = math.radians(cfg.robustness.rotation_deg)

    prev_estimates: list[dict[int, NeighborEstimate]] = [{} for _ in range(n)]
    log = TrajectoryLog()
    bytes_exchanged = 0
    initial_error = math.nan
    steps_to_threshold = -1
    all_rot_errs: list[float] = []
    all_dir_errs: list[float] = []
    min_distance_run = math.inf

    step = 0
    for step in range(cfg.termination.max_steps):
        planar = np.array([s.position[:2] for s in states])
        err = formation_error(planar, spec.positions)
        min_dist = _min_pairwise(planar)
        min_distance_run = min(min_distance_run, min_dist)
        if step == 0:
            initial_error = err
        elif initial_error > 0.0 and err <= cfg.termination.error_ratio * initial_error:
            steps_to_threshold = step
            break

        captures = []
        payloads = []
        if vision:
            for i, s in enumerate(states):
                cam = CameraPose(s.position, s.mounting @ rotz(s.yaw).T)
                captures.append(
                    capture(
                        world,
                        cam,
                        intr,
                        cfg.noise.pixel_sigma,
                        derive_seed(master, "capture", i, step),
                        descriptor_noise=cfg.noise.descriptor_sigma,
                    )
                )
                payloads.append(encode_message(captures[i], sender=i, frame=step))

        commands: list[ControlCommand] = []
        pose_errs: list[tuple[float, float]] = []
        for i, s in enumerate(states):
            if vision:
                inbox = []
                for j in neighbors[i]:
                    bytes_exchanged += len(payloads[j])
                    inbox.append(decode_message(payloads[j]))
                estimates = estimate_neighbors(
                    s,
                    inbox,
                    captures[i],
                    prev_estimates[i],
                    pparams,
                    derive_seed(master, "estimate", i, step),
                )
                prev_estimates[i] = estimates
                rot_errs, dir_errs = _pose_errors(i, s, states, estimates)
                pose_errs.append(
                    (
                        float(np.median(rot_errs)) if rot_errs else math.nan,
                        float(np.median(dir_errs)) if dir_errs else math.nan,
                    )
                )
                all_rot_errs.extend(rot_errs)
                all_dir_errs.extend(dir_errs)
            else:
                estimates = {}
                for j in neighbors[i]:
                    offset_world = states[j].position[:2] - s.position[:2]
                    offset = rotate_planar(offset_world, -s.yaw)
                    estimates[j] = NeighborEstimate(
                        neighbor=j, offset=offset, distance=float(np.linalg.norm(offset))
                    )
                prev_estimates[i] = estimates
                pose_errs.append((math.nan, math.nan))

            u = control_law(i, [(j, e.offset) for j, e in sorted(estimates.items())], gains)
            if scale_lo != 1.0 or scale_hi != 1.0:
                rng = np.random.Generator(
                    np.random.Philox(key=derive_seed(master, "scaling", i, step))
                )
                u = u * rng.uniform(scale_lo, scale_hi)
            if fixed_rotation != 0.0:
                u = rotate_planar(u, fixed_rotation)
            if avoidance is not None:
                cmd = avoid_collision(u, list(estimates.values()), avoidance)
            else:
                cmd = ControlCommand(u=u)
            commands.append(cmd)

        for i, s in enumerate(states):
            log.rows.append(
                StepAgentRow(
                    step=step,
                    time=step * cfg.control.dt,
                    agent=i,
                    x=float(s.position[0]),
                    y=float(s.position[1]),
                    z=float(s.position[2]),
                    yaw=s.yaw,
                    ux=float(commands[i].u[0]),
                    uy=float(commands[i].u[1]),
                    rotation=commands[i].rotation,
                    stopped=commands[i].stopped,
                    pose_rot_err=pose_errs[i][0],
                    pose_dir_err=pose_errs[i][1],
                    formation_error=err,
                    min_pair_distance=min_dist,
                )
            )
        states = [
            step_dynamics(s, commands[i], cfg.control.dt, cfg.control.v_max)
            for i, s in enumerate(states)
        ]
    else:
        step = cfg.termination.max_steps

    planar = np.array([s.position[:2] for s in states])
    final_error = formation_error(planar, spec.positions)
    min_distance_run = min(min_distance_run, _min_pairwise(planar))
    summary = RunSummary(
        converged=steps_to_threshold >= 0,
        steps_run=len({r.step for r in log.rows}),
        steps_to_threshold=steps_to_threshold,
        initial_error=initial_error,
        final_error=final_error,
        min_distance=min_distance_run,
        pose_rot_err_median=float(np.median(all_rot_errs)) if all_rot_errs else math.nan,
        pose_dir_err_median=float(np.median(all_dir_errs)) if all_dir_errs else math.nan,
        bytes_exchanged=bytes_exchanged,
    )
    return log, summary


def _pose_errors(
    i: int,
    state: AgentState,
    states: list[AgentState],
    estimates: dict[int, NeighborEstimate],
) -> tuple[list[float], list[float]]:
    """Rotation/direction errors of this round's fresh estimates vs ground truth."""
    rot_errs: list[float] = []
    dir_errs: list[float] = []
    r_wc_i = state.mounting @ rotz(state.yaw).T
    for j, est in estimates.items():
        if est.freshness != 0 or est.rel_quaternion is None:
            continue
        other = states[j]
        r_wc_j = other.mounting @ rotz(other.yaw).T
        r_true = r_wc_i @ r_wc_j.T
        t_true = r_wc_i @ (other.position - state.position)
        norm = np.linalg.norm(t_true)
        if norm < 1e-9:
            continue
        t_true = t_true / norm
        rot_errs.append(est.rel_quaternion.angle_to(rotation_to_quat(r_true)))
        dot = abs(float(np.dot(est.rel_direction, t_true)))
        dir_errs.append(float(np.arccos(min(1.0, dot))))
    return rot_errs, dir_errs
