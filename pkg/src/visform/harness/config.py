"""Scenario configuration: TOML schema, validation, canonical serialization."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..agent import MOUNT_DOWN, MOUNT_FORWARD, AvoidanceParams
from ..gains import FormationSpec
from ..geometry import CameraIntrinsics
from ..percept import WorldParams
from ..pose import RansacParams


class ConfigError(ValueError):
    """Schema violation, reported with the offending field path."""


def _req(table: dict, section: str, key: str):
    if key not in table:
        raise ConfigError(f"{section}.{key}: required field is missing")
    return table[key]


def _num(value, section: str, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    return float(value)


def _pairs(value, section: str, key: str) -> list[list[float]]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{section}.{key}: expected a non-empty list of pairs")
    out = []
    for row in value:
        if not isinstance(row, list) or len(row) != 2:
            raise ConfigError(f"{section}.{key}: every entry must be a pair")
        out.append([_num(row[0], section, key), _num(row[1], section, key)])
    return out


def grid8_adjacency(n: int) -> np.ndarray:
    """8-neighbor adjacency of a row-major square grid of n agents."""
    side = int(round(math.sqrt(n)))
    if side * side != n:
        raise ConfigError(f"formation.adjacency: grid8 needs a square agent count, got {n}")
    adj = np.zeros((n, n), dtype=bool)
    for a in range(n):
        ra, ca = divmod(a, side)
        for b in range(n):
            if a == b:
                continue
            rb, cb = divmod(b, side)
            if max(abs(ra - rb), abs(ca - cb)) == 1:
                adj[a, b] = True
    return adj


@dataclass(frozen=True)
class FormationConfig:
    positions: list[list[float]]
    adjacency: str | list[list[int]] = "complete"
    gains_file: str = ""

    def to_spec(self) -> FormationSpec:
        n = len(self.positions)
        if isinstance(self.adjacency, str):
            if self.adjacency == "complete":
                adj = ~np.eye(n, dtype=bool)
            elif self.adjacency == "grid8":
                adj = grid8_adjacency(n)
            else:
                raise ConfigError(f"formation.adjacency: unknown preset {self.adjacency!r}")
        else:
            adj = np.zeros((n, n), dtype=bool)
            for pair in self.adjacency:
                i, j = int(pair[0]), int(pair[1])
                if not (0 <= i < n and 0 <= j < n) or i == j:
                    raise ConfigError(f"formation.adjacency: bad edge [{i}, {j}]")
                adj[i, j] = adj[j, i] = True
        try:
            return FormationSpec(np.asarray(self.positions), adj)
        except ValueError as exc:
            raise ConfigError(f"formation: {exc}") from exc


@dataclass(frozen=True)
class AgentsConfig:
    initial: list[list[float]]
    altitude: float
    yaw: float = 0.0
    camera: str = "down"

    def mounting(self) -> np.ndarray:
        return MOUNT_DOWN if self.camera == "down" else MOUNT_FORWARD


@dataclass(frozen=True)
class CameraConfig:
    focal: float = 250.0
    width: int = 320
    height: int = 240
    cx: float = 160.0
    cy: float = 120.0

    def to_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, self.cx, self.cy, self.width, self.height)


@dataclass(frozen=True)
class WorldConfig:
    count: int = 500
    x_range: list[float] = field(default_factory=lambda: [-50.0, 50.0])
    y_range: list[float] = field(default_factory=lambda: [-50.0, 50.0])
    elevated_fraction: float = 0.0
    max_elevation: float = 0.0

    def to_params(self) -> WorldParams:
        return WorldParams(
            count=self.count,
            x_range=(self.x_range[0], self.x_range[1]),
            y_range=(self.y_range[0], self.y_range[1]),
            elevated_fraction=self.elevated_fraction,
            max_elevation=self.max_elevation,
        )


@dataclass(frozen=True)
class NoiseConfig:
    pixel_sigma: float = 0.0
    mismatch_rate: float = 0.0
    descriptor_sigma: float = 0.02


@dataclass(frozen=True)
class ControlConfig:
    dt: float = 0.05
    v_max: float = 2.0
    perception: str = "vision"
    stale_limit: int = 10
    fallback_distance: float = 4.0
    min_matches: int = 8


@dataclass(frozen=True)
class AvoidanceConfig:
    enabled: bool = True
    safety_radius: float = 2.0
    horizon: float = 2.0
    grid_step_deg: float = 1.0

    def to_params(self, v_max: float) -> AvoidanceParams:
        return AvoidanceParams(
            safety_radius=self.safety_radius,
            horizon=self.horizon,
            grid_step=math.radians(self.grid_step_deg),
            v_max=v_max,
        )


@dataclass(frozen=True)
class RobustnessConfig:
    """Hooks for the control-property experiments: per-agent per-step positive
    scaling of the commands plus a fixed rotation applied to all of them."""

    scaling_range: list[float] = field(default_factory=lambda: [1.0, 1.0])
    rotation_deg: float = 0.0


@dataclass(frozen=True)
class RansacConfig:
    threshold: float
    confidence: float = 0.999
    max_iterations: int = 50

    def to_params(self, seed: int = 0) -> RansacParams:
        return RansacParams(
            threshold=self.threshold,
            confidence=self.confidence,
            max_iterations=self.max_iterations,
            seed=seed,
        )


@dataclass(frozen=True)
class TerminationConfig:
    max_steps: int = 1000
    error_ratio: float = 1e-3


@dataclass(frozen=True)
class ScenarioConfig:
    formation: FormationConfig
    agents: AgentsConfig
    camera: CameraConfig
    world: WorldConfig
    noise: NoiseConfig
    control: ControlConfig
    avoidance: AvoidanceConfig
    robustness: RobustnessConfig
    ransac: RansacConfig
    termination: TerminationConfig
    seed: int = 0

    def validate(self) -> "ScenarioConfig":
        spec = self.formation.to_spec()
        if len(self.agents.initial) != spec.n:
            raise ConfigError(
                f"agents.initial: {len(self.agents.initial)} entries for {spec.n} agents"
            )
        if self.agents.altitude <= 0:
            raise ConfigError("agents.altitude: must be > 0")
        if not -math.pi < self.agents.yaw <= math.pi:
            raise ConfigError("agents.yaw: must lie in (-pi, pi]")
        if self.agents.camera not in ("down", "forward"):
            raise ConfigError(f"agents.camera: unknown mounting {self.agents.camera!r}")
        if self.control.dt <= 0:
            raise ConfigError("control.dt: must be > 0")
        if self.control.v_max <= 0:
            raise ConfigError("control.v_max: must be > 0")
        if self.control.perception not in ("vision", "oracle"):
            raise ConfigError(f"control.perception: unknown mode {self.control.perception!r}")
        if self.control.stale_limit < 0:
            raise ConfigError("control.stale_limit: must be >= 0")
        if not 0.0 <= self.noise.mismatch_rate < 1.0:
            raise ConfigError("noise.mismatch_rate: must be in [0, 1)")
        if self.noise.pixel_sigma < 0:
            raise ConfigError("noise.pixel_sigma: must be >= 0")
        if len(self.robustness.scaling_range) != 2 or not (
            0.0 < self.robustness.scaling_range[0] <= self.robustness.scaling_range[1]
        ):
            raise ConfigError("robustness.scaling_range: needs 0 < lo <= hi")
        if self.termination.max_steps < 1:
            raise ConfigError("termination.max_steps: must be >= 1")
        if self.termination.error_ratio < 0:
            raise ConfigError("termination.error_ratio: must be >= 0")
        if self.ransac.threshold <= 0:
            raise ConfigError("ransac.threshold: must be > 0")
        if not 0.0 < self.ransac.confidence < 1.0:
            raise ConfigError("ransac.confidence: must be in (0, 1)")
        try:
            self.camera.to_intrinsics()
            self.world.to_params()
            self.avoidance.to_params(self.control.v_max)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)}")


def to_toml(cfg: ScenarioConfig) -> str:
    """Canonical serialization of the fully materialized config.

    Loading the output reproduces the config exactly, byte for byte.
    """
    lines = [f"seed = {cfg.seed}", ""]

    def emit(section: str, items: list[tuple[str, object]]) -> None:
        lines.append(f"[{section}]")
        for k, v in items:
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")

    adjacency = cfg.formation.adjacency
    if not isinstance(adjacency, str):
        adjacency = [[int(i), int(j)] for i, j in adjacency]
    emit(
        "formation",
        [
            ("positions", cfg.formation.positions),
            ("adjacency", adjacency),
            ("gains_file", cfg.formation.gains_file),
        ],
    )
    emit(
        "agents",
        [
            ("initial", cfg.agents.initial),
            ("altitude", float(cfg.agents.altitude)),
            ("yaw", float(cfg.agents.yaw)),
            ("camera", cfg.agents.camera),
        ],
    )
    emit(
        "camera",
        [
            ("focal", float(cfg.camera.focal)),
            ("width", cfg.camera.width),
            ("height", cfg.camera.height),
            ("cx", float(cfg.camera.cx)),
            ("cy", float(cfg.camera.cy)),
        ],
    )
    emit(
        "world",
        [
            ("count", cfg.world.count),
            ("x_range", [float(x) for x in cfg.world.x_range]),
            ("y_range", [float(y) for y in cfg.world.y_range]),
            ("elevated_fraction", float(cfg.world.elevated_fraction)),
            ("max_elevation", float(cfg.world.max_elevation)),
        ],
    )
    emit(
        "noise",
        [
            ("pixel_sigma", float(cfg.noise.pixel_sigma)),
            ("mismatch_rate", float(cfg.noise.mismatch_rate)),
            ("descriptor_sigma", float(cfg.noise.descriptor_sigma)),
        ],
    )
    emit(
        "control",
        [
            ("dt", float(cfg.control.dt)),
            ("v_max", float(cfg.control.v_max)),
            ("perception", cfg.control.perception),
            ("stale_limit", cfg.control.stale_limit),
            ("fallback_distance", float(cfg.control.fallback_distance)),
            ("min_matches", cfg.control.min_matches),
        ],
    )
    emit(
        "avoidance",
        [
            ("enabled", cfg.avoidance.enabled),
            ("safety_radius", float(cfg.avoidance.safety_radius)),
            ("horizon", float(cfg.avoidance.horizon)),
            ("grid_step_deg", float(cfg.avoidance.grid_step_deg)),
        ],
    )
    emit(
        "robustness",
        [
            ("scaling_range", [float(x) for x in cfg.robustness.scaling_range]),
            ("rotation_deg", float(cfg.robustness.rotation_deg)),
        ],
    )
    emit(
        "ransac",
        [
            ("threshold", float(cfg.ransac.threshold)),
            ("confidence", float(cfg.ransac.confidence)),
            ("max_iterations", cfg.ransac.max_iterations),
        ],
    )
    emit(
        "termination",
        [
            ("max_steps", cfg.termination.max_steps),
            ("error_ratio", float(cfg.termination.error_ratio)),
        ],
    )
    return "\n".join(lines[:-1]) + "\n"


def parse_config(data: dict) -> ScenarioConfig:
    """Materialize every default so the config re-serializes bit-identically."""
    formation_t = data.get("formation")
    if not isinstance(formation_t, dict):
        raise ConfigError("formation: section is missing")
    agents_t = data.get("agents")
    if not isinstance(agents_t, dict):
        raise ConfigError("agents: section is missing")
    camera_t = data.get("camera", {})
    world_t = data.get("world", {})
    noise_t = data.get("noise", {})
    control_t = data.get("control", {})
    avoid_t = data.get("avoidance", {})
    robust_t = data.get("robustness", {})
    ransac_t = data.get("ransac", {})
    term_t = data.get("termination", {})

    adjacency = formation_t.get("adjacency", "complete")
    if not isinstance(adjacency, str):
        adjacency = [[int(p[0]), int(p[1])] for p in adjacency]
    formation = FormationConfig(
        positions=_pairs(_req(formation_t, "formation", "positions"), "formation", "positions"),
        adjacency=adjacency,
        gains_file=str(formation_t.get("gains_file", "")),
    )
    agents = AgentsConfig(
        initial=_pairs(_req(agents_t, "agents", "initial"), "agents", "initial"),
        altitude=_num(_req(agents_t, "agents", "altitude"), "agents", "altitude"),
        yaw=_num(agents_t.get("yaw", 0.0), "agents", "yaw"),
        camera=str(agents_t.get("camera", "down")),
    )
    focal = _num(camera_t.get("focal", 250.0), "camera", "focal")
    width = int(camera_t.get("width", 320))
    height = int(camera_t.get("height", 240))
    camera = CameraConfig(
        focal=focal,
        width=width,
        height=height,
        cx=_num(camera_t.get("cx", width / 2.0), "camera", "cx"),
        cy=_num(camera_t.get("cy", height / 2.0), "camera", "cy"),
    )
    world = WorldConfig(
        count=int(world_t.get("count", 500)),
        x_range=[_num(x, "world", "x_range") for x in world_t.get("x_range", [-50.0, 50.0])],
        y_range=[_num(y, "world", "y_range") for y in world_t.get("y_range", [-50.0, 50.0])],
        elevated_fraction=_num(world_t.get("elevated_fraction", 0.0), "world", "elevated_fraction"),
        max_elevation=_num(world_t.get("max_elevation", 0.0), "world", "max_elevation"),
    )
    noise = NoiseConfig(
        pixel_sigma=_num(noise_t.get("pixel_sigma", 0.0), "noise", "pixel_sigma"),
        mismatch_rate=_num(noise_t.get("mismatch_rate", 0.0), "noise", "mismatch_rate"),
        descriptor_sigma=_num(noise_t.get("descriptor_sigma", 0.02), "noise", "descriptor_sigma"),
    )
    control = ControlConfig(
        dt=_num(control_t.get("dt", 0.05), "control", "dt"),
        v_max=_num(control_t.get("v_max", 2.0), "control", "v_max"),
        perception=str(control_t.get("perception", "vision")),
        stale_limit=int(control_t.get("stale_limit", 10)),
        fallback_distance=_num(control_t.get("fallback_distance", 4.0), "control", "fallback_distance"),
        min_matches=int(control_t.get("min_matches", 8)),
    )
    avoidance = AvoidanceConfig(
        enabled=bool(avoid_t.get("enabled", True)),
        safety_radius=_num(avoid_t.get("safety_radius", 2.0), "avoidance", "safety_radius"),
        horizon=_num(avoid_t.get("horizon", 2.0), "avoidance", "horizon"),
        grid_step_deg=_num(avoid_t.get("grid_step_deg", 1.0), "avoidance", "grid_step_deg"),
    )
    robustness = RobustnessConfig(
        scaling_range=[_num(x, "robustness", "scaling_range") for x in robust_t.get("scaling_range", [1.0, 1.0])],
        rotation_deg=_num(robust_t.get("rotation_deg", 0.0), "robustness", "rotation_deg"),
    )
    # noiseless runs keep a tight residual gate; pixel noise widens it to 2/focal
    default_threshold = 1e-4 if noise.pixel_sigma == 0.0 else 2.0 / focal
    ransac = RansacConfig(
        threshold=_num(ransac_t.get("threshold", default_threshold), "ransac", "threshold"),
        confidence=_num(ransac_t.get("confidence", 0.999), "ransac", "confidence"),
        max_iterations=int(ransac_t.get("max_iterations", 50)),
    )
    termination = TerminationConfig(
        max_steps=int(term_t.get("max_steps", 1000)),
        error_ratio=_num(term_t.get("error_ratio", 1e-3), "termination", "error_ratio"),
    )
    cfg = ScenarioConfig(
        formation=formation,
        agents=agents,
        camera=camera,
        world=world,
        noise=noise,
        control=control,
        avoidance=avoidance,
        robustness=robustness,
        ransac=ransac,
        termination=termination,
        seed=int(data.get("seed", 0)),
    )
    return cfg.validate()


SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def resolve_scenario(name_or_path) -> Path:
    """Accept a filesystem path or the bare name of a shipped scenario."""
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = SCENARIO_DIR / f"{name_or_path}.toml"
    if shipped.exists():
        return shipped
    raise FileNotFoundError(f"no scenario file or shipped scenario named {name_or_path!r}")


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario file; all defaults are materialized."""
    with open(resolve_scenario(path), "rb") as fh:
        data = tomllib.load(fh)
    return parse_config(data)
