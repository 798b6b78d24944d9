"""Scenario configuration, round-based scheduler, outputs, CLI."""

from .config import ConfigError, ScenarioConfig, load_config, parse_config, to_toml
from .outputs import emit_outputs, load_trajectory_csv
from .sim import RunSummary, TrajectoryLog, derive_seed, run_simulation

__all__ = [
    "ConfigError",
    "RunSummary",
    "ScenarioConfig",
    "TrajectoryLog",
    "derive_seed",
    "emit_outputs",
    "load_config",
    "load_trajectory_csv",
    "parse_config",
    "run_simulation",
    "to_toml",
]
