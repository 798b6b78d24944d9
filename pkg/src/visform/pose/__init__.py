"""Relative pose estimation from matched feature bearings."""

from ._backend import COMPILED, kernels
from .core import (
    AmbiguousCheiralityError,
    Correspondence,
    DegenerateSampleError,
    DepthPair,
    NoConsensusError,
    NoParallaxError,
    PoseHypothesis,
    RansacParams,
    RansacResult,
    UnobservableScaleError,
    bearing_arrays,
    epipolar_residual,
    epipolar_residuals,
    quasi_random_starts,
    ransac_pose,
    recover_scale,
    relative_position,
    select_cheiral,
    solve_minimal,
    triangulate_depths,
    triangulation_residual,
)

__all__ = [
    "AmbiguousCheiralityError",
    "COMPILED",
    "Correspondence",
    "DegenerateSampleError",
    "DepthPair",
    "NoConsensusError",
    "NoParallaxError",
    "PoseHypothesis",
    "RansacParams",
    "RansacResult",
    "UnobservableScaleError",
    "bearing_arrays",
    "epipolar_residual",
    "epipolar_residuals",
    "kernels",
    "quasi_random_starts",
    "ransac_pose",
    "recover_scale",
    "relative_position",
    "select_cheiral",
    "solve_minimal",
    "triangulate_depths",
    "triangulation_residual",
]
