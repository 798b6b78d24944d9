import numpy as np
import pytest

from visform.geometry import CameraIntrinsics

DEFAULT_INTRINSICS = CameraIntrinsics(focal=250.0, cx=160.0, cy=120.0, width=320, height=240)


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    return DEFAULT_INTRINSICS


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
