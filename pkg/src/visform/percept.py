"""Synthetic perception: landmark worlds, noisy feature capture, descriptor
matching with injected mismatches, and the binary feature-message codec."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geometry import CameraIntrinsics, CameraPose, project_many

DESCRIPTOR_LEN = 64
HEADER_BYTES = 16
FEATURE_BYTES = 4 * (2 + DESCRIPTOR_LEN)  # 264: x, y + descriptor, single precision
RATIO_TEST = 0.8
_DESCRIPTOR_SALT = 0x5EED_FACE


class MalformedMessageError(Exception):
    """Feature message bytes do not match the declared layout."""


@dataclass(frozen=True)
class WorldParams:
    count: int = 500
    x_range: tuple[float, float] = (-50.0, 50.0)
    y_range: tuple[float, float] = (-50.0, 50.0)
    elevated_fraction: float = 0.0
    max_elevation: float = 0.0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("landmark count must be >= 1")
        if self.x_range[0] >= self.x_range[1] or self.y_range[0] >= self.y_range[1]:
            raise ValueError("world bounds must be non-empty")
        if not 0.0 <= self.elevated_fraction <= 1.0:
            raise ValueError("elevated_fraction must be in [0, 1]")


@dataclass(frozen=True)
class World:
    """Static landmarks with stable integer identities."""

    landmarks: NDArray[np.float64]  # (N, 3) meters
    ids: NDArray[np.int64]
    params: WorldParams
    seed: int


def generate_world(params: WorldParams, seed: int) -> World:
    """Uniform ground-plane landmarks plus optional elevated clutter."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = params.count
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(*params.x_range, size=n)
    pts[:, 1] = rng.uniform(*params.y_range, size=n)
    n_elev = int(round(params.elevated_fraction * n))
    if n_elev > 0:
        pts[:n_elev, 2] = rng.uniform(0.0, params.max_elevation, size=n_elev)
    return World(landmarks=pts, ids=np.arange(n, dtype=np.int64), params=params, seed=seed)


def descriptor_for(landmark_id: int) -> NDArray[np.float32]:
    """Deterministic unit-norm 64-vector code of a landmark identity."""
    key = ((int(landmark_id) & 0xFFFFFFFFFFFFFFFF) << 64) | _DESCRIPTOR_SALT
    rng = np.random.Generator(np.random.Philox(key=key))
    d = rng.standard_normal(DESCRIPTOR_LEN)
    d /= np.linalg.norm(d)
    return d.astype(np.float32)


@dataclass(frozen=True)
class FeaturePoint:
    """One extracted feature: pixel, descriptor and (simulation-only) identity.

    The landmark id never enters the wire payload; it exists so matches can be
    scored against ground truth.
    """

    pixel: NDArray[np.float32]  # (2,)
    descriptor: NDArray[np.float32]  # (64,)
    landmark_id: int

    def __post_init__(self) -> None:
        px = np.asarray(self.pixel, dtype=np.float32).reshape(2)
        d = np.asarray(self.descriptor, dtype=np.float32).reshape(-1)
        if d.shape[0] != DESCRIPTOR_LEN:
            raise ValueError(f"descriptor must have {DESCRIPTOR_LEN} elements")
        object.__setattr__(self, "pixel", px)
        object.__setattr__(self, "descriptor", d)


def capture(
    world: World,
    pose: CameraPose,
    intrinsics: CameraIntrinsics,
    noise_px: float,
    seed: int,
    descriptor_noise: float = 0.0,
) -> list[FeaturePoint]:
    """Project visible landmarks into noisy feature points, ordered by landmark id.

    Features whose noisy pixel leaves the image rectangle are dropped so every
    returned pixel lies inside the frame.
    """
    if noise_px < 0.0:
        raise ValueError("pixel noise must be >= 0")
    pixels, visible = project_many(intrinsics, pose, world.landmarks)
    idx = np.nonzero(visible)[0]
    rng = np.random.Generator(np.random.Philox(key=seed))
    out: list[FeaturePoint] = []
    for i in idx:
        px = pixels[i]
        if noise_px > 0.0:
            px = px + rng.normal(0.0, noise_px, size=2)
            if not (0.0 <= px[0] <= intrinsics.width and 0.0 <= px[1] <= intrinsics.height):
                continue
        desc = descriptor_for(int(world.ids[i]))
        if descriptor_noise > 0.0:
            desc = (desc + rng.normal(0.0, descriptor_noise, size=DESCRIPTOR_LEN)).astype(np.float32)
        out.append(FeaturePoint(px.astype(np.float32), desc, int(world.ids[i])))
    return out


@dataclass(frozen=True)
class MatchResult:
    """One-to-one feature matches with exact ground-truth correctness flags."""

    indices_a: NDArray[np.int64]
    indices_b: NDArray[np.int64]
    correct: NDArray[np.bool_]  # simulation-only ground truth

    def __len__(self) -> int:
        return int(self.indices_a.shape[0])


def match_features(
    a: list[FeaturePoint],
    b: list[FeaturePoint],
    mismatch_rate: float,
    seed: int,
) -> MatchResult:
    """Nearest-descriptor matching with a ratio test, then mismatch injection.

    A deterministic fraction `mismatch_rate` of the accepted matches is
    rewired to wrong partners (unmatched features first, a cyclic rotation of
    the chosen matches otherwise) and the ground-truth flags are recomputed
    from landmark identities afterwards, so they stay exact.
    """
    if not 0.0 <= mismatch_rate < 1.0:
        raise ValueError("mismatch rate must be in [0, 1)")
    if not a or not b:
        return MatchResult(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, bool))
    da = np.stack([f.descriptor for f in a]).astype(np.float64)
    db = np.stack([f.descriptor for f in b]).astype(np.float64)
    d2 = np.maximum(
        (da * da).sum(1)[:, None] + (db * db).sum(1)[None, :] - 2.0 * (da @ db.T), 0.0
    )
    dist = np.sqrt(d2)
    candidates = []
    for ia in range(len(a)):
        row = dist[ia]
        nearest = int(np.argmin(row))
        d1 = row[nearest]
        if len(b) >= 2:
            row2 = row.copy()
            row2[nearest] = np.inf
            d2nd = float(row2.min())
            if d2nd > 0.0 and d1 / d2nd > RATIO_TEST:
                continue
        candidates.append((float(d1), ia, nearest))
    candidates.sort()
    used_b: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for _, ia, ib in candidates:
        if ib in used_b:
            continue
        used_b.add(ib)
        pairs.append((ia, ib))
    pairs.sort()
    ia_arr = np.array([p[0] for p in pairs], dtype=np.int64)
    ib_arr = np.array([p[1] for p in pairs], dtype=np.int64)

    k = int(round(mismatch_rate * len(pairs)))
    if k > 0 and len(pairs) >= 1:
        rng = np.random.Generator(np.random.Philox(key=(seed << 1) ^ 0x3A7C))
        chosen = np.sort(rng.choice(len(pairs), size=k, replace=False))
        unmatched = np.array(sorted(set(range(len(b))) - set(int(x) for x in ib_arr)), dtype=np.int64)
        rng.shuffle(unmatched)
        take = min(len(unmatched), k)
        rest = []
        for pos, ci in enumerate(chosen):
            if pos < take:
                ib_arr[ci] = unmatched[pos]
            else:
                rest.append(ci)
        if len(rest) >= 2:
            vals = ib_arr[rest]
            ib_arr[rest] = np.roll(vals, 1)
        elif len(rest) == 1:
            # no spare features to rewire into: swap with another match
            other = (rest[0] + 1) % len(pairs)
            ib_arr[rest[0]], ib_arr[other] = ib_arr[other], ib_arr[rest[0]]

    correct = np.array(
        [a[int(ia)].landmark_id == b[int(ib)].landmark_id for ia, ib in zip(ia_arr, ib_arr)],
        dtype=bool,
    )
    return MatchResult(ia_arr, ib_arr, correct)


@dataclass(frozen=True)
class FeatureMessage:
    """Per-frame payload a vehicle sends to its graph neighbors."""

    sender: int
    frame: int
    features: list[FeaturePoint]


def encode_message(features: list[FeaturePoint], sender: int, frame: int) -> bytes:
    """Little-endian wire format: 16-byte header + 264 bytes per feature."""
    if len(features) >= 2**32:
        raise ValueError("feature count exceeds the 32-bit header field")
    head = struct.pack("<IIII", sender & 0xFFFFFFFF, frame & 0xFFFFFFFF, len(features), 0)
    if not features:
        return head
    body = np.empty((len(features), 2 + DESCRIPTOR_LEN), dtype="<f4")
    for i, f in enumerate(features):
        body[i, 0:2] = f.pixel
        body[i, 2:] = f.descriptor
    return head + body.tobytes()


def decode_message(payload: bytes) -> FeatureMessage:
    """Inverse of encode_message; rejects any length mismatch."""
    if len(payload) < HEADER_BYTES:
        raise MalformedMessageError("message shorter than its header")
    sender, frame, count, _reserved = struct.unpack_from("<IIII", payload, 0)
    expected = HEADER_BYTES + FEATURE_BYTES * count
    if len(payload) != expected:
        raise MalformedMessageError(
            f"declared {count} features need {expected} bytes, got {len(payload)}"
        )
    body = np.frombuffer(payload, dtype="<f4", offset=HEADER_BYTES).reshape(
        count, 2 + DESCRIPTOR_LEN
    )
    feats = [
        FeaturePoint(body[i, 0:2].copy(), body[i, 2:].copy(), landmark_id=-1)
        for i in range(count)
    ]
    return FeatureMessage(sender=sender, frame=frame, features=feats)


def message_bytes(feature_count: int) -> int:
    return HEADER_BYTES + FEATURE_BYTES * feature_count


def bandwidth(features_per_frame: int, frames_per_second: float) -> float:
    """Bytes per second for a feature stream: (16 + 264 * count) * fps."""
    if features_per_frame < 0 or frames_per_second < 0:
        raise ValueError("bandwidth inputs must be nonnegative")
    return message_bytes(features_per_frame) * frames_per_second
