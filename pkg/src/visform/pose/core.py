"""Relative pose estimation from matched bearings: minimal solver, RANSAC, scale."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ..geometry import UnitQuaternion, canonical_quat, quat_to_rotation
from ._backend import kernels

MIN_SAMPLE = 5
MAX_HYPOTHESES = 20
DEDUP_RESOLUTION = 1e-6
SOLUTION_RESIDUAL_TOL = 1e-8
DEGENERACY_TOL = 1e-9
DEFAULT_STARTS = 96


class DegenerateSampleError(Exception):
    """Bearing set admits no unique finite pose family (zero baseline, pure rotation)."""


class NoParallaxError(Exception):
    """Triangulation system is rank-deficient: bearings parallel after rotation."""


class AmbiguousCheiralityError(Exception):
    """Two candidate poses tie on cheirality count and residual."""


class NoConsensusError(Exception):
    """RANSAC found no sample with a minimal inlier set."""


class UnobservableScaleError(Exception):
    """No usable vertical structure: altitude cannot fix the scale."""


@dataclass(frozen=True)
class Correspondence:
    """Matched homogeneous bearings (x, y, 1), one per view."""

    m: NDArray[np.float64]
    n: NDArray[np.float64]

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64).reshape(3)
        n = np.asarray(self.n, dtype=np.float64).reshape(3)
        if m[2] != 1.0 or n[2] != 1.0:
            raise ValueError("bearings must be homogeneous with third component 1")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(n))):
            raise ValueError("bearings must be finite")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)


def bearing_arrays(cs) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Stack correspondences into (N,3) bearing arrays (m-side, n-side)."""
    if isinstance(cs, tuple) and len(cs) == 2 and isinstance(cs[0], np.ndarray):
        return cs
    ms = np.array([c.m for c in cs], dtype=np.float64).reshape(-1, 3)
    ns = np.array([c.n for c in cs], dtype=np.float64).reshape(-1, 3)
    return ms, ns


@dataclass(frozen=True)
class PoseHypothesis:
    """Candidate relative pose: rotation plus unit translation direction."""

    quaternion: UnitQuaternion
    translation: NDArray[np.float64]
    mean_residual: float = math.nan

    def __post_init__(self) -> None:
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(t) - 1.0) > 1e-9:
            raise ValueError("translation direction must be a unit vector")
        object.__setattr__(self, "translation", t)

    @property
    def rotation(self) -> NDArray[np.float64]:
        return quat_to_rotation(self.quaternion)


@dataclass(frozen=True)
class DepthPair:
    """Depths (u, v) of one point in each camera frame, unit-baseline units."""

    u: float
    v: float

    @property
    def is_cheiral(self) -> bool:
        return self.u > 0.0 and self.v > 0.0


@dataclass
class RansacResult:
    best: PoseHypothesis
    inlier_mask: NDArray[np.bool_]
    iterations: int
    threshold: float


@dataclass(frozen=True)
class RansacParams:
    threshold: float = 1e-4
    confidence: float = 0.999
    max_iterations: int = 500
    seed: int = 0


def epipolar_residual(h: PoseHypothesis, c: Correspondence) -> float:
    """Distance from the n-side bearing to its epipolar line, normalized units."""
    return float(
        kernels.epipolar_residuals(
            h.quaternion.as_array(), h.translation, c.m[None, :], c.n[None, :]
        )[0]
    )


def epipolar_residuals(h: PoseHypothesis, cs) -> NDArray[np.float64]:
    ms, ns = bearing_arrays(cs)
    return kernels.epipolar_residuals(h.quaternion.as_array(), h.translation, ms, ns)


def _halton(index: NDArray[np.int64], base: int) -> NDArray[np.float64]:
    out = np.zeros(index.shape, dtype=np.float64)
    f = 1.0 / base
    i = index.copy()
    while np.any(i > 0):
        out += f * (i % base)
        i //= base
        f /= base
    return out


_R2 = math.sqrt(0.5)
# identity, +/-90 deg and 180 deg about each axis: cheap coverage of the
# small-rotation poses that dominate level-flight scenes
_CANONICAL_STARTS = np.array(
    [
        [1, 0, 0, 0],
        [_R2, _R2, 0, 0],
        [_R2, 0, _R2, 0],
        [_R2, 0, 0, _R2],
        [_R2, -_R2, 0, 0],
        [_R2, 0, -_R2, 0],
        [_R2, 0, 0, -_R2],
        [0, 1, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 0, 1],
    ],
    dtype=np.float64,
)


def quasi_random_starts(count: int, offset: int = 0) -> NDArray[np.float64]:
    """Deterministic low-discrepancy unit quaternions (Halton + Shoemake map).

    The first rows are fixed canonical rotations; the rest fill the rotation
    group quasi-uniformly.
    """
    fixed = _CANONICAL_STARTS[: min(count, len(_CANONICAL_STARTS))]
    rest = count - fixed.shape[0]
    if rest <= 0:
        return fixed.copy()
    idx = np.arange(offset + 1, offset + rest + 1, dtype=np.int64)
    u1 = _halton(idx, 2)
    u2 = _halton(idx, 3)
    u3 = _halton(idx, 5)
    s1 = np.sqrt(1.0 - u1)
    s2 = np.sqrt(u1)
    halton_starts = np.stack(
        [
            s2 * np.cos(2 * np.pi * u3),
            s1 * np.sin(2 * np.pi * u2),
            s1 * np.cos(2 * np.pi * u2),
            s2 * np.sin(2 * np.pi * u3),
        ],
        axis=1,
    )
    return np.concatenate([fixed, halton_starts], axis=0)


def _canonical_direction(t: NDArray[np.float64]) -> NDArray[np.float64]:
    """Deterministic sign for a direction only defined up to sign."""
    for c in t:
        if abs(c) > 1e-12:
            return -t if c < 0.0 else t
    return t


def solve_minimal(
    cs,
    *,
    n_starts: int = DEFAULT_STARTS,
    seed: int = 0,
    max_iter: int = 50,
) -> list[PoseHypothesis]:
    """All poses consistent with exactly five bearing correspondences.

    Eliminates the translation through its orthogonality to every
    (R m_i) x n_i, then minimizes the eliminated objective from `n_starts`
    deterministic quasi-random quaternions. Exact roots are kept, de-duplicated
    at 1e-6 resolution and returned with canonical quaternion / direction signs
    (at most 20).

    Raises:
        ValueError: not exactly five pairwise-distinct correspondences.
        DegenerateSampleError: zero-baseline or pure-rotation bearing sets,
            where the translation direction is not unique.
    """
    ms, ns = bearing_arrays(cs)
    if ms.shape[0] != MIN_SAMPLE:
        raise ValueError(f"minimal solver needs exactly {MIN_SAMPLE} correspondences")
    for side in (ms, ns):
        d = np.abs(side[:, None, :] - side[None, :, :]).max(axis=2)
        np.fill_diagonal(d, 1.0)
        if d.min() < 1e-12:
            raise ValueError("bearings must be pairwise distinct")
    if np.max(np.abs(np.cross(ms, ns))) < 1e-12:
        raise DegenerateSampleError("identical views: translation direction undefined")

    starts = quasi_random_starts(n_starts, offset=seed * n_starts)
    rows = kernels.refine_minimal(ms, ns, starts, max_iter)

    rows = rows[rows[:, 7] <= 1e-18]
    if rows.shape[0] == 0:
        return []
    rows = rows[np.argsort(rows[:, 7], kind="stable")]
    qs = _canonical_sign_rows(rows[:, 0:4], 0.0)
    ts = _canonical_sign_rows(rows[:, 4:7], 1e-12)
    # batched normalized residuals of every converged start
    rot = _rot_batch(qs)
    a = np.einsum("kij,pj->kpi", rot, ms)
    line = np.cross(ts[:, None, :], a)
    s = np.maximum(np.hypot(line[:, :, 0], line[:, :, 1]), 1e-30)
    res = np.einsum("pi,kpi->kp", ns, line) / s
    abs_res = np.abs(res)
    good = abs_res.max(axis=1) <= SOLUTION_RESIDUAL_TOL
    if not np.any(good):
        return []
    qs, ts, rows = qs[good], ts[good], rows[good]
    mean_res = abs_res[good].mean(axis=1)

    kept: list[tuple[NDArray, NDArray, float, float, float]] = []
    cat = np.concatenate([qs, ts], axis=1)
    kept_rows: NDArray | None = None
    for i in range(cat.shape[0]):
        if kept_rows is not None and np.any(
            np.max(np.abs(kept_rows - cat[i]), axis=1) < DEDUP_RESOLUTION
        ):
            continue
        kept_rows = cat[i : i + 1] if kept_rows is None else np.vstack([kept_rows, cat[i]])
        kept.append((qs[i], ts[i], float(mean_res[i]), float(rows[i, 8]), float(rows[i, 9])))

    if any(lam2 <= DEGENERACY_TOL * max(1.0, lam3) for _, _, _, lam2, lam3 in kept):
        raise DegenerateSampleError("no unique translation direction for this sample")

    kept.sort(key=lambda k: (k[2], tuple(k[0]), tuple(k[1])))
    return [
        PoseHypothesis(UnitQuaternion.from_array(q), t, mean_residual=res)
        for q, t, res, _, _ in kept[:MAX_HYPOTHESES]
    ]


def _canonical_sign_rows(arr: NDArray[np.float64], tol: float) -> NDArray[np.float64]:
    """Row-wise sign canonicalization: first component larger than tol is positive."""
    arr = arr.copy()
    sign = np.zeros(arr.shape[0])
    for k in range(arr.shape[1]):
        undecided = sign == 0.0
        if not np.any(undecided):
            break
        col = arr[:, k]
        sign = np.where(undecided & (np.abs(col) > tol), np.sign(col), sign)
    sign = np.where(sign == 0.0, 1.0, sign)
    return arr * sign[:, None]


def _rot_batch(qs: NDArray[np.float64]) -> NDArray[np.float64]:
    w, x, y, z = qs[:, 0], qs[:, 1], qs[:, 2], qs[:, 3]
    rot = np.empty((qs.shape[0], 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def triangulate_depths(h: PoseHypothesis, c: Correspondence) -> DepthPair:
    """Least-squares depths of Eq. u*(R m) + t = v*n for one correspondence."""
    u, v, ok = _triangulate_arrays(h, c.m[None, :], c.n[None, :])
    if not ok[0]:
        raise NoParallaxError("bearings are parallel after rotation")
    return DepthPair(float(u[0]), float(v[0]))


def _triangulate_arrays(h: PoseHypothesis, ms: NDArray, ns: NDArray):
    """Vectorized depth recovery; returns (u, v, well_conditioned)."""
    a = ms @ h.rotation.T
    t = h.translation
    aa = np.einsum("pi,pi->p", a, a)
    an = np.einsum("pi,pi->p", a, ns)
    nn = np.einsum("pi,pi->p", ns, ns)
    at = a @ t
    nt = ns @ t
    det = aa * nn - an * an
    # eigenvalues of the 2x2 normal matrix bound the singular values
    tr = aa + nn
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    sig_min = np.sqrt(np.maximum((tr - disc) / 2.0, 0.0))
    sig_max = np.sqrt((tr + disc) / 2.0)
    ok = sig_min > 1e-12 * sig_max
    safe_det = np.where(ok, det, 1.0)
    u = (-at * nn + nt * an) / safe_det
    v = (-at * an + nt * aa) / safe_det
    return u, v, ok


def triangulation_residual(h: PoseHypothesis, c: Correspondence, d: DepthPair) -> float:
    """Norm of u*(R m) + t - v*n for recovered depths."""
    return float(np.linalg.norm(d.u * (h.rotation @ c.m) + h.translation - d.v * c.n))


def _cheiral_count(h: PoseHypothesis, ms: NDArray, ns: NDArray) -> int:
    u, v, ok = _triangulate_arrays(h, ms, ns)
    return int(np.count_nonzero(ok & (u > 0.0) & (v > 0.0)))


def twisted_pair(h: PoseHypothesis) -> PoseHypothesis:
    """The twisted mate of a pose: rotation by pi about t composed with R.

    Shares every epipolar residual with `h` but swaps the cheirality pattern;
    both decompositions of one essential matrix.
    """
    t = h.translation
    q = h.quaternion.as_array()
    w, v = q[0], q[1:]
    tw = np.empty(4)
    tw[0] = -float(t @ v)
    tw[1:] = w * t + np.cross(t, v)
    return PoseHypothesis(
        UnitQuaternion.from_array(canonical_quat(tw)), t, mean_residual=h.mean_residual
    )


def select_cheiral(hypotheses, cs) -> PoseHypothesis:
    """Pick the pose (or its t-negated twin) putting the most points in front.

    Ties fall to the smaller mean epipolar residual, then to canonical
    quaternion/direction ordering; a residual tie within 1e-12 at equal count
    is ambiguous.
    """
    hyps = list(hypotheses)
    if not hyps:
        raise ValueError("empty hypothesis set")
    ms, ns = bearing_arrays(cs)
    ranked = []
    seen: list[tuple[NDArray, NDArray]] = []
    for h in hyps:
        q = h.quaternion.as_array()
        if any(
            np.max(np.abs(q - q2)) < 1e-9 and np.max(np.abs(h.translation - t2)) < 1e-9
            for q2, t2 in seen
        ):
            continue
        seen.append((q, h.translation))
        res = float(np.mean(np.abs(kernels.epipolar_residuals(q, h.translation, ms, ns))))
        for t in (h.translation, -h.translation):
            cand = PoseHypothesis(h.quaternion, t, mean_residual=res)
            count = _cheiral_count(cand, ms, ns)
            ranked.append((-count, res, tuple(q), tuple(t), cand))
    ranked.sort(key=lambda r: r[:4])
    if len(ranked) > 1:
        a, b = ranked[0], ranked[1]
        if a[0] == b[0] and abs(a[1] - b[1]) <= 1e-12:
            raise AmbiguousCheiralityError("top candidates tie on cheirality and residual")
    return ranked[0][4]


def _sample_indices(seed: int, iteration: int, n: int) -> NDArray[np.int64]:
    """Minimal sample for one iteration of a counter-based Philox stream.

    The stream is keyed by the seed with a disjoint counter block per
    iteration, so samples are deterministic and independent across iterations.
    """
    gen = np.random.Generator(
        np.random.Philox(key=seed & 0xFFFFFFFFFFFFFFFF, counter=(iteration << 66))
    )
    return np.sort(gen.choice(n, size=MIN_SAMPLE, replace=False))


def ransac_pose(cs, params: RansacParams = RansacParams()) -> RansacResult:
    """Adaptive RANSAC over minimal samples, refined on the final inlier set.

    Deterministic for a fixed seed and invariant to the input ordering: the
    correspondences are canonically sorted internally and the inlier mask is
    mapped back to the caller's order.
    """
    ms_in, ns_in = bearing_arrays(cs)
    n = ms_in.shape[0]
    if n < MIN_SAMPLE:
        raise ValueError(f"RANSAC needs at least {MIN_SAMPLE} correspondences")
    order = np.lexsort((ns_in[:, 1], ns_in[:, 0], ms_in[:, 1], ms_in[:, 0]))
    ms, ns = ms_in[order], ns_in[order]

    best_count = -1
    best_res = math.inf
    best_mask: NDArray[np.bool_] | None = None
    tied: list[PoseHypothesis] = []
    needed = params.max_iterations
    it = 0
    while it < min(needed, params.max_iterations):
        idx = _sample_indices(params.seed, it, n)
        it += 1
        try:
            hyps = solve_minimal((ms[idx], ns[idx]))
        except (DegenerateSampleError, ValueError):
            continue
        for h in hyps:
            res = np.abs(kernels.epipolar_residuals(h.quaternion.as_array(), h.translation, ms, ns))
            mask = res <= params.threshold
            count = int(np.count_nonzero(mask))
            if count < MIN_SAMPLE:
                continue
            mean_res = float(np.mean(res[mask]))
            if count > best_count or (count == best_count and mean_res < best_res - 1e-15):
                best_count, best_res, best_mask = count, mean_res, mask
                tied = [h]
                w = count / n
                if w >= 1.0:
                    needed = it
                else:
                    needed = math.ceil(math.log(1.0 - params.confidence) / math.log(1.0 - w**MIN_SAMPLE))
            elif count == best_count and abs(mean_res - best_res) <= 1e-12:
                tied.append(h)

    if best_mask is None:
        raise NoConsensusError("no sample produced a minimal inlier set")

    inl = (ms[best_mask], ns[best_mask])
    candidates = tied + [twisted_pair(h) for h in tied]
    try:
        winner = select_cheiral(candidates, inl)
    except AmbiguousCheiralityError:
        winner = tied[0]
    # iterated local optimization: refine on a widened inlier band so the
    # threshold does not truncate the inlier noise, then re-collect
    q, t = winner.quaternion.as_array(), winner.translation
    for _ in range(3):
        res = np.abs(kernels.epipolar_residuals(q, t, ms, ns))
        band = res <= 2.0 * params.threshold
        if int(np.count_nonzero(band)) < MIN_SAMPLE:
            break
        q, t, _ = kernels.refine_joint(q, t, ms[band], ns[band], 50)
    # keep the refined pose on the physical (cheiral) sign of the branch
    refined = PoseHypothesis(UnitQuaternion.from_array(q), t)
    if _cheiral_count(refined, inl[0], inl[1]) < _cheiral_count(
        PoseHypothesis(refined.quaternion, -refined.translation), inl[0], inl[1]
    ):
        refined = PoseHypothesis(refined.quaternion, -refined.translation)
    res = np.abs(kernels.epipolar_residuals(refined.quaternion.as_array(), refined.translation, ms, ns))
    mask = res <= params.threshold
    if int(np.count_nonzero(mask)) < MIN_SAMPLE:
        mask = best_mask
    final = PoseHypothesis(
        refined.quaternion, refined.translation, mean_residual=float(np.mean(res[mask]))
    )
    out_mask = np.zeros(n, dtype=bool)
    out_mask[order] = mask
    return RansacResult(best=final, inlier_mask=out_mask, iterations=it, threshold=params.threshold)


def recover_scale(
    h: PoseHypothesis,
    inliers,
    altitude: float,
    camera_rotation: NDArray[np.float64],
) -> float:
    """Meters per unit baseline from the known height above the ground plane.

    Triangulates the inliers at unit baseline and compares the median vertical
    drop of the points (in the m-side camera) with the true altitude.

    Raises:
        ValueError: altitude not positive.
        UnobservableScaleError: no cheiral inliers or no vertical extent
            (forward-facing camera seeing no ground).
    """
    if altitude <= 0.0:
        raise ValueError("altitude must be positive")
    ms, ns = bearing_arrays(inliers)
    u, v, ok = _triangulate_arrays(h, ms, ns)
    cheiral = ok & (u > 0.0) & (v > 0.0)
    if not np.any(cheiral):
        raise UnobservableScaleError("no cheiral inliers to anchor the scale")
    down_cam = np.asarray(camera_rotation, dtype=np.float64) @ np.array([0.0, 0.0, -1.0])
    drops = u[cheiral] * (ms[cheiral] @ down_cam)
    med = float(np.median(drops))
    if med <= 1e-9:
        raise UnobservableScaleError("no vertical extent below the camera")
    return altitude / med


def relative_position(
    h: PoseHypothesis, scale: float, mounting: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Planar body-frame offset of the observed agent, meters.

    `mounting` is the fixed body-to-camera rotation; the metric translation is
    rotated back to the body frame and projected onto the horizontal plane.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    t_body = np.asarray(mounting, dtype=np.float64).T @ (scale * h.translation)
    return t_body[:2].copy()
