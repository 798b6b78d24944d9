"""Formation gain design and verification.

Synthesizes the 2x2 neighbor gain blocks of the linear velocity law
u_i = sum_j A_ij q_j^i so that the stacked gain matrix is symmetric, negative
semidefinite, vanishes exactly on the similarity orbit of the target shape
(translations, the shape itself, and its 90-degree rotation) and respects the
sensing-graph sparsity. Complete graphs get the closed-form negated projector;
sparse graphs run Dykstra-corrected alternating projections between the affine
constraint set and the NSD cone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

log = logging.getLogger(__name__)

KERNEL_DIM = 4
KERNEL_TOL = 1e-8
NSD_TOL = 1e-9
SYMMETRY_TOL = 1e-9
SPARSITY_TOL = 1e-12
DYKSTRA_CAP = 10_000


class InfeasibleDesignError(Exception):
    """The sensing graph cannot carry gains meeting the spectral contract."""


class MissingGainBlockError(KeyError):
    """A control evaluation referenced a neighbor without a gain block."""


def _connected(adj: NDArray[np.bool_]) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


@dataclass(frozen=True)
class FormationSpec:
    """Desired planar shape plus the symmetric sensing graph."""

    positions: NDArray[np.float64]  # (n, 2) meters
    adjacency: NDArray[np.bool_]  # (n, n), symmetric, false diagonal

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        adj = np.asarray(self.adjacency, dtype=bool)
        n = pos.shape[0]
        if n < 2:
            raise ValueError("formation needs at least 2 agents")
        if adj.shape != (n, n):
            raise ValueError("adjacency shape must match agent count")
        if np.any(adj != adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ValueError("adjacency diagonal must be false")
        if not _connected(adj):
            raise ValueError("sensing graph must be connected")
        if n >= 3:
            centered = pos - pos.mean(axis=0)
            if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
                raise ValueError("desired positions are collinear")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def stacked(self) -> NDArray[np.float64]:
        return self.positions.reshape(-1)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.nonzero(self.adjacency[i])[0]]

    @property
    def is_complete(self) -> bool:
        n = self.n
        return bool(np.count_nonzero(self.adjacency) == n * (n - 1))


def kernel_basis(spec: FormationSpec) -> NDArray[np.float64]:
    """(2n, 4) basis of the subspace the stacked gains must annihilate.

    Columns: x-translation, y-translation, the target shape, and the target
    shape with every planar block rotated +90 degrees.
    """
    n = spec.n
    k = np.zeros((2 * n, 4))
    k[0::2, 0] = 1.0
    k[1::2, 1] = 1.0
    k[:, 2] = spec.stacked
    k[0::2, 3] = -spec.positions[:, 1]
    k[1::2, 3] = spec.positions[:, 0]
    if np.linalg.matrix_rank(k, tol=1e-9) < 4:
        raise ValueError("kernel basis is rank deficient (degenerate shape)")
    return k


@dataclass(frozen=True)
class GainSet:
    """Per-edge 2x2 gain blocks; diagonal blocks are derived, not stored."""

    n: int
    adjacency: NDArray[np.bool_]
    blocks: dict[tuple[int, int], NDArray[np.float64]]

    def __post_init__(self) -> None:
        for (i, j), b in self.blocks.items():
            if i == j or not self.adjacency[i, j]:
                raise ValueError(f"block ({i},{j}) violates the sparsity pattern")
            if np.asarray(b).shape != (2, 2):
                raise ValueError("gain blocks must be 2x2")

    def block(self, i: int, j: int) -> NDArray[np.float64]:
        try:
            return self.blocks[(i, j)]
        except KeyError as exc:
            raise MissingGainBlockError(f"no gain block for pair ({i},{j})") from exc

    def aggregated(self) -> NDArray[np.float64]:
        """2n x 2n stacked matrix with diagonal blocks -sum of row blocks."""
        a = np.zeros((2 * self.n, 2 * self.n))
        for (i, j), b in self.blocks.items():
            a[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = b
            a[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] -= b
        return a


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: NDArray[np.float64]  # ascending
    kernel_dim: int
    spectral_gap: float
    max_sparsity_violation: float
    max_kernel_residual: float
    max_symmetry_violation: float
    max_positive_eigenvalue: float
    kernel_ok: bool
    nsd_ok: bool
    symmetry_ok: bool
    sparsity_ok: bool

    @property
    def ok(self) -> bool:
        return self.kernel_ok and self.nsd_ok and self.symmetry_ok and self.sparsity_ok

    def summary(self) -> str:
        state = "PASS" if self.ok else "FAIL"
        return (
            f"[{state}] kernel_dim={self.kernel_dim} gap={self.spectral_gap:.6g} "
            f"kernel_res={self.max_kernel_residual:.3g} sym={self.max_symmetry_violation:.3g} "
            f"sparsity={self.max_sparsity_violation:.3g} max_eig={self.max_positive_eigenvalue:.3g}"
        )


def verify_gains(gains: GainSet, spec: FormationSpec) -> SpectralReport:
    """Full eigendecomposition of the aggregated gains checked against the contract."""
    if gains.n != spec.n:
        raise ValueError("gain set and spec sizes differ")
    a = gains.aggregated()
    k = kernel_basis(spec)
    sym = float(np.max(np.abs(a - a.T)))
    eigenvalues = np.linalg.eigvalsh((a + a.T) / 2.0)
    kernel_dim = int(np.count_nonzero(np.abs(eigenvalues) <= KERNEL_TOL))
    nonkernel = eigenvalues[np.abs(eigenvalues) > KERNEL_TOL]
    gap = float(-nonkernel.max()) if nonkernel.size else 0.0
    sparsity = 0.0
    for i in range(spec.n):
        for j in range(spec.n):
            if i != j and not spec.adjacency[i, j]:
                sparsity = max(sparsity, float(np.max(np.abs(a[2 * i : 2 * i + 2, 2 * j : 2 * j + 2]))))
    kernel_res = float(np.max(np.abs(a @ k)))
    max_pos = float(eigenvalues.max())
    return SpectralReport(
        eigenvalues=eigenvalues,
        kernel_dim=kernel_dim,
        spectral_gap=gap,
        max_sparsity_violation=sparsity,
        max_kernel_residual=kernel_res,
        max_symmetry_violation=sym,
        max_positive_eigenvalue=max_pos,
        kernel_ok=(kernel_dim == KERNEL_DIM and kernel_res <= KERNEL_TOL),
        nsd_ok=(max_pos <= NSD_TOL),
        symmetry_ok=(sym <= SYMMETRY_TOL),
        sparsity_ok=(sparsity <= SPARSITY_TOL),
    )


def _blocks_from_matrix(a: NDArray[np.float64], spec: FormationSpec) -> dict[tuple[int, int], NDArray]:
    out = {}
    for i in range(spec.n):
        for j in spec.neighbors(i):
            out[(i, j)] = a[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].copy()
    return out


class _SparseProjector:
    """Least-squares projector onto the affine gain set of a sparse graph.

    Parametrizes one free 2x2 block per undirected edge (the reverse block is
    its transpose, diagonal blocks are minus the row sums) and restricts to
    the subspace where the aggregated matrix annihilates the kernel basis and
    every diagonal block is symmetric.
    """

    def __init__(self, spec: FormationSpec):
        n = spec.n
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if spec.adjacency[i, j]]
        self.edges = edges
        nv = 4 * len(edges)
        dim = 2 * n

        lmap = np.zeros((dim * dim, nv))
        for e, (i, j) in enumerate(edges):
            for a_ in range(2):
                for b_ in range(2):
                    col = 4 * e + 2 * a_ + b_
                    lmap[(2 * i + a_) * dim + (2 * j + b_), col] += 1.0  # A_ij
                    lmap[(2 * j + b_) * dim + (2 * i + a_), col] += 1.0  # A_ji = A_ij^T
                    lmap[(2 * i + a_) * dim + (2 * i + b_), col] -= 1.0  # diag i
                    lmap[(2 * j + b_) * dim + (2 * j + a_), col] -= 1.0  # diag j
        self._lmap = lmap

        pos = spec.positions
        rot = np.column_stack([-pos[:, 1], pos[:, 0]])
        rows: list[NDArray] = []
        for i in range(n):
            r_shape = np.zeros((2, nv))
            r_rot = np.zeros((2, nv))
            r_skew = np.zeros((1, nv))
            for e, (p, q) in enumerate(edges):
                if p == i or q == i:
                    j = q if p == i else p
                    d = pos[j] - pos[i]
                    drot = rot[j] - rot[i]
                    for a_ in range(2):
                        for b_ in range(2):
                            col = 4 * e + 2 * a_ + b_
                            if p == i:  # A_ij = A_e
                                r_shape[a_, col] += d[b_]
                                r_rot[a_, col] += drot[b_]
                                r_skew[0, col] += 1.0 if (a_, b_) == (0, 1) else (-1.0 if (a_, b_) == (1, 0) else 0.0)
                            else:  # A_ij = A_e^T
                                r_shape[b_, col] += d[a_]
                                r_rot[b_, col] += drot[a_]
                                r_skew[0, col] += 1.0 if (b_, a_) == (0, 1) else (-1.0 if (b_, a_) == (1, 0) else 0.0)
            rows.extend([r_shape, r_rot, r_skew])
        constraints = np.vstack(rows)

        _, s, vt = np.linalg.svd(constraints, full_matrices=True)
        rank = int(np.count_nonzero(s > 1e-10 * max(1.0, s[0] if s.size else 1.0)))
        null = vt[rank:].T  # (nv, d)
        if null.shape[1] == 0:
            raise InfeasibleDesignError("no gain degrees of freedom remain for this graph")
        self._null = null
        ln = lmap @ null
        self._pinv_ln = np.linalg.pinv(ln)
        self._ln = ln
        self._dim = dim

    def project(self, a: NDArray[np.float64]) -> NDArray[np.float64]:
        y = self._pinv_ln @ a.reshape(-1)
        return (self._ln @ y).reshape(self._dim, self._dim)

    def coords(self, a: NDArray[np.float64]) -> NDArray[np.float64]:
        """Edge-block variables of the projection of `a`."""
        return self._null @ (self._pinv_ln @ a.reshape(-1))


def _project_nsd(a: NDArray[np.float64]) -> NDArray[np.float64]:
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    w = np.minimum(w, 0.0)
    return (v * w) @ v.T


def design_gains(spec: FormationSpec, *, iteration_cap: int = DYKSTRA_CAP) -> GainSet:
    """Design gain blocks meeting the spectral contract, deterministically.

    Complete graphs take the closed-form negated projector onto the complement
    of the kernel basis (eigenvalues 0 and -1 only). Sparse graphs run Dykstra
    alternating projections from that projector toward the affine set and the
    NSD cone; the result is rescaled so the most negative eigenvalue is -1.

    Raises:
        InfeasibleDesignError: iteration budget exhausted before the
            invariants held, or the spectral contract failed (extra kernel
            dimensions or vanishing gap).
    """
    k = kernel_basis(spec)
    proj_k = k @ np.linalg.solve(k.T @ k, k.T)
    a0 = -(np.eye(2 * spec.n) - proj_k)

    if spec.is_complete:
        gains = GainSet(spec.n, spec.adjacency, _blocks_from_matrix(a0, spec))
    else:
        sp = _SparseProjector(spec)
        x = a0.copy()
        p = np.zeros_like(x)
        q = np.zeros_like(x)
        converged = False
        for it in range(iteration_cap):
            y = _project_nsd(x + p)
            p = x + p - y
            x_new = sp.project(y + q)
            q = y + q - x_new
            x = x_new
            w = np.linalg.eigvalsh((x + x.T) / 2.0)
            if w.size and w[0] < -1e-12 and w[-1] <= 1e-10 * (-w[0]):
                converged = True
                log.debug("dykstra converged after %d iterations", it + 1)
                break
        if not converged:
            raise InfeasibleDesignError(
                f"alternating projections did not reach the invariants in {iteration_cap} iterations"
            )
        scale = -float(np.linalg.eigvalsh((x + x.T) / 2.0)[0])
        coords = sp.coords(x) / scale
        blocks = {}
        for e, (i, j) in enumerate(sp.edges):
            b = coords[4 * e : 4 * e + 4].reshape(2, 2)
            blocks[(i, j)] = b
            blocks[(j, i)] = b.T.copy()
        gains = GainSet(spec.n, spec.adjacency, blocks)

    report = verify_gains(gains, spec)
    if not report.ok:
        raise InfeasibleDesignError(f"designed gains fail verification: {report.summary()}")
    if report.spectral_gap <= 0.0:
        raise InfeasibleDesignError("designed gains have no spectral gap")
    return gains


def control_law(i: int, neighbors, gains: GainSet) -> NDArray[np.float64]:
    """Velocity command u_i = sum_j A_ij q_j^i, meters per second.

    `neighbors` is an iterable of (j, q_j^i) with q_j^i the neighbor offset in
    the agent's planar frame.
    """
    u = np.zeros(2)
    for j, q_ji in neighbors:
        u += gains.block(i, int(j)) @ np.asarray(q_ji, dtype=np.float64)
    return u


def save_gains(gains: GainSet, report: SpectralReport, path) -> None:
    """Plain-text dump: one `i j a11 a12 a21 a22` line per stored block."""
    lines = []
    for (i, j) in sorted(gains.blocks):
        b = gains.blocks[(i, j)]
        lines.append(
            f"{i} {j} {b[0, 0]:.17g} {b[0, 1]:.17g} {b[1, 0]:.17g} {b[1, 1]:.17g}"
        )
    lines.append(f"# kernel_dim: {report.kernel_dim}")
    lines.append(f"# spectral_gap: {report.spectral_gap:.17g}")
    lines.append(f"# max_kernel_residual: {report.max_kernel_residual:.17g}")
    lines.append(f"# max_symmetry_violation: {report.max_symmetry_violation:.17g}")
    lines.append(f"# max_sparsity_violation: {report.max_sparsity_violation:.17g}")
    lines.append(f"# max_positive_eigenvalue: {report.max_positive_eigenvalue:.17g}")
    lines.append("# eigenvalues: " + " ".join(f"{w:.17g}" for w in report.eigenvalues))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_gains(path, spec: FormationSpec) -> GainSet:
    blocks: dict[tuple[int, int], NDArray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"malformed gain line: {line!r}")
            i, j = int(parts[0]), int(parts[1])
            blocks[(i, j)] = np.array(
                [[float(parts[2]), float(parts[3])], [float(parts[4]), float(parts[5])]]
            )
    return GainSet(spec.n, spec.adjacency, blocks)
