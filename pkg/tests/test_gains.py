import math

import numpy as np
import pytest

from visform.gains import (
    FormationSpec,
    GainSet,
    InfeasibleDesignError,
    MissingGainBlockError,
    control_law,
    design_gains,
    kernel_basis,
    load_gains,
    save_gains,
    verify_gains,
)
from visform.geometry import formation_error
from visform.harness.config import grid8_adjacency

TRIANGLE = FormationSpec(
    np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.866]]), ~np.eye(3, dtype=bool)
)
GRID9 = FormationSpec(
    np.array([[x * 8.0, y * 8.0] for y in range(3) for x in range(3)]),
    grid8_adjacency(9),
)


class TestFormationSpec:
    def test_rejects_asymmetric_adjacency(self):
        adj = np.zeros((3, 3), dtype=bool)
        adj[0, 1] = True
        with pytest.raises(ValueError):
            FormationSpec(TRIANGLE.positions, adj)

    def test_rejects_disconnected(self):
        adj = np.zeros((4, 4), dtype=bool)
        adj[0, 1] = adj[1, 0] = adj[2, 3] = adj[3, 2] = True
        with pytest.raises(ValueError):
            FormationSpec(np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float), adj)

    def test_rejects_collinear(self):
        with pytest.raises(ValueError):
            FormationSpec(np.array([[0, 0], [1, 0], [2, 0]], float), ~np.eye(3, dtype=bool))


class TestKernelBasis:
    def test_fourth_column_is_blockwise_quarter_turn(self):
        k = kernel_basis(TRIANGLE)
        np.testing.assert_allclose(
            k[:, 3], [0.0, 0.0, 0.0, 1.0, -0.866, 0.5], atol=1e-15
        )

    def test_translation_columns(self):
        k = kernel_basis(GRID9)
        n = GRID9.n
        assert np.linalg.norm(k[:, 0]) == pytest.approx(math.sqrt(n))
        assert np.linalg.norm(k[:, 1]) == pytest.approx(math.sqrt(n))
        assert k[:, 0] @ k[:, 1] == 0.0

    def test_two_agents_span_r4(self):
        spec = FormationSpec(np.array([[0.0, 0.0], [1.0, 0.0]]), ~np.eye(2, dtype=bool))
        k = kernel_basis(spec)
        assert np.linalg.matrix_rank(k) == 4


class TestDesignGains:
    def test_complete_graph_projector_spectrum(self):
        gains = design_gains(TRIANGLE)
        eig = np.linalg.eigvalsh(gains.aggregated())
        np.testing.assert_allclose(eig[:2], -1.0, atol=1e-9)
        np.testing.assert_allclose(eig[2:], 0.0, atol=1e-9)

    def test_triangle_kernel_constraints(self):
        gains = design_gains(TRIANGLE)
        a = gains.aggregated()
        assert np.max(np.abs(a @ TRIANGLE.stacked)) < 1e-10
        tx = np.zeros(6)
        tx[0::2] = 1.0
        assert np.max(np.abs(a @ tx)) < 1e-10

    def test_grid9_passes_verification(self):
        gains = design_gains(GRID9)
        report = verify_gains(gains, GRID9)
        assert report.ok
        assert report.kernel_dim == 4
        assert report.spectral_gap > 0.0

    def test_deterministic_bit_identical(self):
        g1 = design_gains(GRID9)
        g2 = design_gains(GRID9)
        for key in g1.blocks:
            assert np.array_equal(g1.blocks[key], g2.blocks[key])

    def test_infeasible_sparse_graph(self):
        # a path graph cannot pin a 4-agent square shape with a 4-dim kernel
        adj = np.zeros((4, 4), dtype=bool)
        for i in range(3):
            adj[i, i + 1] = adj[i + 1, i] = True
        spec = FormationSpec(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float), adj)
        with pytest.raises(InfeasibleDesignError):
            design_gains(spec, iteration_cap=3000)


class TestVerifyGains:
    def test_zero_matrix_fails_kernel_dim(self):
        gains = GainSet(3, TRIANGLE.adjacency, {
            (i, j): np.zeros((2, 2)) for i in range(3) for j in range(3) if i != j
        })
        report = verify_gains(gains, TRIANGLE)
        assert report.kernel_dim == 6
        assert not report.ok

    def test_corrupted_block_reports_symmetry_violation(self):
        gains = design_gains(TRIANGLE)
        blocks = {k: v.copy() for k, v in gains.blocks.items()}
        blocks[(0, 1)] = blocks[(0, 1)] + np.array([[0.0, 1e-3], [0.0, 0.0]])
        bad = GainSet(3, TRIANGLE.adjacency, blocks)
        report = verify_gains(bad, TRIANGLE)
        assert report.max_symmetry_violation > 1e-4
        assert not report.symmetry_ok

    def test_complete_graph_report_values(self):
        report = verify_gains(design_gains(TRIANGLE), TRIANGLE)
        assert report.spectral_gap == pytest.approx(1.0, abs=1e-9)
        assert report.kernel_dim == 4


class TestControlLaw:
    def test_zero_offsets_zero_control(self):
        gains = design_gains(TRIANGLE)
        u = control_law(0, [(1, np.zeros(2)), (2, np.zeros(2))], gains)
        np.testing.assert_allclose(u, 0.0)

    def test_at_target_all_controls_vanish(self):
        gains = design_gains(TRIANGLE)
        pts = TRIANGLE.positions + np.array([3.0, -1.0])  # common translation
        for i in range(3):
            neigh = [(j, pts[j] - pts[i]) for j in TRIANGLE.neighbors(i)]
            np.testing.assert_allclose(control_law(i, neigh, gains), 0.0, atol=1e-10)

    def test_matches_dense_aggregation(self, rng):
        gains = design_gains(TRIANGLE)
        a = gains.aggregated()
        pts = TRIANGLE.positions + rng.normal(scale=0.1, size=(3, 2))
        stacked = np.concatenate(
            [control_law(i, [(j, pts[j] - pts[i]) for j in TRIANGLE.neighbors(i)], gains)
             for i in range(3)]
        )
        np.testing.assert_allclose(stacked, a @ pts.reshape(-1), atol=1e-10)

    def test_missing_block_raises(self):
        gains = design_gains(TRIANGLE)
        with pytest.raises(MissingGainBlockError):
            control_law(0, [(0, np.zeros(2))], gains)


class TestClosedLoop:
    @pytest.mark.parametrize("spec", [TRIANGLE, GRID9], ids=["triangle", "grid9"])
    def test_exponential_contraction(self, spec, rng):
        gains = design_gains(spec)
        a = gains.aggregated()
        dt = 0.1 / abs(float(np.linalg.eigvalsh(a).min()))
        q = spec.stacked + rng.normal(scale=1.0, size=2 * spec.n)
        e0 = formation_error(q, spec.positions)
        prev = e0
        for _ in range(3000):
            q = q + dt * (a @ q)
            e = formation_error(q, spec.positions)
            assert e <= prev + 1e-9
            prev = e
            if e < 1e-6 * e0:
                break
        assert prev < 1e-6 * e0


class TestGainFileRoundTrip:
    def test_save_load(self, tmp_path):
        gains = design_gains(GRID9)
        report = verify_gains(gains, GRID9)
        path = tmp_path / "gains.txt"
        save_gains(gains, report, path)
        loaded = load_gains(path, GRID9)
        for key in gains.blocks:
            np.testing.assert_array_equal(loaded.blocks[key], gains.blocks[key])
        assert verify_gains(loaded, GRID9).ok
