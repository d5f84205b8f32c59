import numpy as np
import pytest

from gabp import convergence, engine, generate_gmrf, generate_linear, numerics
from gabp.convergence import (
    FixedPointNotCertified,
    LocalityError,
    LocalView,
    build_local_q,
    centralized_condition,
    fixed_point_information,
    local_condition,
    walk_summability,
)
from gabp.model import GmrfModel, linear_from_arrays

from conftest import tree_diameter


class TestFixedPoint:
    def test_l2_scalar(self, l2):
        fp = fixed_point_information(l2)
        # leaf: v2f info = W^-1 = 1; f2v info = 1 * (1 + 1 * 1 * 1)^-1 * 1 = 1/2
        np.testing.assert_allclose(fp.v2f[(1, 2)], [[1.0]], rtol=1e-15)
        np.testing.assert_allclose(fp.f2v[(2, 1)], [[0.5]], rtol=1e-15)

    def test_g3_leaf_message(self, g3):
        fp = fixed_point_information(g3)
        assert fp.v2f[(1, 2)] == pytest.approx(-0.16, rel=1e-15)
        # node 2 towards 1: -0.16 / (1 - 0.16)
        assert fp.v2f[(2, 1)] == pytest.approx(-0.16 / 0.84, rel=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_tree_settles_after_diameter_rounds(self, seed):
        m = generate_linear(8, [1, 2, 3, 1, 2, 3, 1, 2], "tree", seed=seed)
        fp = fixed_point_information(m)
        diam = tree_diameter(m)
        f2v = convergence.initial_f2v_info(m)
        priors = engine.prior_informations(m)
        for _ in range(diam):
            v2f, f2v = convergence.info_round(m, f2v, priors)
        for key in fp.v2f:
            assert v2f[key].tobytes() == fp.v2f[key].tobytes()
        assert fp.residual == 0.0 and fp.iterations == diam + 1

    def test_not_certified(self, c4):
        with pytest.raises(FixedPointNotCertified):
            fixed_point_information(c4, max_iter=500)

    def test_matrices_pd(self):
        fp = fixed_point_information(generate_linear(6, [2, 1, 3, 2, 2, 1], "cycle", seed=1))
        for mat in list(fp.v2f.values()) + list(fp.f2v.values()):
            assert numerics.is_pd(mat)


class TestLocalQ:
    def test_leaf_is_zero(self, g3):
        fp = fixed_point_information(g3)
        block = build_local_q(g3, fp, 1)
        assert not np.any(block.matrix)
        assert local_condition(block) == (0.0, True)

    def test_linear_leaf_is_zero(self):
        m = generate_linear(5, 2, "tree", seed=4)
        fp = fixed_point_information(m)
        leaf = next(j for j in m.node_ids if len(m.neighbors(j)) == 1)
        assert not np.any(build_local_q(m, fp, leaf).matrix)

    def test_g3_middle_node(self, g3):
        fp = fixed_point_information(g3)
        block = build_local_q(g3, fp, 2)
        assert block.rows == [(2, 1), (2, 3)] and block.cols == [(1, 2), (3, 2)]
        # coefficient of dh_{3->2} in dh_{2->1}: J21 / (J22 + dJ*_{3->2})
        entry = block.block((2, 1), (3, 2))[0, 0]
        assert entry == pytest.approx(-0.4 / 0.84, rel=1e-14)
        assert abs(entry) == pytest.approx(0.47619, abs=1e-5)
        assert block.block((2, 1), (1, 2))[0, 0] == 0.0
        assert block.block((2, 3), (3, 2))[0, 0] == 0.0
        rho, verdict = local_condition(block)
        # oracle: dense eigensolve of the 2x2 product
        expected = np.max(np.abs(np.linalg.eigvals(block.matrix @ block.matrix.T)))
        assert rho == pytest.approx(expected, rel=1e-14)
        assert rho == pytest.approx((0.4 / 0.84) ** 2, rel=1e-14)
        assert verdict

    def test_self_columns_zero_linear(self):
        m = generate_linear(6, [1, 2, 3, 1, 2, 3], "grid", seed=2)
        fp = fixed_point_information(m)
        for j in m.node_ids:
            block = build_local_q(m, fp, j)
            for i in m.neighbors(j):
                assert not np.any(block.block((j, i), (i, j)))

    def test_large_entry_fails(self, g3):
        fp = fixed_point_information(g3)
        block = build_local_q(g3, fp, 2)
        block.matrix = block.matrix * (10 / np.max(np.abs(block.matrix)))
        rho, verdict = local_condition(block)
        assert rho >= 100 - 1e-9 and not verdict

    def test_reads_only_incident_edges(self):
        m = generate_linear(9, 2, "grid", seed=3)
        fp = fixed_point_information(m)
        for j in m.node_ids:
            view = LocalView(m, fp, j)
            convergence.q_block_from_view(view)
            incident = {(min(j, k), max(j, k)) for k in m.neighbors(j)}
            assert view.log and {pair for _, pair in view.log} <= incident

    def test_view_refuses_remote_data(self, g3):
        view = LocalView(g3, fixed_point_information(g3), 1)
        with pytest.raises(LocalityError):
            view.j_pair(3)
        with pytest.raises(LocalityError):
            view.info_in(3)


class TestCentralized:
    @pytest.mark.parametrize("seed", range(4))
    def test_tree_rho_below_one(self, seed):
        m = generate_linear(7, [1, 2, 1, 3, 2, 1, 2], "tree", seed=seed)
        rho_q, _ = centralized_condition(m, fixed_point_information(m))
        assert rho_q < 1

    def test_g3_equivalence(self, g3):
        fp = fixed_point_information(g3)
        _, rho_qqt = centralized_condition(g3, fp)
        local = max(local_condition(build_local_q(g3, fp, j))[0] for j in g3.node_ids)
        assert rho_qqt == pytest.approx(local, rel=1e-12)

    def test_single_edge(self, l2):
        assert centralized_condition(l2, fixed_point_information(l2)) == (0.0, 0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_block_structure_and_bound(self, seed):
        m = generate_linear(6, [1, 2, 1, 2, 1, 2], "erdos_renyi", seed=seed, p=0.5)
        fp = fixed_point_information(m)
        Q, _, order = convergence.assemble_q(m, fp)
        dims = convergence.message_dims(m)
        blocks = {j: build_local_q(m, fp, j).expand(order, dims) for j in m.node_ids}
        for i in m.node_ids:
            for j in m.node_ids:
                if i != j:
                    assert not np.any(blocks[j] @ blocks[i].T)
        rho_q, rho_qqt = centralized_condition(m, fp)
        assert rho_q <= np.sqrt(rho_qqt) + 1e-10

    def test_refuses_huge(self, monkeypatch, g3):
        monkeypatch.setattr(convergence, "MAX_CENTRAL_SIZE", 2)
        with pytest.raises(MemoryError):
            centralized_condition(g3, fixed_point_information(g3))


class TestWalkSummability:
    def test_g3(self, g3):
        rho, ok = walk_summability(g3)
        assert rho == pytest.approx(0.4 * np.sqrt(2), rel=1e-12) and ok

    def test_c4(self, c4):
        rho, ok = walk_summability(c4)
        assert rho == pytest.approx(1.2, rel=1e-12) and not ok

    def test_identity(self):
        assert walk_summability(GmrfModel(np.eye(3), np.ones(3))) == (0.0, True)

    def test_wrong_kind(self, l2):
        with pytest.raises(TypeError):
            walk_summability(l2)


class TestCertify:
    def test_report(self, g3):
        rep = convergence.certify(g3, centralized=True)
        assert rep.verdict and rep.walk_summable
        assert rep.provenance == ["local", "centralized"]
        assert rep.rho_qqt == pytest.approx(max(rep.local_radii.values()), rel=1e-12)
        assert set(rep.to_dict()) >= {"local_radii", "local_verdicts", "verdict", "rho_q", "rho_qqt"}
