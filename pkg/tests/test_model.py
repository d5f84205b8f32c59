import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gabp import modelio, numerics
from gabp.model import (
    EdgeObservation,
    GenerationError,
    GmrfModel,
    LinearGaussianModel,
    NodeParams,
    generate_gmrf,
    generate_linear,
    linear_from_arrays,
    validate,
)


class TestValidate:
    def test_two_node_linear_valid(self, l2):
        assert validate(l2) == []

    def test_non_unit_diagonal(self, g3):
        J = np.array(g3.J)
        J[0, 0] = 2.0
        report = validate(GmrfModel(J, g3.h))
        assert any(v.location == "node 1" and "diagonal not unit" in v.message for v in report)

    def test_rank_deficient_coefficient(self):
        m = LinearGaussianModel(
            (NodeParams(1, 1, [[1.0]]), NodeParams(2, 1, [[1.0]])),
            (EdgeObservation(1, 2, np.zeros((2, 1)), [[1.0], [0.0]], np.eye(2), [1.0, 0.0]),),
        )
        report = validate(m)
        assert len(report) == 1
        assert "rank deficient coefficient" in report[0].message

    def test_disconnected_and_bad_prior(self):
        m = LinearGaussianModel(
            (NodeParams(1, 1, [[1.0]]), NodeParams(2, 1, [[1.0]]), NodeParams(3, 1, [[-1.0]])),
            (EdgeObservation(1, 2, [[1.0]], [[1.0]], [[1.0]], [1.0]),),
        )
        messages = [v.message for v in validate(m)]
        assert "not connected" in messages
        assert "prior covariance not positive definite" in messages

    def test_validate_does_not_mutate(self, g3):
        before = np.array(g3.J)
        validate(g3)
        np.testing.assert_array_equal(g3.J, before)


class TestEdgeRecord:
    def test_symmetric_lookup(self):
        m = generate_linear(4, [1, 2, 3, 1], "chain", seed=3)
        assert m.edge(2, 3) is m.edge(3, 2)
        e = m.edge(3, 2)
        assert e.coef(2).shape[1] == 2 and e.coef(3).shape[1] == 3

    def test_reversed_construction_is_canonical(self):
        e = EdgeObservation(2, 1, [[2.0]], [[3.0]], [[1.0]], [0.5])
        assert e.pair == (1, 2)
        assert e.coef(2)[0, 0] == 2.0 and e.coef(1)[0, 0] == 3.0

    def test_immutable(self, g3):
        with pytest.raises(ValueError):
            g3.J[0, 1] = 5.0


class TestGenerateGmrf:
    def test_chain(self):
        m = generate_gmrf(3, "chain", 0.4, seed=123)
        np.testing.assert_array_equal(m.J, [[1, -0.4, 0], [-0.4, 1, -0.4], [0, -0.4, 1]])
        assert np.all(np.abs(m.h) <= 1)

    def test_cycle_walk_radius(self):
        m = generate_gmrf(4, "cycle", 0.6, seed=5)
        # circulant 4-cycle adjacency has eigenvalues 2 cos(2 pi k / 4) -> max 2, scaled by 0.6
        assert numerics.spectral_radius(np.abs(np.eye(4) - m.J)) == pytest.approx(1.2, rel=1e-12)

    def test_zero_coupling_rejected(self):
        with pytest.raises(GenerationError):
            generate_gmrf(2, "chain", 0.0, seed=1)

    def test_unconnectable(self):
        with pytest.raises(GenerationError):
            generate_gmrf(30, "erdos_renyi", 0.3, seed=1, p=0.001)

    @pytest.mark.parametrize("topology", ["chain", "cycle", "grid", "tree"])
    def test_edge_set_matches_sparsity(self, topology):
        m = generate_gmrf(10, topology, 0.3, seed=2)
        pattern = {(i + 1, j + 1) for i, j in zip(*np.nonzero(m.J)) if i < j}
        assert pattern == set(m.edge_pairs)
        assert validate(m) == []


class TestGenerateLinear:
    def test_scalar_pair(self):
        m = generate_linear(2, [1, 1], "chain", seed=4)
        assert len(m.edges) == 1 and validate(m) == []

    def test_cycle_full_rank(self):
        m = generate_linear(5, [2, 2, 2, 2, 2], "cycle", seed=4)
        assert len(m.edges) == 5
        for e in m.edges:
            assert e.a_ji.shape == (2, 2) and np.linalg.matrix_rank(e.a_ji) == 2
            assert np.linalg.matrix_rank(e.a_ij) == 2

    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(2, 9),
        st.sampled_from(["chain", "cycle", "grid", "tree", "erdos_renyi"]),
        st.integers(0, 2**31),
        st.lists(st.integers(1, 3), min_size=9, max_size=9),
    )
    def test_generated_models_validate_and_are_pure(self, n, topology, seed, dims):
        if topology == "cycle" and n < 3:
            n = 3
        a = generate_linear(n, dims[:n], topology, seed, p=0.6)
        b = generate_linear(n, dims[:n], topology, seed, p=0.6)
        assert validate(a) == []
        assert a == b
        g = generate_gmrf(n, topology, 0.2, seed, p=0.6)
        assert validate(g) == [] and g == generate_gmrf(n, topology, 0.2, seed, p=0.6)


class TestFiles:
    def test_round_trip_gmrf(self, g3, tmp_path):
        path = tmp_path / "g3.json"
        modelio.save(g3, path)
        back = modelio.load(path)
        assert back == g3
        assert back.J.tobytes() == g3.J.tobytes() and back.h.tobytes() == g3.h.tobytes()

    def test_round_trip_linear_bit_exact(self, tmp_path):
        m = generate_linear(6, [1, 2, 3, 1, 2, 3], "grid", seed=11)
        path = tmp_path / "m.json"
        modelio.save(m, path)
        back = modelio.load(path)
        assert back == m
        for a, b in zip(m.edges, back.edges):
            assert a.y.tobytes() == b.y.tobytes()
        assert modelio.digest(back) == modelio.digest(m)

    def test_seventeen_digits(self, g3, tmp_path):
        text = modelio.model_text(g3)
        assert "-0.40000000000000002" in text

    def _linear_doc(self):
        return modelio.to_dict(generate_linear(3, [1, 2, 1], "chain", seed=1))

    def test_dimension_mismatch(self, tmp_path):
        doc = self._linear_doc()
        doc["edges"][0]["A_ij"] = [[1.0]] * len(doc["edges"][0]["y"])  # node 2 has dim 2
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(modelio.ModelFormatError, match=r"dimension mismatch edge \(1,2\)"):
            modelio.load(path)

    def test_missing_observation(self, tmp_path):
        doc = self._linear_doc()
        del doc["edges"][1]["y"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(modelio.ModelFormatError, match="missing observation"):
            modelio.load(path)

    def test_non_symmetric_j(self, g3, tmp_path):
        doc = modelio.to_dict(g3)
        doc["J"] = [t for t in doc["J"] if t[:2] != [2, 1]]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(modelio.ModelFormatError, match="non-symmetric J") as info:
            modelio.load(path)
        assert info.value.field == "J"


def test_from_arrays_helper():
    m = linear_from_arrays([np.eye(2), 1.0], [(1, 2, np.eye(2), [[1.0], [2.0]], np.eye(2), [0.0, 1.0])])
    assert validate(m) == []
    assert m.dim(1) == 2 and m.neighbors(2) == (1,)
