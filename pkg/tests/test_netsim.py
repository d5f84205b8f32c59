import numpy as np
import pytest

from gabp import EngineConfig, certify, generate_gmrf, generate_linear, netsim, run
from gabp.convergence import LocalityError
from gabp.netsim import SimTrace, TraceRecord, simulate, verify_locality


def _assert_same_run(a, b):
    assert a.converged == b.converged and a.iterations == b.iterations
    for x, y in zip(a.beliefs, b.beliefs):
        assert x.mean.tobytes() == y.mean.tobytes()
        assert x.cov.tobytes() == y.cov.tobytes()


def test_g3_matches_centralized(g3):
    cfg = EngineConfig(eta=1e-12, init_seed=2)
    sim = simulate(g3, cfg)
    _assert_same_run(run(g3, cfg), sim.run)
    central = certify(g3)
    assert sim.report.local_radii == central.local_radii
    assert sim.report.local_verdicts == central.local_verdicts
    assert sim.report.verdict is True


def test_g3_trace_edges(g3):
    sim = simulate(g3)
    assert {r.edge for r in sim.trace.records} <= {(1, 2), (2, 3)}
    assert not [r for r in sim.trace.records if r.edge == (1, 3)]
    assert verify_locality(sim.trace, g3)


@pytest.mark.parametrize("kind", ["gmrf", "linear"])
def test_payload_counts(kind):
    m = generate_gmrf(9, "grid", 0.15, seed=1) if kind == "gmrf" else generate_linear(6, [1, 2, 3, 1, 2, 3], "cycle", seed=1)
    sim = simulate(m, EngineConfig(eta=1e-9, init_seed=1))
    assert netsim.payloads_per_round_ok(sim.trace, m)
    rounds = {(p, it) for p, it, k in sim.trace.counts() if k in netsim.MESSAGE_KINDS}
    assert len(rounds) == sim.fixed_point.iterations + sim.run.iterations
    # certification phase: one verdict bit per non-root node, nothing else
    cert = [r for r in sim.trace.records if r.phase == "certify"]
    assert len(cert) == len(m.node_ids) - 1 and all(r.kind == netsim.VERDICT_BIT for r in cert)


def test_fixed_point_identical(g3):
    m = generate_linear(7, [2, 1, 3, 1, 2, 2, 1], "erdos_renyi", seed=3, p=0.5)
    from gabp import fixed_point_information

    central = fixed_point_information(m)
    sim = simulate(m, phases=("info_fixed_point",))
    assert sim.fixed_point.iterations == central.iterations
    for key in central.v2f:
        assert sim.fixed_point.v2f[key].tobytes() == central.v2f[key].tobytes()
    assert sim.run is None and sim.report is None


def test_node_slice_is_local():
    m = generate_linear(9, 2, "grid", seed=5)
    sim = netsim.Simulator(m)
    for j, node in sim.nodes.items():
        assert set(node._edges) == set(m.neighbors(j))


def test_network_refuses_non_edge(g3):
    net = netsim.Network(g3)
    with pytest.raises(LocalityError, match=r"\(1, 3\)"):
        net.send("mean_propagation", 1, 1, 3, netsim.SCALAR_DH, 0.5)


def test_node_refuses_remote_lookup(g3):
    node = netsim.NodeProcess(g3, 1)
    with pytest.raises(LocalityError):
        node.j_pair(3)


def test_verify_locality_forged_and_empty(g3):
    forged = SimTrace([TraceRecord("mean_propagation", 1, 1, 3, netsim.SCALAR_DH, 8)])
    assert not verify_locality(forged, g3)
    assert verify_locality(SimTrace(), g3)


def test_payload_round_trip():
    net = netsim.Network(generate_linear(2, 3, "chain", seed=0))
    value = np.random.default_rng(0).standard_normal((3, 3))
    net.send("info_fixed_point", 1, 1, 2, netsim.INFO_MATRIX, value)
    got = net.receive(2, netsim.INFO_MATRIX)
    assert got[1].tobytes() == value.tobytes()
    assert net.trace.records[0].nbytes == 72


def test_export_format(g3):
    text = simulate(g3).trace.export()
    first = text.splitlines()[0].split(",")
    assert first[0] == "info_fixed_point" and first[1] == "1"
    assert first[4] in ("fwd", "rev") and first[5] == netsim.SCALAR_DJ


def test_uncertifiable_raises(c4):
    from gabp import FixedPointNotCertified

    with pytest.raises(FixedPointNotCertified):
        simulate(c4, max_iter=300)


def test_phase_dependency(g3):
    with pytest.raises(ValueError):
        simulate(g3, phases=("certify",))
