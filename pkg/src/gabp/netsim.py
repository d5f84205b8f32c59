"""Round-based network simulation of BP and of the local certificate.

Each node only holds its own prior (or ``J`` row and ``h`` entry) and the
data of its incident edges. Nodes talk through :class:`Network`, which
refuses any payload that does not travel along a model edge and records
every payload in a :class:`SimTrace`.

Global decisions (stop the information phase, stop mean propagation, the
network-wide certificate) are combined by a convergecast of single bits
over a breadth-first spanning tree rooted at node 1. Stop bits are also
broadcast back down so every node leaves the loop in the same round.

The node computations call the same kernels as :mod:`gabp.engine` with
operands in the same order, so the results are bit-identical to the
centralized path.
"""

import io
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from . import convergence, engine, numerics
from .convergence import ConvergenceReport, FixedPointInfo, FixedPointNotCertified, LocalityError
from .model import validate

INFO_MATRIX = "InfoMatrix"
MEAN_VECTOR = "MeanVector"
SCALAR_DJ = "ScalarDJ"
SCALAR_DH = "ScalarDH"
VERDICT_BIT = "VerdictBit"
CONTROL_BIT = "ControlBit"
MESSAGE_KINDS = (INFO_MATRIX, MEAN_VECTOR, SCALAR_DJ, SCALAR_DH)

PHASES = ("info_fixed_point", "certify", "mean_propagation")


@dataclass(frozen=True)
class TraceRecord:
    phase: str
    iteration: int
    sender: int
    receiver: int
    kind: str
    nbytes: int

    @property
    def edge(self):
        return (min(self.sender, self.receiver), max(self.sender, self.receiver))

    @property
    def direction(self):
        return "fwd" if self.sender < self.receiver else "rev"


@dataclass
class SimTrace:
    records: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)

    def append(self, record):
        self.records.append(record)

    def counts(self):
        """Payload counts keyed by ``(phase, iteration, kind)``."""
        return Counter((r.phase, r.iteration, r.kind) for r in self.records)

    def export(self, fh=None):
        """Line-delimited ``phase,iter,edge_i,edge_j,direction,kind,bytes`` records."""
        out = fh or io.StringIO()
        for r in self.records:
            i, j = r.edge
            out.write(f"{r.phase},{r.iteration},{i},{j},{r.direction},{r.kind},{r.nbytes}\n")
        return out.getvalue() if fh is None else None


@dataclass(frozen=True)
class WirePayload:
    kind: str
    sender: int
    receiver: int
    iteration: int
    shape: tuple
    body: bytes

    def decode(self):
        arr = np.frombuffer(self.body, dtype=np.float64)
        if arr.size != int(np.prod(self.shape)):
            raise ValueError("payload body does not match declared dimensions")
        if self.shape == ():
            return float(arr[0])
        return arr.reshape(self.shape).copy()


class Network:
    def __init__(self, model):
        self.edges = set(model.edge_pairs)
        self.trace = SimTrace()
        self.inboxes = {j: [] for j in model.node_ids}

    def send(self, phase, iteration, sender, receiver, kind, value):
        pair = (min(sender, receiver), max(sender, receiver))
        if pair not in self.edges:
            raise LocalityError(f"node {sender} tried to send {kind} over non-edge {pair}")
        arr = np.asarray(value, dtype=np.float64)
        payload = WirePayload(kind, sender, receiver, iteration, arr.shape, arr.tobytes())
        self.trace.append(TraceRecord(phase, iteration, sender, receiver, kind, len(payload.body)))
        self.inboxes[receiver].append(payload)

    def receive(self, node, kind):
        """Pop every payload of ``kind`` waiting at ``node``, keyed by sender."""
        keep, got = [], {}
        for p in self.inboxes[node]:
            if p.kind == kind:
                got[p.sender] = p.decode()
            else:
                keep.append(p)
        self.inboxes[node] = keep
        return got


class NodeProcess:
    """Node-resident state. Built from incident data only."""

    def __init__(self, model, j):
        self.node_id = j
        self.kind = model.kind
        self.nbrs = tuple(model.neighbors(j))
        if self.kind == "gmrf":
            self._j_self = float(model.J[j - 1, j - 1])
            self._h_self = float(model.h[j - 1])
            self._j_pair = {k: float(model.J[j - 1, k - 1]) for k in self.nbrs}
            self.prior_info = None
        else:
            self.prior_info = numerics.invert_spd(model.node(j).prior_cov)
            self._edges = {}
            for k in self.nbrs:
                e = model.edge(j, k)
                self._edges[k] = (e.coef(j), e.coef(k), e.noise_cov, e.y)
        # information phase caches
        self.f2v_info = {}
        self.v2f_info_out = {}
        self.v2f_info_in = {}
        self.fp_residual = float("inf")
        self.verdict = None
        self.rho = None
        self.log = []

    # LocalView interface, backed by node-resident data only
    def _check(self, k, what):
        if k not in self.nbrs:
            raise LocalityError(f"node {self.node_id} has no edge to {k} (requested {what})")
        self.log.append((what, (min(k, self.node_id), max(k, self.node_id))))

    def neighbors(self):
        return self.nbrs

    def edge(self, k):
        self._check(k, "edge")
        return self._edges[k]

    def info_out(self, i):
        self._check(i, "info_out")
        return self.v2f_info_out[i]

    def info_in(self, k):
        self._check(k, "info_in")
        return self.v2f_info_in[k]

    def j_self(self):
        return self._j_self

    def h_self(self):
        return self._h_self

    def j_pair(self, k):
        self._check(k, "j_pair")
        return self._j_pair[k]

    # BP computations
    def outgoing_info(self, i, f2v_info):
        others = [k for k in self.nbrs if k != i]
        if self.kind == "gmrf":
            return engine.gmrf_dj(self._j_self, self._j_pair[i], [f2v_info[k] for k in others])
        return engine.v2f_info(self.prior_info, [f2v_info[k] for k in others])

    def outgoing(self, i, f2v):
        """Full ``(info, mean)`` message to factor ``f_{i,j}``; ``f2v[k] = (info, mean)``."""
        others = [k for k in self.nbrs if k != i]
        if self.kind == "gmrf":
            dj_in = [f2v[k][0] for k in others]
            dh_in = [f2v[k][1] for k in others]
            return (
                engine.gmrf_dj(self._j_self, self._j_pair[i], dj_in),
                engine.gmrf_dh(self._j_self, self._j_pair[i], self._h_self, dj_in, dh_in),
            )
        incoming = [f2v[k] for k in others]
        info = engine.v2f_info(self.prior_info, [inf for inf, _ in incoming])
        return info, engine.v2f_mean(info, incoming)

    def incoming_info(self, k, v2f_info):
        if self.kind == "gmrf":
            return v2f_info
        a_self, a_other, noise_cov, _ = self._edges[k]
        return engine.f2v_info(a_self, a_other, noise_cov, v2f_info)[0]

    def incoming(self, k, v2f_info, v2f_mean):
        if self.kind == "gmrf":
            return v2f_info, v2f_mean
        a_self, a_other, noise_cov, y = self._edges[k]
        info, bracket_inv = engine.f2v_info(a_self, a_other, noise_cov, v2f_info)
        return info, engine.f2v_mean(info, bracket_inv, a_self, a_other, y, v2f_mean)

    def belief(self, f2v):
        if self.kind == "gmrf":
            res = engine.belief_gmrf(
                self._j_self, self._h_self, [f2v[k][0] for k in self.nbrs], [f2v[k][1] for k in self.nbrs]
            )
            if res is None:
                return engine.Belief(self.node_id, np.array([np.nan]), np.array([[np.nan]]), defined=False)
            return engine.Belief(self.node_id, np.array([res[0]]), np.array([[res[1]]]))
        try:
            mean, cov = engine.belief_linear(self.prior_info, [f2v[k] for k in self.nbrs])
        except numerics.NotPositiveDefiniteError:
            d = self.prior_info.shape[0]
            return engine.Belief(self.node_id, np.full(d, np.nan), np.full((d, d), np.nan), defined=False)
        return engine.Belief(self.node_id, mean, cov)


def bfs_tree(model, root=1):
    """``(parent, order)`` of a breadth-first spanning tree."""
    parent = {root: None}
    order = [root]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in model.neighbors(u):
            if v not in parent:
                parent[v] = u
                order.append(v)
                queue.append(v)
    return parent, order


class Simulator:
    def __init__(self, model):
        problems = validate(model)
        if problems:
            raise engine.InvalidModelError("; ".join(map(str, problems)))
        self.model = model
        self.net = Network(model)
        self.nodes = {j: NodeProcess(model, j) for j in model.node_ids}
        self.parent, self.bfs_order = bfs_tree(model)

    @property
    def trace(self):
        return self.net.trace

    def _all_agree(self, phase, iteration, bits):
        """Convergecast the conjunction of ``bits`` to the root, broadcast it back."""
        acc = dict(bits)
        for j in reversed(self.bfs_order[1:]):
            self.net.send(phase, iteration, j, self.parent[j], CONTROL_BIT, float(acc[j]))
            got = self.net.receive(self.parent[j], CONTROL_BIT)
            acc[self.parent[j]] = acc[self.parent[j]] and bool(got[j])
        decision = acc[self.bfs_order[0]]
        for j in self.bfs_order[1:]:
            self.net.send(phase, iteration, self.parent[j], j, CONTROL_BIT, float(decision))
            self.net.receive(j, CONTROL_BIT)
        return decision

    # phase 1
    def info_fixed_point(self, tol=convergence.FP_TOL, max_iter=convergence.FP_MAX_ITER):
        phase = PHASES[0]
        kind = SCALAR_DJ if self.model.kind == "gmrf" else INFO_MATRIX
        zero = convergence.initial_f2v_info(self.model)
        for j, node in self.nodes.items():
            node.f2v_info = {k: zero[(k, j)] for k in node.nbrs}
            node.v2f_info_out = {}
        for it in range(1, max_iter + 1):
            try:
                outgoing = {
                    j: {i: node.outgoing_info(i, node.f2v_info) for i in node.nbrs}
                    for j, node in self.nodes.items()
                }
            except (ZeroDivisionError, numerics.NotPositiveDefiniteError) as exc:
                raise FixedPointNotCertified(f"information recursion broke down at iteration {it}: {exc}") from exc
            for j, msgs in outgoing.items():
                for i, info in msgs.items():
                    self.net.send(phase, it, j, i, kind, info)
            bits = {}
            for j, node in self.nodes.items():
                received = self.net.receive(j, kind)
                try:
                    new_f2v = {k: node.incoming_info(k, received[k]) for k in node.nbrs}
                except numerics.NotPositiveDefiniteError as exc:
                    raise FixedPointNotCertified(f"information recursion broke down at iteration {it}: {exc}") from exc
                changes = [convergence._rel_change(new_f2v[k], node.f2v_info[k]) for k in node.nbrs]
                if it == 1:
                    changes.append(float("inf"))
                else:
                    changes += [convergence._rel_change(outgoing[j][i], node.v2f_info_out[i]) for i in node.nbrs]
                node.fp_residual = max(changes) if changes else 0.0
                node.f2v_info = new_f2v
                node.v2f_info_out = outgoing[j]
                node.v2f_info_in = received
                if not np.isfinite(node.fp_residual) and it > 1:
                    raise FixedPointNotCertified(f"information recursion diverged at iteration {it} (node {j})")
                bits[j] = node.fp_residual <= tol
            if self._all_agree(phase, it, bits):
                return it
        raise FixedPointNotCertified(f"fixed point not certified after {max_iter} iterations")

    def fixed_point(self, iterations):
        """Assemble the per-node caches into a :class:`FixedPointInfo` (for comparison only)."""
        v2f, f2v = {}, {}
        for j, node in self.nodes.items():
            for i in node.nbrs:
                v2f[(j, i)] = node.v2f_info_out[i]
                f2v[(i, j)] = node.f2v_info[i]
        residual = max((n.fp_residual for n in self.nodes.values()), default=0.0)
        return FixedPointInfo(self.model.kind, dict(sorted(v2f.items())), dict(sorted(f2v.items())), residual, iterations)

    # phase 2
    def certify(self):
        phase = PHASES[1]
        for node in self.nodes.values():
            node.rho, node.verdict = convergence.local_condition(convergence.q_block_from_view(node))
        acc = {j: n.verdict for j, n in self.nodes.items()}
        for j in reversed(self.bfs_order[1:]):
            self.net.send(phase, 0, j, self.parent[j], VERDICT_BIT, float(acc[j]))
            got = self.net.receive(self.parent[j], VERDICT_BIT)
            acc[self.parent[j]] = acc[self.parent[j]] and bool(got[j])
        verdict = acc[self.bfs_order[0]]
        self.trace.verdicts = {j: n.verdict for j, n in self.nodes.items()}
        self.trace.verdicts["global"] = verdict
        return verdict

    # phase 3
    def mean_propagation(self, config: engine.EngineConfig):
        phase = PHASES[2]
        gmrf = self.model.kind == "gmrf"
        kinds = (SCALAR_DJ, SCALAR_DH) if gmrf else (INFO_MATRIX, MEAN_VECTOR)
        init = engine.init_state(self.model, config)
        f2v = {j: {k: (init.f2v[(k, j)].info, init.f2v[(k, j)].mean) for k in n.nbrs} for j, n in self.nodes.items()}
        beliefs = {j: n.belief(f2v[j]) for j, n in self.nodes.items()}

        def snapshot(it, v2f_out, f2v_all, bel):
            v2f = {}
            f2vm = {}
            for j, n in self.nodes.items():
                for i in n.nbrs:
                    if v2f_out is None:
                        src = init.v2f[(j, i)]
                        v2f[(j, i)] = src
                    else:
                        info, mean = v2f_out[j][i]
                        v2f[(j, i)] = engine.GaussianMessage(engine.VARIABLE_TO_FACTOR, j, i, info, mean)
                    info, mean = f2v_all[j][i]
                    f2vm[(i, j)] = engine.GaussianMessage(engine.FACTOR_TO_VARIABLE, i, j, info, mean)
            return engine.MessageState(it, dict(sorted(v2f.items())), dict(sorted(f2vm.items())),
                                       [bel[j] for j in self.model.node_ids])

        state = snapshot(0, None, f2v, beliefs)
        belief_traj = [state.beliefs] if config.record else []
        msg_traj = [state] if config.record else []
        deltas = []
        converged = False
        it = 0
        for it in range(1, config.max_iter + 1):
            outgoing = {}
            for j, node in self.nodes.items():
                out = {}
                for i in node.nbrs:
                    try:
                        out[i] = node.outgoing(i, f2v[j])
                    except (numerics.NotPositiveDefiniteError, ZeroDivisionError) as exc:
                        raise engine.NumericalError(f"variable-to-factor update failed: {exc}", it, (j, i)) from exc
                outgoing[j] = out
            for j, out in outgoing.items():
                for i, (info, mean) in out.items():
                    self.net.send(phase, it, j, i, kinds[0], info)
                    self.net.send(phase, it, j, i, kinds[1], mean)
            new_f2v = {}
            for j, node in self.nodes.items():
                infos = self.net.receive(j, kinds[0])
                means = self.net.receive(j, kinds[1])
                msgs = {}
                for k in node.nbrs:
                    try:
                        msgs[k] = node.incoming(k, infos[k], np.atleast_1d(means[k]) if not gmrf else means[k])
                    except numerics.NotPositiveDefiniteError as exc:
                        raise engine.NumericalError(f"factor-to-variable update failed: {exc}", it, (k, j)) from exc
                new_f2v[j] = msgs
            f2v = new_f2v
            new_beliefs = {j: n.belief(f2v[j]) for j, n in self.nodes.items()}
            local_delta = {}
            for j in self.nodes:
                with np.errstate(invalid="ignore", over="ignore"):
                    d = float(np.linalg.norm(new_beliefs[j].mean - beliefs[j].mean))
                local_delta[j] = d
            beliefs = new_beliefs
            deltas.append(_global_max(local_delta.values()))  # bookkeeping only
            stop = self._all_agree(phase, it, {j: d < config.eta for j, d in local_delta.items()})
            if config.record or stop or it == config.max_iter:
                state = snapshot(it, outgoing, f2v, beliefs)
            if config.record:
                belief_traj.append(state.beliefs)
                msg_traj.append(state)
            if stop:
                converged = True
                break
        return engine.BpRunResult(
            converged=converged,
            iterations=it if config.max_iter else 0,
            beliefs=state.beliefs,
            deltas=deltas,
            final_state=state,
            belief_trajectory=belief_traj,
            message_trajectory=msg_traj,
        )


def _global_max(values):
    worst = 0.0
    for d in values:
        if not np.isfinite(d):
            return float("nan")
        worst = max(worst, d)
    return worst


@dataclass
class SimResult:
    run: object
    report: object
    trace: SimTrace
    fixed_point: object = None


def simulate(model, config=None, phases=PHASES, tol=convergence.FP_TOL, max_iter=convergence.FP_MAX_ITER) -> SimResult:
    """Run the requested phases over the simulated network.

    ``certify`` needs ``info_fixed_point``. Raises
    :class:`~gabp.convergence.LocalityError` if any node reaches for
    non-local data and :class:`~gabp.convergence.FixedPointNotCertified` if
    the information phase does not settle.
    """
    config = config or engine.EngineConfig()
    unknown = set(phases) - set(PHASES)
    if unknown:
        raise ValueError(f"unknown phases {sorted(unknown)}")
    if "certify" in phases and "info_fixed_point" not in phases:
        raise ValueError("certify requires info_fixed_point")
    sim = Simulator(model)
    fp = report = run = None
    if "info_fixed_point" in phases:
        fp = sim.fixed_point(sim.info_fixed_point(tol, max_iter))
    if "certify" in phases:
        verdict = sim.certify()
        report = ConvergenceReport(
            {j: n.rho for j, n in sim.nodes.items()},
            {j: n.verdict for j, n in sim.nodes.items()},
            verdict,
            provenance=["local", "distributed"],
            fixed_point_iterations=fp.iterations,
            fixed_point_residual=fp.residual,
        )
    if "mean_propagation" in phases:
        run = sim.mean_propagation(config)
    return SimResult(run, report, sim.trace, fp)


def verify_locality(trace: SimTrace, model) -> bool:
    edges = set(model.edge_pairs)
    return all(r.edge in edges for r in trace.records)


def payloads_per_round_ok(trace: SimTrace, model) -> bool:
    """Every (phase, round, message kind) carries exactly ``2|E|`` payloads."""
    expected = 2 * len(model.edge_pairs)
    return all(n == expected for (_, _, kind), n in trace.counts().items() if kind in MESSAGE_KINDS)
