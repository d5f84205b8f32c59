"""Convergence certification for Gaussian BP.

The mean messages of synchronous BP evolve, once the information matrices
have settled, as the affine recursion ``v <- b - Q v`` over the stacked
variable-to-factor mean messages. ``Q`` is made of row blocks ``Q_j`` (one
per node, rows = messages sent by ``j``) whose non-zero columns are the
messages *received* by ``j``. Distinct row blocks therefore never share a
column, ``Q Q^T`` is block diagonal, and ``rho(Q_j Q_j^T) < 1`` at every node
is a sufficient condition that each node can check with local data only.

Message order: directed pairs ``(source, target)`` sorted ascending, i.e.
grouped by sender and then by receiver. Rows and columns of ``Q`` use the
same order so ``Q`` is a genuine iteration matrix.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import engine, numerics
from .model import validate

FP_TOL = 1e-12
FP_MAX_ITER = 10_000
#: Largest assembled Q (rows) the centralized baseline agrees to build.
MAX_CENTRAL_SIZE = 4000


class FixedPointNotCertified(RuntimeError):
    pass


class LocalityError(LookupError):
    """A local computation asked for data that does not live at the node."""


@dataclass
class FixedPointInfo:
    """Limit message information.

    ``v2f[(j, i)]``: information of the message from ``j`` to ``f_{i,j}``.
    ``f2v[(k, j)]``: information of the message from ``f_{k,j}`` to ``j``.
    For a GMRF both hold the scalar ``dJ`` of the directed message.
    """

    kind: str
    v2f: dict
    f2v: dict
    residual: float
    iterations: int


def _rel_change(new, old):
    new = np.asarray(new, dtype=float)
    old = np.asarray(old, dtype=float)
    diff = np.abs(new - old)
    scale = np.maximum(1.0, np.abs(new))
    return float(np.max(diff / scale)) if diff.size else 0.0


def info_round(model, f2v_prev, prior_infos=None):
    """One synchronous round of the information-only recursion."""
    keys = engine.directed_pairs(model)
    v2f, f2v = {}, {}
    for j, i in keys:
        others = [k for k in model.neighbors(j) if k != i]
        if model.kind == "gmrf":
            v2f[(j, i)] = engine.gmrf_dj(
                float(model.J[j - 1, j - 1]), float(model.J[j - 1, i - 1]), [f2v_prev[(k, j)] for k in others]
            )
        else:
            v2f[(j, i)] = engine.v2f_info(prior_infos[j], [f2v_prev[(k, j)] for k in others])
    for k, j in keys:
        if model.kind == "gmrf":
            f2v[(k, j)] = v2f[(k, j)]
        else:
            e = model.edge(k, j)
            f2v[(k, j)], _ = engine.f2v_info(e.coef(j), e.coef(k), e.noise_cov, v2f[(k, j)])
    return v2f, f2v


def initial_f2v_info(model):
    if model.kind == "gmrf":
        return {key: 0.0 for key in engine.directed_pairs(model)}
    return {(k, j): np.zeros((model.dim(j), model.dim(j))) for k, j in engine.directed_pairs(model)}


def fixed_point_information(model, tol=FP_TOL, max_iter=FP_MAX_ITER) -> FixedPointInfo:
    """Iterate the information recursion from zero until it stops moving.

    Converged when every entry of every message changes by at most
    ``tol * max(1, |entry|)`` in one round.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    problems = validate(model)
    if problems:
        raise engine.InvalidModelError("; ".join(map(str, problems)))
    priors = engine.prior_informations(model)
    f2v = initial_f2v_info(model)
    v2f = None
    residual = float("inf")
    for it in range(1, max_iter + 1):
        try:
            new_v2f, new_f2v = info_round(model, f2v, priors)
        except (ZeroDivisionError, numerics.NotPositiveDefiniteError) as exc:
            raise FixedPointNotCertified(f"information recursion broke down at iteration {it}: {exc}") from exc
        residual = max(
            [_rel_change(new_f2v[k], f2v[k]) for k in new_f2v]
            + ([_rel_change(new_v2f[k], v2f[k]) for k in new_v2f] if v2f is not None else [float("inf")])
        )
        v2f, f2v = new_v2f, new_f2v
        if not np.isfinite(residual) and it > 1:
            raise FixedPointNotCertified(f"information recursion diverged at iteration {it}")
        if residual <= tol:
            return FixedPointInfo(model.kind, v2f, f2v, residual, it)
    raise FixedPointNotCertified(
        f"fixed point not certified after {max_iter} iterations (residual {residual:.3g} > {tol:g})"
    )


# ---------------------------------------------------------------------------
# local view


class LocalView:
    """Everything node ``j`` may read: its own parameters, its incident
    edges, and fixed-point information of messages on those edges.

    Every access is appended to ``log`` as ``(what, pair)``.
    """

    def __init__(self, model, fp: FixedPointInfo, j):
        self._model = model
        self._fp = fp
        self.node_id = j
        self.kind = model.kind
        self.log = []

    def _check(self, k, what):
        if k not in self._model.neighbors(self.node_id):
            raise LocalityError(f"node {self.node_id} has no edge to {k} (requested {what})")
        self.log.append((what, (min(k, self.node_id), max(k, self.node_id))))

    def neighbors(self):
        return self._model.neighbors(self.node_id)

    # linear Gaussian
    def edge(self, k):
        """``(a_self, a_other, noise_cov, y)`` for the edge to ``k``."""
        self._check(k, "edge")
        e = self._model.edge(self.node_id, k)
        return e.coef(self.node_id), e.coef(k), e.noise_cov, e.y

    def info_out(self, i):
        self._check(i, "info_out")
        return self._fp.v2f[(self.node_id, i)]

    def info_in(self, k):
        """Fixed-point information of the message ``k`` sent towards ``j``."""
        self._check(k, "info_in")
        return self._fp.v2f[(k, self.node_id)]

    # GMRF
    def j_self(self):
        return float(self._model.J[self.node_id - 1, self.node_id - 1])

    def h_self(self):
        return float(self._model.h[self.node_id - 1])

    def j_pair(self, k):
        self._check(k, "j_pair")
        return float(self._model.J[self.node_id - 1, k - 1])


@dataclass
class LocalQBlock:
    """Row block ``Q_j`` restricted to its non-zero columns.

    ``rows`` are the messages ``(j, i)`` sent by ``j`` and ``cols`` the
    messages ``(k, j)`` it receives, both ascending. ``matrix`` and ``b``
    are laid out by ``row_dims``/``col_dims``.
    """

    node_id: int
    rows: list
    cols: list
    row_dims: list
    col_dims: list
    matrix: np.ndarray
    b: np.ndarray

    def block(self, row, col):
        r = self.rows.index(row)
        c = self.cols.index(col)
        r0 = sum(self.row_dims[:r])
        c0 = sum(self.col_dims[:c])
        return self.matrix[r0:r0 + self.row_dims[r], c0:c0 + self.col_dims[c]]

    def expand(self, order, dims):
        """Dense row block against the global message order."""
        offs = np.concatenate([[0], np.cumsum([dims[m] for m in order])]).astype(int)
        index = {m: n for n, m in enumerate(order)}
        out = np.zeros((self.matrix.shape[0], int(offs[-1])))
        c0 = 0
        for col, d in zip(self.cols, self.col_dims):
            start = offs[index[col]]
            out[:, start:start + d] = self.matrix[:, c0:c0 + d]
            c0 += d
        return out


def q_block_from_view(view) -> LocalQBlock:
    j = view.node_id
    nbrs = list(view.neighbors())
    rows = [(j, i) for i in nbrs]
    cols = [(k, j) for k in nbrs]
    if view.kind == "gmrf":
        j_self, h_self = view.j_self(), view.h_self()
        jp = {k: view.j_pair(k) for k in nbrs}
        dj = {k: view.info_in(k) for k in nbrs}
        Q = np.zeros((len(rows), len(cols)))
        b = np.zeros(len(rows))
        for r, i in enumerate(nbrs):
            denom = engine.gmrf_denominator(j_self, [dj[k] for k in nbrs if k != i])
            b[r] = -(jp[i] * h_self) / denom
            for c, k in enumerate(nbrs):
                if k != i:
                    Q[r, c] = jp[i] / denom
        return LocalQBlock(j, rows, cols, [1] * len(rows), [1] * len(cols), Q, b)

    edges = {k: view.edge(k) for k in nbrs}
    # M_{k,j} = A_dest^T [R + A_src C*_{k->f} A_src^T]^{-1}
    gain = {}
    for k in nbrs:
        a_self, a_other, noise_cov, _ = edges[k]
        _, bracket_inv = engine.f2v_info(a_self, a_other, noise_cov, view.info_in(k))
        gain[k] = a_self.T @ bracket_inv
    row_dims = [edges[i][0].shape[1] for i in nbrs]
    col_dims = [edges[k][1].shape[1] for k in nbrs]
    Q = np.zeros((sum(row_dims), sum(col_dims)))
    b = np.zeros(sum(row_dims))
    r0 = 0
    for i, rd in zip(nbrs, row_dims):
        info = view.info_out(i)
        acc = np.zeros(rd)
        c0 = 0
        for k, cd in zip(nbrs, col_dims):
            if k != i:
                _, a_other, _, y = edges[k]
                Q[r0:r0 + rd, c0:c0 + cd] = numerics.solve_spd(info, gain[k] @ a_other)
                acc = acc + gain[k] @ y
            c0 += cd
        b[r0:r0 + rd] = numerics.solve_spd(info, acc)
        r0 += rd
    return LocalQBlock(j, rows, cols, row_dims, col_dims, Q, b)


def build_local_q(model, fp: FixedPointInfo, j) -> LocalQBlock:
    return q_block_from_view(LocalView(model, fp, j))


def local_condition(block: LocalQBlock):
    """``(rho(Q_j Q_j^T), rho < 1)``."""
    q = block.matrix
    if q.size == 0:
        return 0.0, True
    rho = numerics.spectral_radius(q @ q.T)
    return rho, bool(rho < 1.0)


# ---------------------------------------------------------------------------
# centralized baselines


def message_dims(model):
    return {(j, i): model.dim(j) for j, i in engine.directed_pairs(model)}


def assemble_q(model, fp: FixedPointInfo, blocks=None):
    """Stack all ``Q_j`` into ``(Q, b, order)`` over the global message order."""
    order = engine.directed_pairs(model)
    dims = message_dims(model)
    if sum(dims.values()) > MAX_CENTRAL_SIZE:
        raise MemoryError(f"refusing to assemble Q with {sum(dims.values())} rows")
    blocks = blocks or {j: build_local_q(model, fp, j) for j in model.node_ids}
    rows = [blocks[j].expand(order, dims) for j in model.node_ids]
    bs = [blocks[j].b for j in model.node_ids]
    total = sum(dims.values())
    Q = np.vstack(rows) if rows else np.zeros((0, total))
    b = np.concatenate(bs) if bs else np.zeros(0)
    return Q, b, order


def stack_messages(state_v2f, order):
    """Stack variable-to-factor mean messages (``dh`` for a GMRF) in ``order``."""
    return np.concatenate([np.atleast_1d(np.asarray(state_v2f[m].mean, dtype=float)) for m in order])


def centralized_condition(model, fp: FixedPointInfo):
    """``(rho(Q), rho(Q Q^T))`` from the assembled matrix."""
    Q, _, _ = assemble_q(model, fp)
    if Q.size == 0:
        return 0.0, 0.0
    return numerics.spectral_radius(Q), numerics.spectral_radius(Q @ Q.T)


def walk_summability(model):
    """``(rho(|I - J|), I - |I - J| > 0)`` for a GMRF."""
    if model.kind != "gmrf":
        raise TypeError("walk-summability is defined for GMRF models only")
    R = np.eye(model.n) - model.J
    rho = numerics.spectral_radius(np.abs(R))
    return rho, bool(rho < 1.0)


@dataclass
class ConvergenceReport:
    local_radii: dict
    local_verdicts: dict
    verdict: bool
    rho_q: Optional[float] = None
    rho_qqt: Optional[float] = None
    rho_abs_r: Optional[float] = None
    walk_summable: Optional[bool] = None
    provenance: list = field(default_factory=lambda: ["local"])
    fixed_point_iterations: Optional[int] = None
    fixed_point_residual: Optional[float] = None

    def to_dict(self):
        return {
            "local_radii": {str(k): v for k, v in sorted(self.local_radii.items())},
            "local_verdicts": {str(k): v for k, v in sorted(self.local_verdicts.items())},
            "verdict": self.verdict,
            "rho_q": self.rho_q,
            "rho_qqt": self.rho_qqt,
            "rho_abs_r": self.rho_abs_r,
            "walk_summable": self.walk_summable,
            "provenance": list(self.provenance),
            "fixed_point_iterations": self.fixed_point_iterations,
            "fixed_point_residual": self.fixed_point_residual,
        }


def certify(model, centralized=False, fp=None, tol=FP_TOL, max_iter=FP_MAX_ITER) -> ConvergenceReport:
    """Local certificate at every node; baselines too when ``centralized``.

    Raises :class:`FixedPointNotCertified` when the information recursion
    does not settle.
    """
    fp = fp or fixed_point_information(model, tol, max_iter)
    radii, verdicts = {}, {}
    for j in model.node_ids:
        radii[j], verdicts[j] = local_condition(build_local_q(model, fp, j))
    report = ConvergenceReport(
        radii, verdicts, all(verdicts.values()),
        fixed_point_iterations=fp.iterations, fixed_point_residual=fp.residual,
    )
    if centralized:
        report.rho_q, report.rho_qqt = centralized_condition(model, fp)
        if model.kind == "gmrf":
            report.rho_abs_r, report.walk_summable = walk_summability(model)
        report.provenance.append("centralized")
    return report
