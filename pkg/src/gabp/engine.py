"""Synchronous Gaussian belief propagation for both model classes.

Messages are stored as ``(info, mean)`` pairs. For the linear Gaussian path
``info`` is a message information matrix and ``mean`` a mean vector; for
the GMRF path both are scalars and ``mean`` holds the potential ``dh``.

The per-node kernels at the top of the module are shared with the network
simulator so that distributed and centralized runs perform the exact same
floating point operations in the same order.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from . import numerics
from .model import validate

VARIABLE_TO_FACTOR = "v2f"
FACTOR_TO_VARIABLE = "f2v"


class NumericalError(ArithmeticError):
    def __init__(self, message, iteration=None, edge=None):
        self.iteration = iteration
        self.edge = edge
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if edge is not None:
            where.append(f"edge {edge}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))


class InvalidModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernels: linear Gaussian path


def v2f_info(prior_info, incoming_infos):
    """Outgoing information: prior information plus every other incoming message."""
    info = prior_info.copy()
    for inf in incoming_infos:
        info = info + inf
    return info


def v2f_mean(info, incoming):
    weighted = np.zeros(info.shape[0])
    for inf, mean in incoming:
        weighted = weighted + inf @ mean
    return numerics.solve_spd(info, weighted)


def f2v_info(a_dest, a_src, noise_cov, src_info):
    """Factor-to-variable information and the inverted innovation covariance.

    ``a_dest`` multiplies the destination variable, ``a_src`` the sender.
    """
    cov_src = numerics.invert_spd(src_info)
    bracket = noise_cov + a_src @ cov_src @ a_src.T
    bracket_inv = numerics.invert_spd(bracket)
    info = a_dest.T @ bracket_inv @ a_dest
    return 0.5 * (info + info.T), bracket_inv


def f2v_mean(info, bracket_inv, a_dest, a_src, y, src_mean):
    weighted = a_dest.T @ bracket_inv @ (y - a_src @ src_mean)
    return numerics.solve_spd(info, weighted)


def belief_linear(prior_info, incoming):
    info = v2f_info(prior_info, [inf for inf, _ in incoming])
    mean = v2f_mean(info, incoming)
    return mean, numerics.invert_spd(info)


# ---------------------------------------------------------------------------
# kernels: GMRF path


def gmrf_denominator(j_self, incoming_dj):
    denom = j_self
    for dj in incoming_dj:
        denom = denom + dj
    return denom


def gmrf_dj(j_self, j_pair, incoming_dj):
    denom = gmrf_denominator(j_self, incoming_dj)
    if denom == 0.0:
        raise ZeroDivisionError("zero precision in cavity")
    return -(j_pair * j_pair) / denom


def gmrf_dh(j_self, j_pair, h_self, incoming_dj, incoming_dh):
    denom = gmrf_denominator(j_self, incoming_dj)
    if denom == 0.0:
        raise ZeroDivisionError("zero precision in cavity")
    pot = h_self
    for dh in incoming_dh:
        pot = pot + dh
    return -(j_pair * pot) / denom


def belief_gmrf(j_self, h_self, incoming_dj, incoming_dh):
    prec = gmrf_denominator(j_self, incoming_dj)
    pot = h_self
    for dh in incoming_dh:
        pot = pot + dh
    if not np.isfinite(prec) or prec <= 0.0:
        return None
    return pot / prec, 1.0 / prec


# ---------------------------------------------------------------------------
# state


@dataclass(frozen=True)
class GaussianMessage:
    direction: str
    source: int
    target: int
    info: Any
    mean: Any


@dataclass(frozen=True)
class Belief:
    node_id: int
    mean: np.ndarray
    cov: np.ndarray
    defined: bool = True


@dataclass
class MessageState:
    """All directed messages of one iteration.

    ``v2f[(j, i)]`` is the message from variable ``j`` to factor ``f_{i,j}``;
    ``f2v[(k, j)]`` is the message from factor ``f_{k,j}`` to variable ``j``.
    """

    iteration: int
    v2f: dict
    f2v: dict
    beliefs: Optional[list] = None


@dataclass
class EngineConfig:
    eta: float = 1e-9
    max_iter: int = 1000
    init_info: Any = None  # None (zero), one matrix for all messages, or {(k, j): matrix}
    init_mean: Any = None  # None (zero), one vector for all messages, or {(k, j): vector}
    init_seed: Optional[int] = None  # draw standard normal initial means instead
    record: bool = True
    threads: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


@dataclass
class BpRunResult:
    converged: bool
    iterations: int
    beliefs: list
    deltas: list
    final_state: MessageState
    belief_trajectory: list = field(default_factory=list)
    message_trajectory: list = field(default_factory=list)

    @property
    def means(self):
        return {b.node_id: b.mean for b in self.beliefs}


def directed_pairs(model):
    """Every ordered pair ``(source, target)`` of neighbours, sorted."""
    out = []
    for i, j in model.edge_pairs:
        out.append((i, j))
        out.append((j, i))
    return sorted(out)


def _lookup(spec, key, default):
    if spec is None:
        return default
    if isinstance(spec, Mapping):
        return spec.get(key, default)
    return spec


def init_state(model, config: EngineConfig) -> MessageState:
    """Initial factor-to-variable messages (iteration 0)."""
    keys = directed_pairs(model)
    rng = np.random.default_rng(config.init_seed) if config.init_seed is not None else None
    f2v = {}
    for k, j in keys:
        d = model.dim(j)
        if rng is not None:
            mean = rng.standard_normal(d)
        else:
            mean = np.asarray(_lookup(config.init_mean, (k, j), np.zeros(d)), dtype=float).reshape(d)
        if model.kind == "gmrf":
            # the cavity recursion is only guaranteed to converge from zero precision
            f2v[(k, j)] = GaussianMessage(FACTOR_TO_VARIABLE, k, j, 0.0, float(mean[0]))
            continue
        info = np.atleast_2d(np.asarray(_lookup(config.init_info, (k, j), np.zeros((d, d))), dtype=float))
        if info.shape != (d, d):
            raise ValueError(f"initial information for message {(k, j)} has shape {info.shape}, expected {(d, d)}")
        try:
            psd = numerics.is_psd(info)
        except numerics.NotSymmetricError:
            psd = False
        if not psd:
            raise ValueError(f"initial information for message {(k, j)} is not positive semidefinite")
        f2v[(k, j)] = GaussianMessage(FACTOR_TO_VARIABLE, k, j, info, mean)
    v2f = {
        (j, i): GaussianMessage(
            VARIABLE_TO_FACTOR, j, i, m.info if model.kind == "gmrf" else np.zeros_like(m.info),
            m.mean if model.kind == "gmrf" else np.zeros(model.dim(j)),
        )
        for (j, i), m in ((key, f2v[key]) for key in keys)
    }
    return MessageState(0, v2f, f2v)


def _prior_info(model, j):
    return numerics.invert_spd(model.node(j).prior_cov)


def update_variable_to_factor(state: MessageState, model, j, i, prior_info=None) -> GaussianMessage:
    """Message from variable ``j`` to factor ``f_{i,j}`` using the iteration l-1 state."""
    others = [k for k in model.neighbors(j) if k != i]
    try:
        if model.kind == "gmrf":
            j_self = float(model.J[j - 1, j - 1])
            j_pair = float(model.J[j - 1, i - 1])
            dj_in = [state.f2v[(k, j)].info for k in others]
            dh_in = [state.f2v[(k, j)].mean for k in others]
            dj = gmrf_dj(j_self, j_pair, dj_in)
            dh = gmrf_dh(j_self, j_pair, float(model.h[j - 1]), dj_in, dh_in)
            return GaussianMessage(VARIABLE_TO_FACTOR, j, i, dj, dh)
        if prior_info is None:
            prior_info = _prior_info(model, j)
        incoming = [(state.f2v[(k, j)].info, state.f2v[(k, j)].mean) for k in others]
        info = v2f_info(prior_info, [inf for inf, _ in incoming])
        mean = v2f_mean(info, incoming)
    except (numerics.NotPositiveDefiniteError, ZeroDivisionError) as exc:
        raise NumericalError(f"variable-to-factor update failed: {exc}", state.iteration + 1, (j, i)) from exc
    return GaussianMessage(VARIABLE_TO_FACTOR, j, i, info, mean)


def update_factor_to_variable(v2f_msg: GaussianMessage, model, dest) -> GaussianMessage:
    """Message from factor ``f_{src,dest}`` to ``dest`` given the sender's message."""
    src = v2f_msg.source
    if model.kind == "gmrf":
        return GaussianMessage(FACTOR_TO_VARIABLE, src, dest, v2f_msg.info, v2f_msg.mean)
    e = model.edge(src, dest)
    a_dest, a_src = e.coef(dest), e.coef(src)
    try:
        info, bracket_inv = f2v_info(a_dest, a_src, e.noise_cov, v2f_msg.info)
        mean = f2v_mean(info, bracket_inv, a_dest, a_src, e.y, v2f_msg.mean)
    except numerics.NotPositiveDefiniteError as exc:
        raise NumericalError(f"factor-to-variable update failed: {exc}", edge=(src, dest)) from exc
    return GaussianMessage(FACTOR_TO_VARIABLE, src, dest, info, mean)


def compute_beliefs(state: MessageState, model, prior_infos=None):
    out = []
    for i in model.node_ids:
        nbrs = model.neighbors(i)
        if model.kind == "gmrf":
            res = belief_gmrf(
                float(model.J[i - 1, i - 1]),
                float(model.h[i - 1]),
                [state.f2v[(k, i)].info for k in nbrs],
                [state.f2v[(k, i)].mean for k in nbrs],
            )
            if res is None:
                out.append(Belief(i, np.array([np.nan]), np.array([[np.nan]]), defined=False))
            else:
                out.append(Belief(i, np.array([res[0]]), np.array([[res[1]]])))
            continue
        prior = prior_infos[i] if prior_infos is not None else _prior_info(model, i)
        incoming = [(state.f2v[(k, i)].info, state.f2v[(k, i)].mean) for k in nbrs]
        try:
            mean, cov = belief_linear(prior, incoming)
        except numerics.NotPositiveDefiniteError:
            d = model.dim(i)
            out.append(Belief(i, np.full(d, np.nan), np.full((d, d), np.nan), defined=False))
            continue
        out.append(Belief(i, mean, cov))
    return out


def max_mean_delta(new, old):
    worst = 0.0
    for a, b in zip(new, old):
        with np.errstate(invalid="ignore", over="ignore"):
            d = float(np.linalg.norm(a.mean - b.mean))
        if not np.isfinite(d):
            return float("nan")
        worst = max(worst, d)
    return worst


def step(state: MessageState, model, prior_infos=None, pool=None) -> MessageState:
    """One synchronous flooding round: all v2f from l-1, then all f2v, then beliefs."""
    keys = directed_pairs(model)
    mapper = pool.map if pool is not None else map

    def _v2f(key):
        j, i = key
        return update_variable_to_factor(state, model, j, i, None if prior_infos is None else prior_infos.get(j))

    v2f = dict(zip(keys, mapper(_v2f, keys)))

    def _f2v(key):
        k, j = key
        try:
            return update_factor_to_variable(v2f[(k, j)], model, j)
        except NumericalError as exc:
            raise NumericalError(str(exc), state.iteration + 1, (k, j)) from exc

    f2v = dict(zip(keys, mapper(_f2v, keys)))
    new = MessageState(state.iteration + 1, v2f, f2v)
    new.beliefs = compute_beliefs(new, model, prior_infos)
    return new


def prior_informations(model):
    if model.kind == "gmrf":
        return None
    return {i: _prior_info(model, i) for i in model.node_ids}


def run(model, config: Optional[EngineConfig] = None) -> BpRunResult:
    """Run synchronous BP until the belief means move less than ``eta``."""
    config = config or EngineConfig()
    problems = validate(model)
    if problems:
        raise InvalidModelError("; ".join(map(str, problems)))
    priors = prior_informations(model)
    state = init_state(model, config)
    state.beliefs = compute_beliefs(state, model, priors)
    beliefs_traj = [state.beliefs] if config.record else []
    msg_traj = [state] if config.record else []
    deltas = []
    converged = False
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for _ in range(config.max_iter):
            new = step(state, model, priors, pool)
            delta = max_mean_delta(new.beliefs, state.beliefs)
            deltas.append(delta)
            state = new
            if config.record:
                beliefs_traj.append(state.beliefs)
                msg_traj.append(state)
            if delta < config.eta:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return BpRunResult(
        converged=converged,
        iterations=state.iteration,
        beliefs=state.beliefs,
        deltas=deltas,
        final_state=state,
        belief_trajectory=beliefs_traj,
        message_trajectory=msg_traj,
    )
