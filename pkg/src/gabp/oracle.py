"""Exact centralized inference by dense assembly and solve."""

from dataclasses import dataclass

import numpy as np

from . import numerics
from .model import validate


class ImproperModelError(ValueError):
    pass


@dataclass(frozen=True)
class ExactMarginals:
    means: dict
    covs: dict
    info: np.ndarray
    potential: np.ndarray


def _offsets(model):
    offsets, pos = {}, 0
    for i in model.node_ids:
        offsets[i] = pos
        pos += model.dim(i)
    return offsets, pos


def _marginals(model, J, h):
    try:
        mean = numerics.solve_spd(J, h)
        cov = numerics.invert_spd(J)
    except numerics.NotPositiveDefiniteError as exc:
        raise ImproperModelError("improper model: information matrix is not positive definite") from exc
    offsets, _ = _offsets(model)
    means, covs = {}, {}
    for i, start in offsets.items():
        stop = start + model.dim(i)
        means[i] = mean[start:stop]
        covs[i] = cov[start:stop, start:stop]
    return ExactMarginals(means, covs, J, h)


def exact_gmrf(model) -> ExactMarginals:
    return _marginals(model, np.array(model.J), np.array(model.h))


def posterior_information(model):
    """Global posterior information matrix and potential of a linear Gaussian model."""
    offsets, total = _offsets(model)
    J = np.zeros((total, total))
    h = np.zeros(total)
    for n in model.nodes:
        s = slice(offsets[n.node_id], offsets[n.node_id] + n.dim)
        J[s, s] += numerics.invert_spd(n.prior_cov)
    for e in model.edges:
        E = np.zeros((e.y.shape[0], total))
        E[:, offsets[e.i]:offsets[e.i] + model.dim(e.i)] = e.a_ji
        E[:, offsets[e.j]:offsets[e.j] + model.dim(e.j)] = e.a_ij
        r_inv = numerics.invert_spd(e.noise_cov)
        J += E.T @ r_inv @ E
        h += E.T @ r_inv @ e.y
    return 0.5 * (J + J.T), h


def exact_linear(model) -> ExactMarginals:
    problems = validate(model)
    if problems:
        raise ValueError("; ".join(map(str, problems)))
    J, h = posterior_information(model)
    return _marginals(model, J, h)


def exact(model) -> ExactMarginals:
    return exact_gmrf(model) if model.kind == "gmrf" else exact_linear(model)
