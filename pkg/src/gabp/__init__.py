"""Gaussian belief propagation with a node-local convergence certificate."""

from .convergence import (
    ConvergenceReport,
    FixedPointInfo,
    FixedPointNotCertified,
    LocalQBlock,
    LocalityError,
    assemble_q,
    build_local_q,
    centralized_condition,
    certify,
    fixed_point_information,
    local_condition,
    walk_summability,
)
from .engine import BpRunResult, EngineConfig, NumericalError, compute_beliefs, init_state, run
from .model import (
    EdgeObservation,
    GmrfModel,
    LinearGaussianModel,
    NodeParams,
    generate_gmrf,
    generate_linear,
    validate,
)
from .modelio import ModelFormatError, load, save
from .netsim import simulate, verify_locality
from .oracle import ExactMarginals, exact, exact_gmrf, exact_linear

__version__ = "0.1.0"
