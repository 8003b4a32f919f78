"""Convexity-safe utility design, KKT power allocation, and an FDMA scheduling simulator."""

from .utility import (
    UtilityKind,
    UtilityModel,
    CriterionReport,
    Lemma2Class,
    make_utility,
    fit_polynomial_utility,
    criterion_check,
    residual_t,
    normalize,
    evaluate,
)
from .allocation import (
    AllocationProblem,
    AllocationResult,
    marginal,
    kkt_allocate,
    waterfill,
    objective,
    brute_force_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "UtilityKind",
    "UtilityModel",
    "CriterionReport",
    "Lemma2Class",
    "make_utility",
    "fit_polynomial_utility",
    "criterion_check",
    "residual_t",
    "normalize",
    "evaluate",
    "AllocationProblem",
    "AllocationResult",
    "marginal",
    "kkt_allocate",
    "waterfill",
    "objective",
    "brute_force_oracle",
    "__version__",
]
