"""Multistrain multipatch SIS dynamics with superinfection.

Computes the globally asymptotically stable equilibrium of the model
from its parameters alone via an iterative threshold cascade, and
verifies the prediction by forward integration of the full system.
"""

from .cascade import (
    CascadeError,
    CascadeReport,
    EquilibriumPoint,
    LVConvergenceError,
    ReductionCoefficients,
    StrainVerdict,
    connectivity_matrix,
    lv_equilibrium,
    run_cascade,
    threshold_matrix,
    total_population_limit,
)
from .kernels import BACKEND
from .linalg import (
    PowerIterationError,
    SolveError,
    StabilityResult,
    ZMatrixError,
    is_irreducible,
    solve_z,
    stability_modulus,
)
from .model import (
    DimensionMismatchError,
    ModelParameters,
    StateVector,
    Violation,
    full_beta,
    rhs,
    validate,
)
from .simulate import (
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    converged_to,
    integrate,
    lv_integrate,
)
from .singlepatch import R0Sequence, r0_cascade

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CascadeError",
    "CascadeReport",
    "DimensionMismatchError",
    "EquilibriumPoint",
    "IntegrationError",
    "IntegratorConfig",
    "LVConvergenceError",
    "ModelParameters",
    "PowerIterationError",
    "R0Sequence",
    "ReductionCoefficients",
    "SolveError",
    "StabilityResult",
    "StateVector",
    "StrainVerdict",
    "Trajectory",
    "Violation",
    "ZMatrixError",
    "connectivity_matrix",
    "converged_to",
    "full_beta",
    "integrate",
    "is_irreducible",
    "lv_equilibrium",
    "lv_integrate",
    "r0_cascade",
    "rhs",
    "run_cascade",
    "solve_z",
    "stability_modulus",
    "threshold_matrix",
    "total_population_limit",
    "validate",
]
