"""Solvability by quadratures for linear systems ``y' = B(z) y`` with rational ``B``."""

__version__ = "0.1.0"

from .numkernel import QQi, parse_scalar, format_scalar
from .system import (
    INFINITY,
    SystemSpec,
    SingularPoint,
    make_spec,
    parse_system,
    print_system,
    classify,
    singular_points,
    laurent_coefficients,
)
from .exponents import (
    Exponent,
    ConditionVerdict,
    fuchsian_exponents,
    check_ineq_small,
    check_pair_conditions,
    check_corollary1,
    is_n_resonant,
    fuchs_relation,
    fuchs_inequalities,
    exponent_sum_obstruction,
)
from .triangularize import FlagResult, common_eigenvector, simultaneous_triangularize, block_form
from .monodromy import monodromy, continue_along, plan_loops
from .formal import FormalData, formal_data, formal_residual, check_theorem2
from .quadrature import solve_triangular, eval_quad, verify_solution
from .report import Report, Tolerances, analyze
from .fixtures import load_fixture, load_system, bolibrukh_matrices
from .estimators import (
    SimultaneousTriangularizer,
    SolvabilityClassifier,
    MonodromyEstimator,
    FormalSolutionEstimator,
)
