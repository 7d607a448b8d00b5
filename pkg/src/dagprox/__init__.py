"""dagprox: hierarchical sparsity via the latent overlapping group lasso.

Builds ancestor/descendant group systems from a DAG, evaluates the latent
overlapping group (LOG) penalty and its proximal operator with five
interchangeable solvers (block coordinate descent, its randomized variant,
two-block ADMM with a dense factorization, the equivalent sharing-scheme
ADMM, and ISTA/FISTA), certifies solutions through KKT residuals and
proximal-gradient norms, and fits smooth losses regularized by the penalty
with an outer proximal-gradient loop.
"""

from .errors import (
    CapExceeded,
    CycleDetected,
    DagproxError,
    DimensionMismatch,
    DuplicateEdge,
    EmptyGroup,
    FactorizationFailure,
    IndexOutOfRange,
    InnerSolverWarning,
    InsufficientData,
    InvalidStep,
    NoConvergence,
    NonFiniteInput,
    NonFiniteIterate,
)
from .graph import (
    Dag,
    GroupSet,
    HierarchyReport,
    HierarchyViolation,
    ancestor_groups,
    build_index_map,
    check_hierarchy_conformance,
    descendant_groups,
    read_edge_list,
    read_group_file,
    validate_dag,
    write_edge_list,
    write_group_file,
)
from .kernels import (
    ProxInstance,
    SumOperator,
    gl_penalty_value,
    group_soft_threshold,
    log_penalty_value,
    objective_f,
    operator_norm_sq,
)
from .diagnostics import (
    ConvergenceTrace,
    RateFit,
    TraceRecord,
    epsilon_optimality,
    fit_linear_rate,
    kkt_residual,
    proxgrad_norm,
)
from .solvers import (
    SOLVER_NAMES,
    ProxResult,
    SolveOptions,
    SolverState,
    prox_log_admm_sharing,
    prox_log_admm_unscaled,
    prox_log_bcd,
    prox_log_pgm,
    solve_prox,
)
from .learn import (
    FitResult,
    LeastSquaresLoss,
    LogisticLoss,
    OuterOptions,
    fit,
    lambda_max,
)
from . import bench

__version__ = "0.1.0"

__all__ = [
    "Dag", "GroupSet", "HierarchyReport", "HierarchyViolation",
    "validate_dag", "ancestor_groups", "descendant_groups",
    "build_index_map", "check_hierarchy_conformance",
    "read_edge_list", "write_edge_list", "read_group_file", "write_group_file",
    "SumOperator", "ProxInstance", "group_soft_threshold",
    "objective_f", "log_penalty_value", "gl_penalty_value", "operator_norm_sq",
    "ConvergenceTrace", "TraceRecord", "RateFit",
    "proxgrad_norm", "kkt_residual", "fit_linear_rate", "epsilon_optimality",
    "SolveOptions", "SolverState", "ProxResult", "SOLVER_NAMES",
    "prox_log_bcd", "prox_log_admm_unscaled", "prox_log_admm_sharing",
    "prox_log_pgm", "solve_prox",
    "LeastSquaresLoss", "LogisticLoss", "OuterOptions", "FitResult",
    "fit", "lambda_max",
    "bench",
    "DagproxError", "CycleDetected", "DuplicateEdge", "IndexOutOfRange",
    "EmptyGroup", "DimensionMismatch", "NonFiniteInput", "NonFiniteIterate",
    "InvalidStep", "CapExceeded", "FactorizationFailure", "NoConvergence",
    "InsufficientData", "InnerSolverWarning",
]
