"""Numerical workbench for homogenization of gradient flows with random
oscillating coefficients: finite shift spaces, the sample-shift (unfolding)
operator, cell problems for effective integrands, a minimizing-movement flow
solver and scale-convergence experiments."""

from .errors import (
    AlignmentError,
    BoundViolation,
    ConvexityFailure,
    ConvexityLoss,
    HomflowError,
    InsufficientData,
    NonConvergence,
)
from .probability import (
    MaterialParams,
    OmegaEnsemble,
    OmegaPoint,
    ShiftSpace,
    build_ensemble,
    evaluate,
    expectation,
    invariant_projection,
    shift,
)
from .integrands import IntegrandSpec, make_spec, pointwise_conjugate, validate_growth
from .fem import Grid, gradient, inner_r, make_grid, make_torus_grid, norm_Lp
from .unfolding import (
    UnfoldPlan,
    fold_adjoint,
    make_plan,
    recovery_sequence,
    transformation_check,
    two_scale_distance,
    unfold,
)
from .flow import (
    FlowConfig,
    FlowProblem,
    Trajectory,
    apriori_check,
    build_heterogeneous_problem,
    build_homogenized_problem,
    convex_reduction,
    energy,
    evi_residual,
    fenchel_gap,
    proximal_step,
    solve_flow,
)
from .corrector import (
    CellProblem,
    HomTable,
    hom_scalars,
    solve_cell,
    tabulate_Vhom,
)
from .lab import ExperimentSpec, rate_table, run_convergence, write_report

__version__ = "0.1.0"
