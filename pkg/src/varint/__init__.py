"""Turn any explicit one-step method into a constrained variational integrator.

Given a quadratic Lagrangian with a holonomic constraint and an explicit
Runge-Kutta "standard layer", the package builds the biased discrete
Lagrangian and boundary maps, solves the resulting discrete Euler-Lagrange
step by a fixed-point iteration against a frozen linear approximate, and
verifies the geometric properties (symplecticity, discrete momentum,
constraint preservation, order) numerically.
"""

from .boundary import Bias, BoundaryData, boundary_data, dproject_transpose, iota, project, project_state
from .del_solver import (
    Stage4Residual,
    Stage4Variables,
    StepConfig,
    StepDiagnostics,
    Trajectory,
    approximate_solve,
    initialize,
    residual,
    simulate,
    step,
)
from .errors import (
    DimensionMismatch,
    GeneratorNotTangent,
    NonConvergence,
    RankLoss,
    SingularSystem,
    VarintError,
)
from .geometry import (
    GroupActionSpec,
    VariationBasis,
    del_residual_check,
    discrete_momentum,
    energy,
    one_form,
    symplecticity_defect,
    two_form,
    variation_basis,
)
from .model import (
    ProblemSpec,
    State,
    TangentVector,
    check_derivatives,
    christoffel,
    d_lagrangian,
    el_field,
    el_field_jacobian,
    lagrangian,
    magnetic,
    tq_membership,
    ttq_membership,
    with_fd_derivatives,
)
from .problems import NamedProblem, catalog, get, reference_solution
from .saddle import SaddleFactorization, SaddleSystem, factor, solve
from .standard_layer import (
    TABLEAUX,
    AdjointProvider,
    ButcherTableau,
    ExtendedState,
    JetState,
    RKProvider,
    StandardLayer,
    adjoint_flow,
    as_layer,
    get_tableau,
    rk_flow,
    rk_flow_jet,
)

__version__ = "0.1.0"
