"""Solvers for multi-facility resource allocation.

A library and CLI for allocating resources from n facilities to N users so
that total utility minus total cost is maximized, with distributed ADMM
solvers, a dual-decomposition baseline, domain builders for geographical
load balancing and backbone traffic engineering, a simulated parallel
runtime with fault injection, and convergence diagnostics.
"""

from .algorithms import (
    ADMM1,
    ADMM2,
    ALGORITHMS,
    DUAL,
    LINEARIZED,
    ReferenceSolution,
    ReformulationState,
    RunResult,
    SolverConfig,
    SolverState,
    init_reformulation_state,
    init_state,
    reformulation_state_from,
    run,
    solve_reference,
    step_admm1,
    step_admm2,
    step_dual_decomposition,
    step_linearized_admm,
    step_reference_reformulation,
)
from .diagnostics import (
    IterationTrace,
    RateFit,
    TraceRow,
    compute_dk,
    compute_primal_residual,
    compute_vk,
    fit_rate,
)
from .model import (
    Box,
    BuildError,
    ConcaveUtility,
    ConvexCost,
    CustomCost,
    CustomProjectionSet,
    CustomUtility,
    DomainError,
    EnergyCost,
    FacilitySpec,
    FeasibilityReport,
    FeasibleSet,
    LinearCost,
    LogRateComposedUtility,
    NonnegCap,
    ParameterError,
    PathImage,
    PiecewiseLinearCost,
    ProblemInstance,
    QuadraticCost,
    QuadraticLatencyUtility,
    ScaledSimplex,
    ShapeError,
    UnsupportedError,
    UserSpec,
    ZeroUtility,
    check_feasibility,
    evaluate_objective,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    project_feasible_y,
    save_instance,
)
from .problems import (
    BatchJob,
    GlbFacility,
    GlbSpec,
    GlbUser,
    TeFlow,
    TeSpec,
    TopologyMatrix,
    build_glb,
    build_te,
    generate_random_glb,
    replicate_instance,
    topology_left_inverse,
    topology_matrix,
)
from .prox import (
    ProxResult,
    brute_force_minimize,
    minimize_linear_tilt,
    project_scaled_simplex,
    prox_facility,
    prox_user,
)
from .runtime import (
    AggregationPlan,
    DeliveryRecord,
    FaultPolicy,
    RuntimeOptions,
    aggregate,
    broadcast,
    execute_x_updates,
    parallel_user_map,
    uniform_draw,
)

__version__ = "0.1.0"
