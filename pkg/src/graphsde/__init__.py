"""Diffusions on metric graphs: timestep-splitting Euler-Maruyama simulation
with analytic steady-state oracles and a finite-volume Fokker-Planck baseline."""

from .graph import (
    AT_INIT,
    AT_TERM,
    INFINITY_VERTEX,
    DanglingVertexReference,
    DisconnectedGraph,
    Edge,
    GraphBuildError,
    InfinityVertex,
    MetricGraph,
    NonPositiveLength,
    SelfLoopError,
    VertexIncidence,
    WeightSimplexViolation,
    build_graph,
    sample_exit_edge,
)
from .coefficients import (
    CoefficientError,
    CoefficientField,
    ConstantDiffusion,
    ConstantDrift,
    LinearDrift,
    NonPositiveArea,
    TabulatedDrift,
    ZeroDiffusion,
    drift_from_flux,
    eval_diffusion,
    eval_drift,
    gamma,
)
from .engine import (
    AtVertex,
    BounceStats,
    ConfigInvalid,
    EnsembleResult,
    NoRootInUnitInterval,
    ParticleState,
    PerEdgeUniform,
    PointStart,
    SimulationConfig,
    StepOutcome,
    VertexTrials,
    em_step_general,
    em_step_star,
    run_ensemble,
    solve_alpha,
    vertex_crossing_trials,
)
from .rng import RngStream

__version__ = "0.1.0"
