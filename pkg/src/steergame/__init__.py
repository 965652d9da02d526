"""Two-player linear-quadratic steering games for Gaussian distributions.

A minimizing controller drives an initial Gaussian state to a prescribed
terminal mean and covariance over a finite horizon while a maximizing
stopper, penalized through its own effort weight, works against the cost.
The mean and covariance problems split exactly; each has an unconstrained
saddle/stationary solver and a terminal-constrained solver, plus Monte
Carlo validation and a batch CLI.
"""

from .model import (
    CostWeights,
    DimensionError,
    GaussianBoundary,
    LiftedSystem,
    MeanTrajectory,
    StageSystem,
    lift,
    lift_weights,
    mean_trajectory,
    noise_state_cov,
    payoff,
)
from .mean_game import (
    ConstrainedMeanSolution,
    MeanConcavityError,
    MeanSaddle,
    RankConditionError,
    RelativeControllability,
    best_response_controller,
    best_response_stopper,
    check_mean_concavity,
    check_rank_condition,
    mean_cost,
    mean_gradients,
    relative_controllability,
    solve_cmsg_upper,
    solve_umsg,
)
from .cov_game import (
    ControllerStep,
    CovCurvatureError,
    CurvatureReport,
    FallbackSolution,
    GainProfile,
    InfeasibleCovariance,
    JacobiTrace,
    StructureMultipliers,
    UcsgSolution,
    check_cov_curvature,
    constraint_norm,
    controller_step,
    cov_cost,
    cov_cost_gradients,
    covariance_trajectory,
    fallback_solve,
    jacobi_solve,
    solve_ucsg_stationary,
    stopper_step,
    terminal_cov,
)
from .montecarlo import (
    EmpiricalMoments,
    RolloutBatch,
    ellipse_points,
    empirical_moments,
    rollout,
)
from .cli import (
    RunReport,
    Scenario,
    ScenarioError,
    discretize_continuous,
    parse_scenario,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "CostWeights",
    "DimensionError",
    "GaussianBoundary",
    "LiftedSystem",
    "MeanTrajectory",
    "StageSystem",
    "lift",
    "lift_weights",
    "mean_trajectory",
    "noise_state_cov",
    "payoff",
    "ConstrainedMeanSolution",
    "MeanConcavityError",
    "MeanSaddle",
    "RankConditionError",
    "RelativeControllability",
    "best_response_controller",
    "best_response_stopper",
    "check_mean_concavity",
    "check_rank_condition",
    "mean_cost",
    "mean_gradients",
    "relative_controllability",
    "solve_cmsg_upper",
    "solve_umsg",
    "ControllerStep",
    "CovCurvatureError",
    "CurvatureReport",
    "FallbackSolution",
    "GainProfile",
    "InfeasibleCovariance",
    "JacobiTrace",
    "StructureMultipliers",
    "UcsgSolution",
    "check_cov_curvature",
    "constraint_norm",
    "controller_step",
    "cov_cost",
    "cov_cost_gradients",
    "covariance_trajectory",
    "fallback_solve",
    "jacobi_solve",
    "solve_ucsg_stationary",
    "stopper_step",
    "terminal_cov",
    "EmpiricalMoments",
    "RolloutBatch",
    "ellipse_points",
    "empirical_moments",
    "rollout",
    "RunReport",
    "Scenario",
    "ScenarioError",
    "discretize_continuous",
    "parse_scenario",
    "run",
    "__version__",
]
