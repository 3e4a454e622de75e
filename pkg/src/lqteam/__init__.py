"""Decentralized adaptive control of coupled linear systems.

Independent linear subsystems, coupled only through a joint quadratic cost,
are controlled by agents that each see their own state and whatever other
agents broadcast.  The package provides the optimal-gain synthesis for such
information patterns, Thompson-sampling learners that make physically
separate agents act as one (shared randomness as a coordination device),
the central single-agent twin each decentralized run is provably equivalent
to, and the Monte Carlo / verification tooling around those claims.
"""

from .control import (
    EstimatorState,
    GainBundle,
    GapQuantities,
    aux_average_cost,
    gap_quantities,
    optimal_action,
    optimal_average_cost,
    synthesize_gains,
    total_gap,
    update_estimator,
)
from .experiments import (
    AggregateCurve,
    EnvelopeReport,
    FitReport,
    SweepResult,
    aggregate_regret,
    counterexample_sweep,
    coupled_gap_study,
    fit_growth_exponent,
    monte_carlo,
    plot_curve,
    plot_log,
    run_once,
)
from .learners import (
    EpochSchedule,
    ExactLearner,
    LearnerConfig,
    LearnerOutput,
    TsAbbasiLearner,
    TsFrdLearner,
    make_learner,
    outputs_equal,
    partition_theta,
    regularized_ls,
    stabilize_or_fallback,
)
from .model import (
    BUILTIN_INSTANCES,
    ConfigError,
    CostSpec,
    InfoPattern,
    MultiAgentInstance,
    NoiseTrace,
    SystemParams,
    classify_scenario,
    instance_from_config,
    instance_to_config,
    instantaneous_cost,
    load_instance,
    make_benchmark_instance,
    make_four_system_benchmark,
    make_tracking_instance,
    make_two_way_benchmark,
    random_instance,
    save_instance,
    step_dynamics,
    step_system,
)
from .numerics import SeedStream, matrix_normal_sample
from .riccati import (
    DareSolution,
    StabilizationError,
    gain_operator,
    riccati_operator,
    solve_dare,
    solve_lyapunov,
    spectral_radius,
)
from .simulation import (
    AgreementError,
    CouplingReport,
    TrajectoryLog,
    run_coupled,
    run_marl,
    run_marl_broadcast,
    run_marl_one_way,
    run_marl_two_way,
    run_sarl,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateCurve",
    "AgreementError",
    "BUILTIN_INSTANCES",
    "ConfigError",
    "CostSpec",
    "CouplingReport",
    "DareSolution",
    "EnvelopeReport",
    "EpochSchedule",
    "EstimatorState",
    "ExactLearner",
    "FitReport",
    "GainBundle",
    "GapQuantities",
    "InfoPattern",
    "LearnerConfig",
    "LearnerOutput",
    "MultiAgentInstance",
    "NoiseTrace",
    "SeedStream",
    "StabilizationError",
    "SweepResult",
    "SystemParams",
    "TrajectoryLog",
    "TsAbbasiLearner",
    "TsFrdLearner",
    "aggregate_regret",
    "aux_average_cost",
    "classify_scenario",
    "counterexample_sweep",
    "coupled_gap_study",
    "fit_growth_exponent",
    "gain_operator",
    "gap_quantities",
    "instance_from_config",
    "instance_to_config",
    "instantaneous_cost",
    "load_instance",
    "make_benchmark_instance",
    "make_four_system_benchmark",
    "make_learner",
    "make_tracking_instance",
    "make_two_way_benchmark",
    "matrix_normal_sample",
    "monte_carlo",
    "optimal_action",
    "optimal_average_cost",
    "outputs_equal",
    "partition_theta",
    "plot_curve",
    "plot_log",
    "random_instance",
    "regularized_ls",
    "riccati_operator",
    "run_coupled",
    "run_marl",
    "run_marl_broadcast",
    "run_marl_one_way",
    "run_marl_two_way",
    "run_once",
    "run_sarl",
    "save_instance",
    "solve_dare",
    "solve_lyapunov",
    "spectral_radius",
    "stabilize_or_fallback",
    "step_dynamics",
    "step_system",
    "synthesize_gains",
    "total_gap",
    "update_estimator",
]
