"""Boundedly rational control on a belief lattice, and its inverse problem.

Forward: soft value iteration over discretized beliefs with three
information-cost multipliers shaping how decisively the agent acts
(``alpha``), how far it bends its world-model mixture (``beta``), and how
much belief-update surprise it tolerates (``eta``).  Inverse: random-walk
Metropolis posteriors over those multipliers (or a utility entry) from
demonstrated trajectories.
"""

from .core import (
    Belief,
    BrcParams,
    DiscreteDistribution,
    DynamicsModel,
    ModelEnsemble,
    ProblemSetting,
    Trajectory,
    validate,
    validate_trajectory,
)
from .diag import (
    DiagConfig,
    belief_trace,
    build_diag,
    build_model_grid,
    generate_dataset,
    load_dataset,
    sample_trajectory,
    save_dataset,
)
from .inverse import (
    InferenceConfig,
    PosteriorSample,
    apply_targets,
    credible_region_bins,
    dataset_log_likelihood,
    irl_baseline,
    mh_infer,
    posterior_summary,
    trajectory_log_likelihood,
)
from .recognition import (
    BeliefLattice,
    ImpossibleEvidenceError,
    bayes_posterior,
    biased_recognition_update,
    lattice_interpolate,
    next_belief_atoms,
    observation_predictive,
)
from .solver import (
    BackupOperator,
    ConvergenceError,
    SolvedAgent,
    backup_optimal,
    decision_policy,
    evaluate_policy,
    occupancy_measure,
    policy_tables,
    recognition_step,
    soft_expectation,
    solve,
    specification_policy,
)

__version__ = "0.1.0"

__all__ = [
    "BackupOperator",
    "Belief",
    "BeliefLattice",
    "BrcParams",
    "ConvergenceError",
    "DiagConfig",
    "DiscreteDistribution",
    "DynamicsModel",
    "ImpossibleEvidenceError",
    "InferenceConfig",
    "ModelEnsemble",
    "PosteriorSample",
    "ProblemSetting",
    "SolvedAgent",
    "Trajectory",
    "apply_targets",
    "backup_optimal",
    "bayes_posterior",
    "belief_trace",
    "biased_recognition_update",
    "build_diag",
    "build_model_grid",
    "credible_region_bins",
    "dataset_log_likelihood",
    "decision_policy",
    "evaluate_policy",
    "generate_dataset",
    "irl_baseline",
    "lattice_interpolate",
    "load_dataset",
    "mh_infer",
    "next_belief_atoms",
    "observation_predictive",
    "occupancy_measure",
    "policy_tables",
    "posterior_summary",
    "recognition_step",
    "sample_trajectory",
    "save_dataset",
    "soft_expectation",
    "solve",
    "specification_policy",
    "trajectory_log_likelihood",
    "validate",
    "validate_trajectory",
]
