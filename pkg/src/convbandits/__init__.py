"""Conversational contextual bandit simulation library.

Joint arm/key-term ridge estimation with explorative key-term selection
(uniform spanner draws or maximum confidence radius), baseline policies,
synthetic and tag-data environments, and a regret/timing benchmark harness.
"""

__version__ = "0.1.0"

from ._kernels import NUMBA_ENABLED, backend
from .estimator import ConfidenceParams, EstimatorState, exploration_coefficient
from .model import (
    ArmCatalog,
    KeyTermCatalog,
    KeyTermGraph,
    UserProfile,
    compute_keyterm_features,
    validate_graph,
)
from .spanner import (
    Spanner,
    compute_spanner,
    exploration_burn_in,
    min_covariance_eigenvalue,
    verify_spanner,
)
from .policies import (
    POLICY_KINDS,
    ConversationSchedule,
    StepOutcome,
    make_policy,
)
from .env import (
    Environment,
    HetRecDataset,
    SyntheticConfig,
    assemble_feedback_matrix,
    build_real_env,
    gen_synthetic,
    load_hetrec,
    truncated_svd,
)
from .bench import (
    ExperimentConfig,
    RegretTrace,
    aggregate,
    check_confidence_coverage,
    check_norm_ceiling,
    export,
    final_regret_by_run,
    regret_bound_conucb,
    regret_bound_mcr,
    regret_bound_spanner,
    run_experiment,
)

__all__ = [
    "NUMBA_ENABLED",
    "backend",
    "ConfidenceParams",
    "EstimatorState",
    "exploration_coefficient",
    "ArmCatalog",
    "KeyTermCatalog",
    "KeyTermGraph",
    "UserProfile",
    "compute_keyterm_features",
    "validate_graph",
    "Spanner",
    "compute_spanner",
    "verify_spanner",
    "min_covariance_eigenvalue",
    "exploration_burn_in",
    "POLICY_KINDS",
    "ConversationSchedule",
    "StepOutcome",
    "make_policy",
    "Environment",
    "SyntheticConfig",
    "HetRecDataset",
    "gen_synthetic",
    "assemble_feedback_matrix",
    "build_real_env",
    "load_hetrec",
    "truncated_svd",
    "ExperimentConfig",
    "RegretTrace",
    "run_experiment",
    "aggregate",
    "final_regret_by_run",
    "export",
    "regret_bound_spanner",
    "regret_bound_mcr",
    "regret_bound_conucb",
    "check_confidence_coverage",
    "check_norm_ceiling",
]
