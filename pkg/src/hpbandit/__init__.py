"""Single-run hyperparameter scheduling with clustered UCB bandits."""

from .bandit import (
    ArmStats,
    ConfidenceRecord,
    Decision,
    HpCluster,
    HpValue,
    NoPendingDecisionError,
    PendingDecisionError,
    SchedulerConfig,
    SchedulerError,
    SchedulerSnapshot,
    SchedulerState,
    UnknownArmError,
    build_clusters,
    new_scheduler,
)
from .relay import PhaseResult, RelayPlan, RelayReport, identify_coi_noi, run_relay

__version__ = "0.1.0"

__all__ = [
    "ArmStats",
    "ConfidenceRecord",
    "Decision",
    "HpCluster",
    "HpValue",
    "NoPendingDecisionError",
    "PendingDecisionError",
    "SchedulerConfig",
    "SchedulerError",
    "SchedulerSnapshot",
    "SchedulerState",
    "UnknownArmError",
    "build_clusters",
    "new_scheduler",
    "PhaseResult",
    "RelayPlan",
    "RelayReport",
    "identify_coi_noi",
    "run_relay",
    "__version__",
]
