"""Desk-scale RL stack: deterministic envs, tiny nets, numpy PPO."""

from .envs import DriftingRewardEnv, EnvSpec, Gridworld, make_env
from .nets import PolicyValueParams, init_policy_value
from .ppo import (
    AdamState,
    HpOverride,
    MiniBatch,
    NonFiniteUpdateError,
    PpoConfig,
    RolloutBuffer,
    RolloutCollector,
    apply_hp_override,
    collect_rollout,
    gae,
    mean_value_estimate,
    ppo_loss,
    ppo_loss_and_grad,
    ppo_update,
)

__all__ = [
    "DriftingRewardEnv",
    "EnvSpec",
    "Gridworld",
    "make_env",
    "PolicyValueParams",
    "init_policy_value",
    "AdamState",
    "HpOverride",
    "MiniBatch",
    "NonFiniteUpdateError",
    "PpoConfig",
    "RolloutBuffer",
    "RolloutCollector",
    "apply_hp_override",
    "collect_rollout",
    "gae",
    "mean_value_estimate",
    "ppo_loss",
    "ppo_loss_and_grad",
    "ppo_update",
]
