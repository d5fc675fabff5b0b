"""Minimal PPO on numpy: clipped surrogate, GAE, manual gradients.

The update minimizes

    L = L_pi + vlc * L_v - elc * entropy

with L_pi the clipped-ratio surrogate over probability ratios
``rho = pi_new(a|s) / pi_old(a|s)`` and L_v the squared error against
GAE-based value targets. Gradients are computed analytically through the
small MLPs; SGD is the default optimizer, Adam is available behind the
``optimizer`` config switch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .envs import EnvSpec, make_env
from .nets import (
    PolicyValueParams,
    entropy_from_logits,
    log_softmax,
    mlp_backward,
    mlp_forward,
    sample_actions,
)

__all__ = [
    "PpoConfig",
    "HpOverride",
    "apply_hp_override",
    "RolloutBuffer",
    "RolloutCollector",
    "collect_rollout",
    "gae",
    "MiniBatch",
    "ppo_loss",
    "ppo_loss_and_grad",
    "ppo_update",
    "AdamState",
    "UpdateStats",
    "mean_value_estimate",
    "NonFiniteUpdateError",
]


class NonFiniteUpdateError(RuntimeError):
    """Raised when an update produces a non-finite loss or gradient."""


@dataclass(frozen=True)
class PpoConfig:
    learning_rate: float = 5e-4
    batch_size: int = 2048
    value_loss_coefficient: float = 0.5
    entropy_loss_coefficient: float = 0.01
    update_epochs: int = 3
    clip_range: float = 0.2
    discount: float = 0.999
    gae_lambda: float = 0.95
    rollout_length: int = 256
    num_envs: int = 64
    hidden_sizes: tuple[int, ...] = (32,)
    optimizer: str = "sgd"

    def __post_init__(self) -> None:
        if not 0 < self.clip_range < 1:
            raise ValueError("clip_range must be in (0, 1)")
        if not 0 <= self.discount <= 1:
            raise ValueError("discount must be in [0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.rollout_length < 1 or self.num_envs < 1:
            raise ValueError("rollout_length and num_envs must be >= 1")
        if not 1 <= self.batch_size <= self.rollout_length * self.num_envs:
            raise ValueError("batch_size must be in [1, rollout_length * num_envs]")
        if self.update_epochs < 1:
            raise ValueError("update_epochs must be >= 1")
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ValueError("learning_rate must be finite and >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @staticmethod
    def from_dict(doc: Mapping) -> "PpoConfig":
        doc = dict(doc)
        if "hidden_sizes" in doc:
            doc["hidden_sizes"] = tuple(int(h) for h in doc["hidden_sizes"])
        return PpoConfig(**doc)


# Aliases for the tunable fields, keyed by common cluster names.
_OVERRIDE_FIELDS = {
    "lr": "learning_rate",
    "learning_rate": "learning_rate",
    "bs": "batch_size",
    "batch_size": "batch_size",
    "vlc": "value_loss_coefficient",
    "value_loss_coef": "value_loss_coefficient",
    "value_loss_coefficient": "value_loss_coefficient",
    "elc": "entropy_loss_coefficient",
    "entropy_loss_coef": "entropy_loss_coefficient",
    "entropy_loss_coefficient": "entropy_loss_coefficient",
    "nue": "update_epochs",
    "num_update_epochs": "update_epochs",
    "update_epochs": "update_epochs",
}

_INT_FIELDS = {"batch_size", "update_epochs"}


@dataclass(frozen=True)
class HpOverride:
    """One tunable field replacement taken from a scheduler decision."""

    cluster_name: str
    hp_name: str
    value: float

    @staticmethod
    def from_decision(decision) -> "HpOverride":
        return HpOverride(
            cluster_name=decision.cluster_name,
            hp_name=decision.hp_name,
            value=decision.hp_value,
        )


def apply_hp_override(baseline: PpoConfig, override: HpOverride | None) -> PpoConfig:
    """Baseline config with exactly one field replaced.

    The override lasts for one update only; callers restart from the
    baseline next episode unless the scheduler picks the same value again.
    """
    if override is None:
        return baseline
    key = override.cluster_name.strip().lower()
    if key not in _OVERRIDE_FIELDS:
        raise ValueError(
            f"cluster {override.cluster_name!r} does not map to a tunable field"
        )
    fname = _OVERRIDE_FIELDS[key]
    value = int(override.value) if fname in _INT_FIELDS else float(override.value)
    return replace(baseline, **{fname: value})


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap: np.ndarray | float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation.

    ``delta_t = r_t + gamma * (1 - done_t) * V_{t+1} - V_t`` and
    ``A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}``, swept
    backwards; value targets are ``A_t + V_t``. ``done_t`` marks that
    transition t ended its episode, so nothing leaks across resets.
    Accepts (T,) vectors or (T, num_envs) matrices.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError("rewards, values and dones must have identical shapes")
    t_len = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0] if rewards.ndim > 1 else np.float64(0.0))
    for t in range(t_len - 1, -1, -1):
        next_values = bootstrap if t == t_len - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * np.asarray(next_values) * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        advantages[t] = last
    return advantages, advantages + values


@dataclass
class RolloutBuffer:
    """Fixed-length rollout across parallel envs, dones recorded inline."""

    observations: np.ndarray  # (T, E, D)
    actions: np.ndarray  # (T, E) int
    rewards: np.ndarray  # (T, E)
    dones: np.ndarray  # (T, E) float 0/1
    values: np.ndarray  # (T, E)
    log_probs: np.ndarray  # (T, E)
    bootstrap: np.ndarray  # (E,)
    episode_returns: list[float] = field(default_factory=list)
    _advantages: np.ndarray | None = None
    _targets: np.ndarray | None = None

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def num_envs(self) -> int:
        return self.observations.shape[1]

    def flat_observations(self) -> np.ndarray:
        t, e, d = self.observations.shape
        return self.observations.reshape(t * e, d)

    def advantages_and_targets(self, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """GAE output, computed on first use and cached."""
        if self._advantages is None:
            self._advantages, self._targets = gae(
                self.rewards, self.values, self.dones, self.bootstrap, gamma, lam
            )
        return self._advantages, self._targets


class RolloutCollector:
    """Steps a batch of envs with the softmax policy, carrying observations
    and partial episode returns across successive rollouts."""

    def __init__(self, envs: Sequence, seeds: Sequence[int]) -> None:
        self.envs = list(envs)
        if len(self.envs) != len(seeds):
            raise ValueError("need one seed per environment")
        self._obs = np.stack([env.reset(seed=int(s)) for env, s in zip(self.envs, seeds)])
        self._running_returns = np.zeros(len(self.envs))

    def collect(self, params: PolicyValueParams, t_len: int, rng: np.random.Generator) -> RolloutBuffer:
        if t_len < 1:
            raise ValueError("rollout length must be >= 1")
        n_envs = len(self.envs)
        obs_dim = self._obs.shape[1]
        obs = np.zeros((t_len, n_envs, obs_dim))
        actions = np.zeros((t_len, n_envs), dtype=np.int64)
        rewards = np.zeros((t_len, n_envs))
        dones = np.zeros((t_len, n_envs))
        values = np.zeros((t_len, n_envs))
        log_probs = np.zeros((t_len, n_envs))
        episode_returns: list[float] = []

        for t in range(t_len):
            logits, _ = mlp_forward(params.policy, self._obs)
            v, _ = mlp_forward(params.value, self._obs)
            if not (np.isfinite(logits).all() and np.isfinite(v).all()):
                raise NonFiniteUpdateError("non-finite network output during rollout")
            logp_all = log_softmax(logits)
            acts = sample_actions(logits, rng)

            obs[t] = self._obs
            actions[t] = acts
            values[t] = v[:, 0]
            log_probs[t] = logp_all[np.arange(n_envs), acts]

            for e, env in enumerate(self.envs):
                next_obs, reward, done = env.step(int(acts[e]))
                rewards[t, e] = reward
                self._running_returns[e] += reward
                if done:
                    dones[t, e] = 1.0
                    episode_returns.append(float(self._running_returns[e]))
                    self._running_returns[e] = 0.0
                    next_obs = env.reset()
                self._obs[e] = next_obs

        v_last, _ = mlp_forward(params.value, self._obs)
        if not np.isfinite(v_last).all():
            raise NonFiniteUpdateError("non-finite bootstrap value")
        return RolloutBuffer(
            observations=obs,
            actions=actions,
            rewards=rewards,
            dones=dones,
            values=values,
            log_probs=log_probs,
            bootstrap=v_last[:, 0],
            episode_returns=episode_returns,
        )


def collect_rollout(
    params: PolicyValueParams,
    env_or_envs,
    t_len: int,
    rng: np.random.Generator,
    seeds: Sequence[int] | None = None,
) -> RolloutBuffer:
    """One-shot collection from freshly reset envs (tests, examples)."""
    envs = list(env_or_envs) if isinstance(env_or_envs, (list, tuple)) else [env_or_envs]
    if seeds is None:
        seeds = list(range(len(envs)))
    return RolloutCollector(envs, seeds).collect(params, t_len, rng)


@dataclass
class MiniBatch:
    """Flat slice of a rollout, advantages already normalized."""

    observations: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    targets: np.ndarray


def _policy_value_forward(params: PolicyValueParams, batch: MiniBatch):
    logits, pcache = mlp_forward(params.policy, batch.observations)
    v_out, vcache = mlp_forward(params.value, batch.observations)
    return logits, pcache, v_out[:, 0], vcache


def _loss_terms(
    logits: np.ndarray, v: np.ndarray, batch: MiniBatch, cfg: PpoConfig
) -> tuple[float, float, float, np.ndarray, np.ndarray]:
    m = batch.observations.shape[0]
    logp_all = log_softmax(logits)
    logp = logp_all[np.arange(m), batch.actions]
    ratio = np.exp(logp - batch.old_log_probs)
    clipped = np.clip(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range)
    pg1 = -batch.advantages * ratio
    pg2 = -batch.advantages * clipped
    policy_loss = float(np.maximum(pg1, pg2).mean())
    value_loss = float(((v - batch.targets) ** 2).mean())
    ent = float(entropy_from_logits(logits).mean())
    return policy_loss, value_loss, ent, ratio, np.asarray(pg1 >= pg2)


def ppo_loss(params: PolicyValueParams, batch: MiniBatch, cfg: PpoConfig) -> float:
    """Total scalar loss; the quantity the analytic gradients differentiate."""
    logits, _, v, _ = _policy_value_forward(params, batch)
    policy_loss, value_loss, ent, _, _ = _loss_terms(logits, v, batch, cfg)
    return (
        policy_loss
        + cfg.value_loss_coefficient * value_loss
        - cfg.entropy_loss_coefficient * ent
    )


@dataclass
class LossParts:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float
    clip_fraction: float


def ppo_loss_and_grad(
    params: PolicyValueParams, batch: MiniBatch, cfg: PpoConfig
) -> tuple[float, np.ndarray, LossParts]:
    """Loss plus its gradient as one flat vector in params order."""
    m = batch.observations.shape[0]
    logits, pcache, v, vcache = _policy_value_forward(params, batch)
    policy_loss, value_loss, ent, ratio, use_unclipped = _loss_terms(logits, v, batch, cfg)
    total = (
        policy_loss
        + cfg.value_loss_coefficient * value_loss
        - cfg.entropy_loss_coefficient * ent
    )

    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    onehot = np.zeros_like(probs)
    onehot[np.arange(m), batch.actions] = 1.0

    # Surrogate term: d/d rho is -A where the unclipped branch is active
    # (ties included; there the branches coincide), 0 where the clip
    # saturates. d rho / d logits = rho * (onehot - probs).
    d_rho = np.where(use_unclipped, -batch.advantages, 0.0) / m
    grad_logits = (d_rho * ratio)[:, None] * (onehot - probs)
    # Entropy term enters the loss as -elc * H.
    entropy_per_sample = -(probs * logp_all).sum(axis=1)
    grad_logits += (
        cfg.entropy_loss_coefficient / m
    ) * probs * (logp_all + entropy_per_sample[:, None])

    grad_v = (2.0 * cfg.value_loss_coefficient / m) * (v - batch.targets)

    pol_gw, pol_gb = mlp_backward(params.policy, pcache, grad_logits)
    val_gw, val_gb = mlp_backward(params.value, vcache, grad_v[:, None])

    grad_vec = np.concatenate(
        [np.concatenate([gw.ravel(), gb.ravel()]) for gw, gb in zip(pol_gw, pol_gb)]
        + [np.concatenate([gw.ravel(), gb.ravel()]) for gw, gb in zip(val_gw, val_gb)]
    )
    clip_fraction = float(np.mean(~use_unclipped))
    parts = LossParts(policy_loss, value_loss, ent, total, clip_fraction)
    return total, grad_vec, parts


@dataclass
class AdamState:
    """First/second moment accumulators over the flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: PolicyValueParams) -> "AdamState":
        n = params.num_params()
        return AdamState(m=np.zeros(n), v=np.zeros(n))

    def update(self, grad: np.ndarray, lr: float) -> np.ndarray:
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.step)
        v_hat = self.v / (1 - self.beta2**self.step)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    total_loss: float
    clip_fraction: float
    minibatches: int


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Per-minibatch standardization with the std clamped at 1e-8."""
    std = adv.std()
    return (adv - adv.mean()) / max(float(std), 1e-8)


def ppo_update(
    params: PolicyValueParams,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    rng: np.random.Generator,
    adam: AdamState | None = None,
) -> UpdateStats:
    """Run ``update_epochs`` passes of minibatch steps over the rollout.

    On a non-finite loss or gradient the parameters are restored to their
    entry values and NonFiniteUpdateError is raised.
    """
    advantages, targets = buffer.advantages_and_targets(cfg.discount, cfg.gae_lambda)
    n = len(buffer) * buffer.num_envs
    obs = buffer.flat_observations()
    acts = buffer.actions.reshape(n)
    old_logp = buffer.log_probs.reshape(n)
    adv = advantages.reshape(n)
    tgt = targets.reshape(n)

    backup = params.copy()
    totals = np.zeros(5)
    count = 0
    try:
        for _ in range(cfg.update_epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                batch = MiniBatch(
                    observations=obs[idx],
                    actions=acts[idx],
                    old_log_probs=old_logp[idx],
                    advantages=normalize_advantages(adv[idx]),
                    targets=tgt[idx],
                )
                loss, grad, parts = ppo_loss_and_grad(params, batch, cfg)
                if not (math.isfinite(loss) and np.isfinite(grad).all()):
                    raise NonFiniteUpdateError("non-finite loss or gradient")
                if cfg.optimizer == "adam":
                    if adam is None:
                        raise ValueError("adam optimizer requires an AdamState")
                    delta = adam.update(grad, cfg.learning_rate)
                else:
                    delta = cfg.learning_rate * grad
                vec = params.to_vector() - delta
                params.set_from_vector(vec)
                totals += (
                    parts.policy_loss,
                    parts.value_loss,
                    parts.entropy,
                    parts.total,
                    parts.clip_fraction,
                )
                count += 1
    except NonFiniteUpdateError:
        params.policy = backup.policy
        params.value = backup.value
        raise
    mean = totals / max(count, 1)
    return UpdateStats(
        policy_loss=float(mean[0]),
        value_loss=float(mean[1]),
        entropy=float(mean[2]),
        total_loss=float(mean[3]),
        clip_fraction=float(mean[4]),
        minibatches=count,
    )


def mean_value_estimate(params: PolicyValueParams, states: np.ndarray) -> float:
    """Mean of the value head over the given states (the utility sample)."""
    states = np.asarray(states, dtype=float)
    if states.size == 0:
        raise ValueError("mean_value_estimate needs at least one state")
    v, _ = mlp_forward(params.value, states)
    return float(v[:, 0].mean())


def build_envs(spec: EnvSpec, num_envs: int, seed_seq: np.random.SeedSequence):
    """num_envs copies of the environment, each seeded from its own stream."""
    children = seed_seq.spawn(num_envs)
    envs = [make_env(spec) for _ in range(num_envs)]
    seeds = [int(child.generate_state(1)[0]) for child in children]
    return envs, seeds
