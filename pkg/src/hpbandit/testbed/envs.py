"""Small deterministic environments for exercising the full training loop.

Two kinds are provided. ``gridworld`` is an NxN board with a goal cell:
reach it for the goal reward (episode ends), or run out the horizon for
nothing. Observations are one-hot cell indicators. ``drifting`` is a
stateless k-action task whose per-action rewards shift at scheduled global
step counts, giving the scheduler a non-stationary target to track.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = ["EnvSpec", "Gridworld", "DriftingRewardEnv", "make_env"]

KINDS = ("gridworld", "drifting")


@dataclass(frozen=True)
class EnvSpec:
    """Declarative environment description, one section of the run config."""

    kind: str = "gridworld"
    # gridworld
    size: int = 5
    horizon: int = 32
    goal_reward: float = 1.0
    step_penalty: float = 0.0
    random_start: bool = False
    # drifting
    num_actions: int = 4
    base_rewards: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    noise_scale: float = 0.1
    # each segment: (global step at which it activates, per-action shifts)
    segments: tuple[tuple[int, tuple[float, ...]], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown env kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.kind == "gridworld" and self.size < 2:
            raise ValueError("gridworld size must be >= 2")
        for v in (self.goal_reward, self.step_penalty, self.noise_scale):
            if not np.isfinite(v):
                raise ValueError("reward parameters must be finite")
        if self.kind == "drifting":
            if self.num_actions < 2:
                raise ValueError("drifting env needs >= 2 actions")
            if len(self.base_rewards) != self.num_actions:
                raise ValueError("base_rewards length must equal num_actions")
            for _, shifts in self.segments:
                if len(shifts) != self.num_actions:
                    raise ValueError("segment shift length must equal num_actions")

    @staticmethod
    def from_dict(doc: Mapping) -> "EnvSpec":
        doc = dict(doc)
        if doc.get("kind") == "drifting_bandit_env":  # long-form config alias
            doc["kind"] = "drifting"
        if "segments" in doc:
            doc["segments"] = tuple(
                (int(start), tuple(float(s) for s in shifts)) for start, shifts in doc["segments"]
            )
        if "base_rewards" in doc:
            doc["base_rewards"] = tuple(float(r) for r in doc["base_rewards"])
        return EnvSpec(**doc)


class Gridworld:
    """Deterministic grid with a terminal goal in the far corner.

    Actions: 0 up, 1 down, 2 left, 3 right; moving off the board is a
    no-op. Reaching the goal yields ``goal_reward`` and ends the episode;
    hitting the horizon ends it with only the step penalty.
    """

    def __init__(self, spec: EnvSpec) -> None:
        if spec.kind != "gridworld":
            raise ValueError("spec kind must be 'gridworld'")
        self.spec = spec
        self.num_actions = 4
        self.obs_dim = spec.size * spec.size
        self._rng = np.random.default_rng(0)
        self._pos = (0, 0)
        self._goal = (spec.size - 1, spec.size - 1)
        self._steps = 0
        self._done = True

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        n = self.spec.size
        if self.spec.random_start:
            while True:
                pos = (int(self._rng.integers(n)), int(self._rng.integers(n)))
                if pos != self._goal:
                    break
            self._pos = pos
        else:
            self._pos = (0, 0)
        self._steps = 0
        self._done = False
        return self._obs()

    def _obs(self) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        obs[self._pos[0] * self.spec.size + self._pos[1]] = 1.0
        return obs

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; reset() first")
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} out of range [0, {self.num_actions})")
        n = self.spec.size
        r, c = self._pos
        if action == 0:
            r = max(r - 1, 0)
        elif action == 1:
            r = min(r + 1, n - 1)
        elif action == 2:
            c = max(c - 1, 0)
        else:
            c = min(c + 1, n - 1)
        self._pos = (r, c)
        self._steps += 1
        reward = self.spec.step_penalty
        if self._pos == self._goal:
            reward += self.spec.goal_reward
            self._done = True
        elif self._steps >= self.spec.horizon:
            self._done = True
        return self._obs(), reward, self._done


class DriftingRewardEnv:
    """Stateless k-action task with scheduled reward shifts.

    The active segment is chosen by a global step counter that keeps
    counting across episodes, so reward structure drifts over the whole
    training run rather than within one episode.
    """

    def __init__(self, spec: EnvSpec) -> None:
        if spec.kind != "drifting":
            raise ValueError("spec kind must be 'drifting'")
        self.spec = spec
        self.num_actions = spec.num_actions
        self.obs_dim = 1
        self._rng = np.random.default_rng(0)
        self._steps_in_episode = 0
        self._global_steps = 0
        self._done = True

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
            self._global_steps = 0
        self._steps_in_episode = 0
        self._done = False
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.ones(1)

    def _current_means(self) -> np.ndarray:
        means = np.array(self.spec.base_rewards, dtype=float)
        for start, shifts in self.spec.segments:
            if self._global_steps >= start:
                means = np.array(self.spec.base_rewards, dtype=float) + np.asarray(shifts)
        return means

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; reset() first")
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} out of range [0, {self.num_actions})")
        mean = self._current_means()[action]
        reward = float(mean + self.spec.noise_scale * self._rng.standard_normal())
        self._steps_in_episode += 1
        self._global_steps += 1
        if self._steps_in_episode >= self.spec.horizon:
            self._done = True
        return self._obs(), reward, self._done


def make_env(spec: EnvSpec):
    if spec.kind == "gridworld":
        return Gridworld(spec)
    return DriftingRewardEnv(spec)
