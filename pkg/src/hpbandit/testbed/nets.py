"""Tiny MLPs with hand-written backprop, numpy only.

The policy head maps observations to action logits, the value head to a
scalar return estimate. Hidden layers use tanh; outputs are linear. Params
flatten to a single vector so optimizers and finite-difference checks can
treat the whole model as one array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Mlp",
    "PolicyValueParams",
    "init_policy_value",
    "mlp_forward",
    "mlp_backward",
    "log_softmax",
    "softmax",
    "entropy_from_logits",
    "sample_actions",
]


@dataclass
class Mlp:
    """Weight/bias arrays per layer; weights[l] has shape (out, in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_from_vector(self, vec: np.ndarray) -> None:
        offset = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = vec[offset : offset + w.size].reshape(w.shape)
            offset += w.size
            b[...] = vec[offset : offset + b.size]
            offset += b.size
        if offset != vec.size:
            raise ValueError("vector length does not match parameter count")

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )


def _init_mlp(sizes: list[int], rng: np.random.Generator, out_scale: float) -> Mlp:
    weights = []
    biases = []
    for l in range(len(sizes) - 1):
        fan_in = sizes[l]
        scale = out_scale if l == len(sizes) - 2 else 1.0
        weights.append(rng.standard_normal((sizes[l + 1], fan_in)) * scale / np.sqrt(fan_in))
        biases.append(np.zeros(sizes[l + 1]))
    return Mlp(weights, biases)


@dataclass
class PolicyValueParams:
    """Separate policy and value networks over the same observation space."""

    policy: Mlp
    value: Mlp

    def copy(self) -> "PolicyValueParams":
        return PolicyValueParams(self.policy.copy(), self.value.copy())

    def num_params(self) -> int:
        return self.policy.num_params() + self.value.num_params()

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.policy.to_vector(), self.value.to_vector()])

    def set_from_vector(self, vec: np.ndarray) -> None:
        n = self.policy.num_params()
        self.policy.set_from_vector(vec[:n])
        self.value.set_from_vector(vec[n:])

    def all_finite(self) -> bool:
        return self.policy.all_finite() and self.value.all_finite()


def init_policy_value(
    obs_dim: int,
    num_actions: int,
    hidden_sizes: tuple[int, ...],
    rng: np.random.Generator,
) -> PolicyValueParams:
    """Fresh networks. The policy output layer starts near zero so the
    initial policy is close to uniform."""
    policy = _init_mlp([obs_dim, *hidden_sizes, num_actions], rng, out_scale=0.01)
    value = _init_mlp([obs_dim, *hidden_sizes, 1], rng, out_scale=1.0)
    return PolicyValueParams(policy=policy, value=value)


def mlp_forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass. Returns (output, activations); activations[l] is the
    input to layer l and is what backward needs."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    cache = [a]
    last = len(mlp.weights) - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T + b
        a = z if l == last else np.tanh(z)
        cache.append(a)
    return a, cache


def mlp_backward(
    mlp: Mlp, cache: list[np.ndarray], grad_out: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of a scalar loss given dLoss/dOutput for the cached batch."""
    grad_w: list[np.ndarray] = [np.empty(0)] * len(mlp.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(mlp.biases)
    g = np.atleast_2d(grad_out)
    for l in range(len(mlp.weights) - 1, -1, -1):
        grad_w[l] = g.T @ cache[l]
        grad_b[l] = g.sum(axis=0)
        if l > 0:
            # cache[l] holds tanh activations for hidden layers
            g = (g @ mlp.weights[l]) * (1.0 - cache[l] ** 2)
    return grad_w, grad_b


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy_from_logits(logits: np.ndarray) -> np.ndarray:
    """Per-row entropy of the softmax distribution, in nats."""
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(axis=-1)


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample one action per row from the softmax distribution."""
    probs = softmax(np.atleast_2d(logits))
    cdf = probs.cumsum(axis=1)
    u = rng.random(probs.shape[0])
    actions = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(actions, probs.shape[1] - 1)
