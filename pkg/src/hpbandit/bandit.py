"""Two-level UCB bandit over clustered hyperparameter arms.

Hyperparameters are organized as a set of named clusters (e.g. "learning
rate"), each holding a small list of candidate values. Every training
episode the scheduler picks one cluster and one value inside it by UCB
score ``U + c * sqrt(log(i) / N)``, the caller trains with that value and
reports back a scalar utility, and the utility is pushed into sliding
windows at both levels. Window means are the arms' utilities, so old
evidence ages out and the scheduler tracks non-stationary training.

Usage is a strict ask/tell alternation::

    state = new_scheduler(clusters, SchedulerConfig(1.0, 10))
    decision = state.select()
    ...  # train one episode with decision.hp_value
    state.record(v_bar)
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

__all__ = [
    "HpValue",
    "HpCluster",
    "ArmStats",
    "SchedulerConfig",
    "SchedulerState",
    "Decision",
    "ConfidenceRecord",
    "SchedulerSnapshot",
    "SelectionProportions",
    "SchedulerError",
    "PendingDecisionError",
    "NoPendingDecisionError",
    "UnknownArmError",
    "new_scheduler",
    "build_clusters",
    "ucb_score",
    "hp_arm_id",
]

ArmId = Union[str, tuple[str, str]]


class SchedulerError(Exception):
    """Base class for scheduler protocol violations."""


class PendingDecisionError(SchedulerError):
    """A decision was requested while the previous one awaits its utility."""

    def __init__(self) -> None:
        super().__init__("pending_tell")


class NoPendingDecisionError(SchedulerError):
    """A utility was reported with no outstanding decision."""

    def __init__(self) -> None:
        super().__init__("no_pending_ask")


class UnknownArmError(SchedulerError):
    def __init__(self, arm: ArmId) -> None:
        super().__init__(f"unknown arm {arm!r}")


@dataclass(frozen=True)
class HpValue:
    """One candidate value inside a cluster."""

    name: str
    value: float

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("HP value name must be non-empty")
        if not math.isfinite(self.value):
            raise ValueError(f"HP value {self.name!r} is not finite")


@dataclass(frozen=True)
class HpCluster:
    """A named hyperparameter with its candidate values."""

    name: str
    members: tuple[HpValue, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("cluster name must be non-empty")
        if not self.members:
            raise ValueError(f"empty cluster {self.name!r}")
        seen: set[str] = set()
        for member in self.members:
            if member.name in seen:
                raise ValueError(
                    f"duplicate HP {member.name!r} in cluster {self.name!r}"
                )
            seen.add(member.name)


class ArmStats:
    """Selection count, sliding sample window and cached window mean.

    ``count`` starts at 1 and the utility of an empty window is 0, so a
    fresh arm scores ``c * sqrt(log i)`` and nothing divides by zero.
    """

    __slots__ = ("count", "window", "utility")

    def __init__(self, window_capacity: int) -> None:
        self.count: int = 1
        self.window: deque[float] = deque(maxlen=window_capacity)
        self.utility: float = 0.0

    def push(self, sample: float) -> None:
        # deque(maxlen=W) evicts the oldest sample once full
        self.window.append(sample)
        self.utility = sum(self.window) / len(self.window)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"ArmStats(count={self.count}, utility={self.utility}, window={list(self.window)})"


@dataclass(frozen=True)
class SchedulerConfig:
    """Exploration coefficient c and window capacity W.

    Ties at either level always go to the first arm in declaration order;
    there is no randomized tie-break, which keeps decision sequences
    replayable.
    """

    exploration_coefficient: float = 1.0
    window_capacity: int = 10
    tie_break: str = "first_in_order"

    def __post_init__(self) -> None:
        if not math.isfinite(self.exploration_coefficient):
            raise ValueError("exploration coefficient must be finite")
        if self.exploration_coefficient < 0:
            raise ValueError("exploration coefficient must be >= 0")
        if not isinstance(self.window_capacity, int) or self.window_capacity < 1:
            raise ValueError("window capacity must be a positive integer")
        if self.tie_break != "first_in_order":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")


@dataclass(frozen=True)
class Decision:
    """One (cluster, value) pick, with the winning UCB scores."""

    cluster_name: str
    hp_name: str
    hp_value: float
    episode: int
    cluster_score: float
    hp_score: float


@dataclass(frozen=True)
class ConfidenceRecord:
    """Mean, exploration bonus and upper bound of one arm at episode i."""

    episode: int
    arm: str
    mean: float
    bonus: float
    upper: float


def ucb_score(utility: float, count: int, episode: int, c: float) -> float:
    """``U + c * sqrt(log i / N)`` with the natural logarithm."""
    return utility + c * math.sqrt(math.log(episode) / count)


def hp_arm_id(cluster_name: str, hp_name: str) -> str:
    """Flat string id for a value-level arm, used in snapshots and CSVs."""
    return f"{cluster_name}/{hp_name}"


def _argmax_first(scores: Sequence[float]) -> int:
    """Index of the maximum score; ties go to the earliest index."""
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


class SchedulerState:
    """Mutable bandit state: per-arm stats at both levels plus the episode
    counter. Single logical owner; all mutation goes through :meth:`select`
    and :meth:`record`, which must strictly alternate.
    """

    def __init__(self, clusters: Sequence[HpCluster], config: SchedulerConfig) -> None:
        clusters = tuple(clusters)
        if not clusters:
            raise ValueError("empty cluster set")
        seen: set[str] = set()
        for cluster in clusters:
            if cluster.name in seen:
                raise ValueError(f"duplicate cluster {cluster.name!r}")
            seen.add(cluster.name)
        self.clusters = clusters
        self.config = config
        w = config.window_capacity
        self.cluster_stats: dict[str, ArmStats] = {c.name: ArmStats(w) for c in clusters}
        self.hp_stats: dict[tuple[str, str], ArmStats] = {
            (c.name, m.name): ArmStats(w) for c in clusters for m in c.members
        }
        self.episode: int = 1
        self.pending: Decision | None = None

    # -- selection ---------------------------------------------------------

    def select(self) -> Decision:
        """Pick the argmax cluster, then the argmax value inside it.

        Counts and the episode index only move in :meth:`record`; an
        unanswered select leaves the state untouched apart from the
        pending marker.
        """
        if self.pending is not None:
            raise PendingDecisionError()
        i = self.episode
        c = self.config.exploration_coefficient

        cluster_scores = [
            ucb_score(self.cluster_stats[cl.name].utility, self.cluster_stats[cl.name].count, i, c)
            for cl in self.clusters
        ]
        cluster_idx = _argmax_first(cluster_scores)
        cluster = self.clusters[cluster_idx]

        hp_scores = [
            ucb_score(
                self.hp_stats[(cluster.name, m.name)].utility,
                self.hp_stats[(cluster.name, m.name)].count,
                i,
                c,
            )
            for m in cluster.members
        ]
        hp_idx = _argmax_first(hp_scores)
        member = cluster.members[hp_idx]

        decision = Decision(
            cluster_name=cluster.name,
            hp_name=member.name,
            hp_value=member.value,
            episode=i,
            cluster_score=cluster_scores[cluster_idx],
            hp_score=hp_scores[hp_idx],
        )
        self.pending = decision
        return decision

    def record(self, v_bar: float) -> None:
        """Report the utility observed for the pending decision.

        Pushes the sample into the chosen cluster's and value's windows,
        refreshes both window means, bumps both counts and the episode
        counter, and clears the pending marker. Non-finite samples are
        rejected with the state unchanged.
        """
        if self.pending is None:
            raise NoPendingDecisionError()
        v = float(v_bar)
        if not math.isfinite(v):
            raise ValueError("non-finite utility sample")
        decision = self.pending
        cluster_stats = self.cluster_stats[decision.cluster_name]
        hp_stats = self.hp_stats[(decision.cluster_name, decision.hp_name)]
        cluster_stats.push(v)
        hp_stats.push(v)
        cluster_stats.count += 1
        hp_stats.count += 1
        self.episode += 1
        self.pending = None

    # -- inspection --------------------------------------------------------

    def completed_episodes(self) -> int:
        return self.episode - 1

    def _stats_for(self, arm: ArmId) -> ArmStats:
        if isinstance(arm, str):
            if arm in self.cluster_stats:
                return self.cluster_stats[arm]
            raise UnknownArmError(arm)
        if arm in self.hp_stats:
            return self.hp_stats[arm]
        raise UnknownArmError(arm)

    def confidence_bound(self, arm: ArmId) -> ConfidenceRecord:
        """Mean, bonus and upper bound of one arm at the current episode."""
        stats = self._stats_for(arm)
        c = self.config.exploration_coefficient
        bonus = c * math.sqrt(math.log(self.episode) / stats.count)
        arm_str = arm if isinstance(arm, str) else hp_arm_id(*arm)
        return ConfidenceRecord(
            episode=self.episode,
            arm=arm_str,
            mean=stats.utility,
            bonus=bonus,
            upper=stats.utility + bonus,
        )

    def snapshot(self) -> SchedulerSnapshot:
        """Immutable value copy of all stats plus current confidence records."""
        arms: list[ArmSnapshot] = []
        confidence: list[ConfidenceRecord] = []
        for cluster in self.clusters:
            stats = self.cluster_stats[cluster.name]
            arms.append(
                ArmSnapshot(
                    arm=cluster.name,
                    cluster=cluster.name,
                    hp_name=None,
                    value=None,
                    count=stats.count,
                    utility=stats.utility,
                    window=tuple(stats.window),
                )
            )
            confidence.append(self.confidence_bound(cluster.name))
            for member in cluster.members:
                mstats = self.hp_stats[(cluster.name, member.name)]
                arms.append(
                    ArmSnapshot(
                        arm=hp_arm_id(cluster.name, member.name),
                        cluster=cluster.name,
                        hp_name=member.name,
                        value=member.value,
                        count=mstats.count,
                        utility=mstats.utility,
                        window=tuple(mstats.window),
                    )
                )
                confidence.append(self.confidence_bound((cluster.name, member.name)))
        return SchedulerSnapshot(
            episode=self.episode,
            exploration_coefficient=self.config.exploration_coefficient,
            window_capacity=self.config.window_capacity,
            arms=tuple(arms),
            confidence=tuple(confidence),
        )

    def selection_proportions(self) -> SelectionProportions:
        """Fraction of completed episodes spent on each arm, per level.

        The initialization count of 1 is subtracted before normalizing, so
        fractions at each level sum to 1.
        """
        completed = self.completed_episodes()
        if completed == 0:
            raise SchedulerError("no completed episodes")
        clusters = {
            name: (stats.count - 1) / completed for name, stats in self.cluster_stats.items()
        }
        hps = {key: (stats.count - 1) / completed for key, stats in self.hp_stats.items()}
        return SelectionProportions(clusters=clusters, hps=hps)


@dataclass(frozen=True)
class ArmSnapshot:
    """Frozen copy of one arm's stats inside a snapshot."""

    arm: str
    cluster: str
    hp_name: str | None
    value: float | None
    count: int
    utility: float
    window: tuple[float, ...]


@dataclass(frozen=True)
class SelectionProportions:
    clusters: Mapping[str, float]
    hps: Mapping[tuple[str, str], float]


@dataclass(frozen=True)
class SchedulerSnapshot:
    """Deep value copy of the scheduler, serializable as a JSON document."""

    episode: int
    exploration_coefficient: float
    window_capacity: int
    arms: tuple[ArmSnapshot, ...]
    confidence: tuple[ConfidenceRecord, ...]

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "config": {
                "c": self.exploration_coefficient,
                "W": self.window_capacity,
            },
            "arms": [
                {
                    "arm": a.arm,
                    "cluster": a.cluster,
                    "hp_name": a.hp_name,
                    "value": a.value,
                    "count": a.count,
                    "utility": a.utility,
                    "window": list(a.window),
                }
                for a in self.arms
            ],
            "confidence": [
                {
                    "episode": r.episode,
                    "arm": r.arm,
                    "mean": r.mean,
                    "bonus": r.bonus,
                    "upper": r.upper,
                }
                for r in self.confidence
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(doc: Mapping) -> "SchedulerSnapshot":
        arms = tuple(
            ArmSnapshot(
                arm=a["arm"],
                cluster=a["cluster"],
                hp_name=a["hp_name"],
                value=a["value"],
                count=a["count"],
                utility=a["utility"],
                window=tuple(a["window"]),
            )
            for a in doc["arms"]
        )
        confidence = tuple(
            ConfidenceRecord(
                episode=r["episode"],
                arm=r["arm"],
                mean=r["mean"],
                bonus=r["bonus"],
                upper=r["upper"],
            )
            for r in doc["confidence"]
        )
        return SchedulerSnapshot(
            episode=doc["episode"],
            exploration_coefficient=doc["config"]["c"],
            window_capacity=doc["config"]["W"],
            arms=arms,
            confidence=confidence,
        )

    @staticmethod
    def from_json(text: str) -> "SchedulerSnapshot":
        return SchedulerSnapshot.from_dict(json.loads(text))

    def confidence_csv_rows(self) -> list[tuple]:
        """Rows for the (episode, arm, mean, bonus, upper) CSV export."""
        return [(r.episode, r.arm, r.mean, r.bonus, r.upper) for r in self.confidence]


def new_scheduler(clusters: Sequence[HpCluster], config: SchedulerConfig) -> SchedulerState:
    """Build a fresh scheduler: all counts 1, all utilities 0, episode 1."""
    return SchedulerState(clusters, config)


def _default_hp_name(value: float) -> str:
    return format(value, ".12g")


def build_clusters(specs: Iterable[Mapping]) -> list[HpCluster]:
    """Construct clusters from config/wire dicts.

    Each entry needs a ``name`` plus either ``values`` (a list of numbers,
    names derived from the values) or ``members`` (a list of
    ``{"name": ..., "value": ...}`` objects).
    """
    clusters: list[HpCluster] = []
    for spec in specs:
        if "name" not in spec:
            raise ValueError("cluster spec missing 'name'")
        name = str(spec["name"])
        if "values" in spec:
            members = tuple(
                HpValue(name=_default_hp_name(float(v)), value=float(v)) for v in spec["values"]
            )
        elif "members" in spec:
            members = tuple(
                HpValue(name=str(m["name"]), value=float(m["value"])) for m in spec["members"]
            )
        else:
            raise ValueError(f"cluster {name!r} needs 'values' or 'members'")
        clusters.append(HpCluster(name=name, members=members))
    return clusters
