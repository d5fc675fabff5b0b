"""Relay refinement on top of the clustered scheduler.

After a full run over all clusters, the most-selected cluster (the one the
scheduler judged most impactful) and the least-selected one are singled
out, and a fresh restricted run is executed for each. The restricted run
with the higher final performance wins. Total training budget is three
full runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .bandit import HpCluster

__all__ = [
    "RelayPlan",
    "PhaseResult",
    "RelayReport",
    "identify_coi_noi",
    "run_relay",
]


def identify_coi_noi(final_counts: Mapping[str, int]) -> tuple[str, str]:
    """Most- and least-selected cluster from the end-of-run counts.

    Ties: the most-selected takes the first maximal cluster in declaration
    order, the least-selected the last minimal one, so the two differ
    whenever there is more than one cluster.
    """
    names = list(final_counts.keys())
    if len(names) < 2:
        raise ValueError("need at least 2 clusters to identify COI and NOI")
    coi = names[0]
    noi = names[0]
    for name in names:
        if final_counts[name] > final_counts[coi]:
            coi = name
        if final_counts[name] <= final_counts[noi]:
            noi = name
    return coi, noi


@dataclass(frozen=True)
class RelayPlan:
    """Full cluster set plus the two singleton restrictions derived from it."""

    phase1_clusters: tuple[str, ...]
    coi: str
    noi: str

    def phase2_runs(self) -> list[tuple[str, tuple[str, ...]]]:
        return [("phase2_coi", (self.coi,)), ("phase2_noi", (self.noi,))]


@dataclass(frozen=True)
class PhaseResult:
    """Outcome of one scheduler run over a (possibly restricted) cluster set."""

    phase: str
    clusters: tuple[str, ...]
    performance: float
    final_counts: Mapping[str, int]
    log_path: str | None = None


@dataclass(frozen=True)
class RelayReport:
    plan: RelayPlan
    phase1: PhaseResult
    phase2: tuple[PhaseResult, ...]
    winner: PhaseResult

    def to_dict(self) -> dict:
        def phase_dict(p: PhaseResult) -> dict:
            return {
                "phase": p.phase,
                "clusters": list(p.clusters),
                "performance": p.performance,
                "final_counts": dict(p.final_counts),
                "log_path": p.log_path,
            }

        return {
            "plan": {
                "phase1_clusters": list(self.plan.phase1_clusters),
                "coi": self.plan.coi,
                "noi": self.plan.noi,
            },
            "phase1": phase_dict(self.phase1),
            "phase2": [phase_dict(p) for p in self.phase2],
            "winner": phase_dict(self.winner),
        }


PhaseRunner = Callable[[Sequence[HpCluster], str], PhaseResult]


def run_relay(clusters: Sequence[HpCluster], run_phase: PhaseRunner) -> RelayReport:
    """Full run, then one restricted rerun per cluster of interest.

    ``run_phase(cluster_subset, phase_label)`` executes one complete
    scheduler run from scratch and reports its final performance and
    cluster selection counts. The two restricted reruns are independent;
    the one with the higher performance is the winner.
    """
    clusters = list(clusters)
    phase1 = run_phase(clusters, "phase1")
    missing = [c.name for c in clusters if c.name not in phase1.final_counts]
    if missing:
        raise ValueError(f"phase 1 counts missing clusters: {missing}")
    coi, noi = identify_coi_noi({c.name: phase1.final_counts[c.name] for c in clusters})
    plan = RelayPlan(
        phase1_clusters=tuple(c.name for c in clusters),
        coi=coi,
        noi=noi,
    )
    by_name = {c.name: c for c in clusters}
    phase2 = tuple(
        run_phase([by_name[name] for name in subset], label)
        for label, subset in plan.phase2_runs()
    )
    winner = max(phase2, key=lambda p: p.performance)
    return RelayReport(plan=plan, phase1=phase1, phase2=phase2, winner=winner)
