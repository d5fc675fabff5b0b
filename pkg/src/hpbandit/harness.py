"""Experiment orchestration: config ingestion, method dispatch, logging.

A run executes ``total_episodes`` iterations of: collect a rollout, run
GAE, pick a hyperparameter override (per the configured method), do one
PPO update with it, estimate the utility from the refreshed value head,
and feed the utility back to the scheduler. Every completed episode
appends one row to a per-seed decision CSV; a JSON summary aggregates the
seeds. ``replay`` re-simulates the scheduler arithmetic from a decision
CSV and reports any row that disagrees with the UCB argmax.

Seeding: each configured seed owns a ``numpy.random.SeedSequence(seed)``;
per-component streams (env dynamics, net init, action sampling, minibatch
shuffling, random-search draws) are spawned children of it, so seeds and
sweep cells never share streams and can run in parallel.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .bandit import (
    ConfidenceRecord,
    Decision,
    HpCluster,
    SchedulerConfig,
    build_clusters,
    new_scheduler,
)
from .relay import PhaseResult, RelayReport, run_relay
from .testbed.envs import EnvSpec
from .testbed.nets import init_policy_value
from .testbed.ppo import (
    AdamState,
    HpOverride,
    NonFiniteUpdateError,
    PpoConfig,
    RolloutCollector,
    apply_hp_override,
    build_envs,
    mean_value_estimate,
    ppo_update,
)

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "DecisionLogRow",
    "SeedRunResult",
    "RunReport",
    "run_experiment",
    "run_sweep",
    "run_relay_experiment",
    "replay_log",
    "ReplayVerdict",
    "read_decision_log",
    "final_performance",
    "g12",
]

METHODS = ("fixed", "random", "ultho", "relay")

CSV_HEADER = (
    "episode,method,cluster,hp_name,hp_value,v_bar,mean_episode_return,"
    "cluster_U,cluster_N,hp_U,hp_N,cluster_bonus,hp_bonus,return_is_carried"
)

CONFIDENCE_HEADER = "episode,arm,mean,bonus,upper"


def g12(x: float) -> str:
    """Numeric CSV formatting; 12 significant digits round-trip closely
    enough for replay."""
    return format(float(x), ".12g")


def _json_number(x: float) -> float | None:
    # keep summaries strict JSON: a failed run's missing return becomes null
    return x if math.isfinite(x) else None


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "ultho"
    seeds: tuple[int, ...] = (1,)
    total_episodes: int = 100
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    clusters: tuple[HpCluster, ...] = ()
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env: EnvSpec = field(default_factory=EnvSpec)
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.total_episodes < 1:
            raise ValueError("total_episodes must be >= 1")
        if self.method in ("random", "ultho", "relay") and not self.clusters:
            raise ValueError(f"method {self.method!r} requires clusters")
        if self.method == "relay" and len(self.clusters) < 2:
            raise ValueError("relay requires at least 2 clusters")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @staticmethod
    def from_dict(doc: Mapping) -> "ExperimentConfig":
        doc = dict(doc)
        known = {
            "method", "seeds", "total_episodes", "scheduler", "clusters",
            "ppo", "env", "out_dir", "workers",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict = {}
        if "method" in doc:
            kwargs["method"] = str(doc["method"])
        if "seeds" in doc:
            kwargs["seeds"] = tuple(int(s) for s in doc["seeds"])
        if "total_episodes" in doc:
            kwargs["total_episodes"] = int(doc["total_episodes"])
        if "scheduler" in doc:
            sched = doc["scheduler"]
            kwargs["scheduler"] = SchedulerConfig(
                exploration_coefficient=float(sched.get("c", 1.0)),
                window_capacity=int(sched.get("W", 10)),
            )
        if "clusters" in doc:
            kwargs["clusters"] = tuple(build_clusters(doc["clusters"]))
        if "ppo" in doc:
            kwargs["ppo"] = PpoConfig.from_dict(doc["ppo"])
        if "env" in doc:
            kwargs["env"] = EnvSpec.from_dict(doc["env"])
        if "out_dir" in doc:
            kwargs["out_dir"] = str(doc["out_dir"])
        if "workers" in doc:
            kwargs["workers"] = int(doc["workers"])
        return ExperimentConfig(**kwargs)

    @staticmethod
    def from_json_file(path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seeds": list(self.seeds),
            "total_episodes": self.total_episodes,
            "scheduler": {
                "c": self.scheduler.exploration_coefficient,
                "W": self.scheduler.window_capacity,
            },
            "clusters": [
                {
                    "name": c.name,
                    "members": [{"name": m.name, "value": m.value} for m in c.members],
                }
                for c in self.clusters
            ],
            "ppo": {
                "learning_rate": self.ppo.learning_rate,
                "batch_size": self.ppo.batch_size,
                "value_loss_coefficient": self.ppo.value_loss_coefficient,
                "entropy_loss_coefficient": self.ppo.entropy_loss_coefficient,
                "update_epochs": self.ppo.update_epochs,
                "clip_range": self.ppo.clip_range,
                "discount": self.ppo.discount,
                "gae_lambda": self.ppo.gae_lambda,
                "rollout_length": self.ppo.rollout_length,
                "num_envs": self.ppo.num_envs,
                "hidden_sizes": list(self.ppo.hidden_sizes),
                "optimizer": self.ppo.optimizer,
            },
            "env": {
                "kind": self.env.kind,
                "size": self.env.size,
                "horizon": self.env.horizon,
                "goal_reward": self.env.goal_reward,
                "step_penalty": self.env.step_penalty,
                "random_start": self.env.random_start,
                "num_actions": self.env.num_actions,
                "base_rewards": list(self.env.base_rewards),
                "noise_scale": self.env.noise_scale,
                "segments": [[start, list(shifts)] for start, shifts in self.env.segments],
            },
            "out_dir": self.out_dir,
            "workers": self.workers,
        }


@dataclass
class DecisionLogRow:
    episode: int
    method: str
    cluster: str = ""
    hp_name: str = ""
    hp_value: float | None = None
    v_bar: float = 0.0
    mean_episode_return: float = 0.0
    cluster_u: float | None = None
    cluster_n: int | None = None
    hp_u: float | None = None
    hp_n: int | None = None
    cluster_bonus: float | None = None
    hp_bonus: float | None = None
    return_is_carried: int = 0

    def to_csv(self) -> str:
        def opt(x, fmt=g12) -> str:
            return "" if x is None else fmt(x)

        return ",".join(
            [
                str(self.episode),
                self.method,
                self.cluster,
                self.hp_name,
                opt(self.hp_value),
                g12(self.v_bar),
                g12(self.mean_episode_return),
                opt(self.cluster_u),
                opt(self.cluster_n, str),
                opt(self.hp_u),
                opt(self.hp_n, str),
                opt(self.cluster_bonus),
                opt(self.hp_bonus),
                str(self.return_is_carried),
            ]
        )

    @staticmethod
    def from_csv(line: str) -> "DecisionLogRow":
        parts = line.rstrip("\n").split(",")
        if len(parts) != 14:
            raise ValueError(f"expected 14 fields, found {len(parts)}")

        def fopt(s: str) -> float | None:
            return None if s == "" else float(s)

        def iopt(s: str) -> int | None:
            return None if s == "" else int(s)

        return DecisionLogRow(
            episode=int(parts[0]),
            method=parts[1],
            cluster=parts[2],
            hp_name=parts[3],
            hp_value=fopt(parts[4]),
            v_bar=float(parts[5]),
            mean_episode_return=float(parts[6]),
            cluster_u=fopt(parts[7]),
            cluster_n=iopt(parts[8]),
            hp_u=fopt(parts[9]),
            hp_n=iopt(parts[10]),
            cluster_bonus=fopt(parts[11]),
            hp_bonus=fopt(parts[12]),
            return_is_carried=int(parts[13]),
        )


@dataclass
class SeedRunResult:
    seed: int
    episodes_completed: int
    final_return: float
    final_counts: dict[str, int]
    decisions_csv: str
    confidence_csv: str | None
    failed: bool = False
    error: str | None = None
    failed_episode: int | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "episodes_completed": self.episodes_completed,
            "final_return": _json_number(self.final_return),
            "final_counts": self.final_counts,
            "decisions_csv": self.decisions_csv,
            "confidence_csv": self.confidence_csv,
            "failed": self.failed,
            "error": self.error,
            "failed_episode": self.failed_episode,
        }


@dataclass
class RunReport:
    config: ExperimentConfig
    per_seed: list[SeedRunResult]
    mean_final_return: float
    stderr_final_return: float

    @property
    def any_failed(self) -> bool:
        return any(r.failed for r in self.per_seed)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "per_seed": [r.to_dict() for r in self.per_seed],
            "aggregate": {
                "mean_final_return": _json_number(self.mean_final_return),
                "stderr_final_return": _json_number(self.stderr_final_return),
                "num_failed": sum(r.failed for r in self.per_seed),
            },
        }


def final_performance(returns: Sequence[float]) -> float:
    """Mean episode return over the final 10% of episodes (at least one)."""
    if not returns:
        return float("nan")
    tail = max(1, math.ceil(0.1 * len(returns)))
    return float(np.mean(returns[-tail:]))


def _embedded_config(
    config: ExperimentConfig, seed: int, clusters: Sequence[HpCluster], method: str
) -> dict:
    return {
        "method": method,
        "seed": seed,
        "c": config.scheduler.exploration_coefficient,
        "W": config.scheduler.window_capacity,
        "clusters": [
            {
                "name": c.name,
                "members": [{"name": m.name, "value": m.value} for m in c.members],
            }
            for c in clusters
        ],
        "total_episodes": config.total_episodes,
    }


def _run_single_seed(
    config: ExperimentConfig,
    seed: int,
    seed_seq: np.random.SeedSequence,
    clusters: Sequence[HpCluster],
    method: str,
    decisions_path: str,
    confidence_path: str | None,
) -> SeedRunResult:
    env_ss, init_ss, action_ss, update_ss, method_ss = seed_seq.spawn(5)
    envs, env_seeds = build_envs(config.env, config.ppo.num_envs, env_ss)
    params = init_policy_value(
        envs[0].obs_dim,
        envs[0].num_actions,
        config.ppo.hidden_sizes,
        np.random.default_rng(init_ss),
    )
    action_rng = np.random.default_rng(action_ss)
    update_rng = np.random.default_rng(update_ss)
    method_rng = np.random.default_rng(method_ss)
    collector = RolloutCollector(envs, env_seeds)
    adam = AdamState.for_params(params) if config.ppo.optimizer == "adam" else None

    scheduler = None
    if method in ("ultho", "relay"):
        scheduler = new_scheduler(list(clusters), config.scheduler)
    flat_arms = [(c, m) for c in clusters for m in c.members]

    rows: list[DecisionLogRow] = []
    confidence_rows: list[ConfidenceRecord] = []
    last_return = 0.0
    failed = False
    error: str | None = None
    failed_episode: int | None = None

    for episode in range(1, config.total_episodes + 1):
        buffer = collector.collect(params, config.ppo.rollout_length, action_rng)

        decision: Decision | None = None
        override: HpOverride | None = None
        row = DecisionLogRow(episode=episode, method=method)
        if method == "random":
            cluster, member = flat_arms[int(method_rng.integers(len(flat_arms)))]
            override = HpOverride(cluster.name, member.name, member.value)
            row.cluster, row.hp_name, row.hp_value = cluster.name, member.name, member.value
        elif scheduler is not None:
            # Selection-time stats make each row self-consistent:
            # upper bound = U + bonus = the winning score.
            cluster_stats_before = {k: (s.utility, s.count) for k, s in scheduler.cluster_stats.items()}
            hp_stats_before = {k: (s.utility, s.count) for k, s in scheduler.hp_stats.items()}
            decision = scheduler.select()
            override = HpOverride.from_decision(decision)
            cu, cn = cluster_stats_before[decision.cluster_name]
            hu, hn = hp_stats_before[(decision.cluster_name, decision.hp_name)]
            row.cluster, row.hp_name, row.hp_value = (
                decision.cluster_name,
                decision.hp_name,
                decision.hp_value,
            )
            row.cluster_u, row.cluster_n = cu, cn
            row.hp_u, row.hp_n = hu, hn
            row.cluster_bonus = decision.cluster_score - cu
            row.hp_bonus = decision.hp_score - hu

        effective = apply_hp_override(config.ppo, override)
        try:
            ppo_update(params, buffer, effective, update_rng, adam)
        except NonFiniteUpdateError as exc:
            failed = True
            error = str(exc)
            failed_episode = episode
            break

        v_bar = mean_value_estimate(params, buffer.flat_observations())
        if scheduler is not None:
            scheduler.record(v_bar)
            confidence_rows.extend(scheduler.snapshot().confidence)
        row.v_bar = v_bar

        if buffer.episode_returns:
            last_return = float(np.mean(buffer.episode_returns))
            row.return_is_carried = 0
        else:
            row.return_is_carried = 1
        row.mean_episode_return = last_return
        rows.append(row)

    _write_decision_csv(
        decisions_path, _embedded_config(config, seed, clusters, method), rows
    )
    if confidence_path is not None and scheduler is not None:
        _write_confidence_csv(confidence_path, confidence_rows)

    final_counts = (
        {name: stats.count for name, stats in scheduler.cluster_stats.items()}
        if scheduler is not None
        else {}
    )
    return SeedRunResult(
        seed=seed,
        episodes_completed=len(rows),
        final_return=final_performance([r.mean_episode_return for r in rows]),
        final_counts=final_counts,
        decisions_csv=decisions_path,
        confidence_csv=confidence_path if scheduler is not None else None,
        failed=failed,
        error=error,
        failed_episode=failed_episode,
    )


def _write_decision_csv(path: str, embedded: dict, rows: Sequence[DecisionLogRow]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#config " + json.dumps(embedded, sort_keys=True) + "\n")
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.to_csv() + "\n")


def _write_confidence_csv(path: str, records: Sequence[ConfidenceRecord]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CONFIDENCE_HEADER + "\n")
        for r in records:
            fh.write(
                f"{r.episode},{r.arm},{g12(r.mean)},{g12(r.bonus)},{g12(r.upper)}\n"
            )


def _seed_job(args) -> SeedRunResult:
    config, seed, out_dir = args
    seed_seq = np.random.SeedSequence(seed)
    decisions = os.path.join(out_dir, f"decisions_seed{seed}.csv")
    confidence = os.path.join(out_dir, f"confidence_seed{seed}.csv")
    return _run_single_seed(
        config, seed, seed_seq, config.clusters, config.method, decisions, confidence
    )


def _map_jobs(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> RunReport:
    """One run per configured seed; writes per-seed CSVs and summary.json."""
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(config, seed, out_dir) for seed in config.seeds]
    results = _map_jobs(_seed_job, jobs, config.workers)
    finals = [r.final_return for r in results if not r.failed]
    mean = float(np.mean(finals)) if finals else float("nan")
    stderr = (
        float(np.std(finals, ddof=1) / np.sqrt(len(finals))) if len(finals) > 1 else 0.0
    )
    report = RunReport(
        config=config,
        per_seed=results,
        mean_final_return=mean,
        stderr_final_return=stderr,
    )
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    return report


@dataclass
class SweepCell:
    c: float
    w: int
    report: RunReport

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "W": self.w,
            "mean_final_return": self.report.mean_final_return,
            "stderr_final_return": self.report.stderr_final_return,
            "num_failed": sum(r.failed for r in self.report.per_seed),
        }


@dataclass
class SweepReport:
    cells: list[SweepCell]

    def spread(self) -> float:
        means = [c.report.mean_final_return for c in self.cells]
        return float(max(means) - min(means))

    def best_cell(self) -> SweepCell:
        return max(self.cells, key=lambda cell: cell.report.mean_final_return)

    def best_per_seed(self) -> dict[int, dict]:
        """Best cell for every seed individually (the per-environment view)."""
        out: dict[int, dict] = {}
        for cell in self.cells:
            for res in cell.report.per_seed:
                if res.failed:
                    continue
                cur = out.get(res.seed)
                if cur is None or res.final_return > cur["final_return"]:
                    out[res.seed] = {
                        "c": cell.c,
                        "W": cell.w,
                        "final_return": res.final_return,
                    }
        return out

    def to_dict(self) -> dict:
        best = self.best_cell()
        return {
            "cells": [c.to_dict() for c in self.cells],
            "best_cell": {"c": best.c, "W": best.w},
            "best_per_seed": {str(k): v for k, v in sorted(self.best_per_seed().items())},
            "spread_final_return": self.spread(),
        }


def run_sweep(
    config: ExperimentConfig,
    cs: Sequence[float],
    ws: Sequence[int],
    out_dir: str | None = None,
) -> SweepReport:
    """Grid over the exploration coefficient and window size."""
    if not cs or not ws:
        raise ValueError("sweep grid must be non-empty")
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    cells: list[SweepCell] = []
    for c in cs:
        for w in ws:
            cell_config = replace(
                config,
                scheduler=SchedulerConfig(exploration_coefficient=float(c), window_capacity=int(w)),
            )
            cell_dir = os.path.join(out_dir, f"c{format(c, 'g')}_w{int(w)}")
            report = run_experiment(cell_config, cell_dir)
            cells.append(SweepCell(c=float(c), w=int(w), report=report))
    sweep = SweepReport(cells=cells)
    with open(os.path.join(out_dir, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(sweep.to_dict(), fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("c,W,mean_final_return,stderr_final_return,num_failed\n")
        for cell in cells:
            fh.write(
                f"{g12(cell.c)},{cell.w},{g12(cell.report.mean_final_return)},"
                f"{g12(cell.report.stderr_final_return)},"
                f"{sum(r.failed for r in cell.report.per_seed)}\n"
            )
    return sweep


def _relay_phase_seed_seq(seed: int, phase: str) -> np.random.SeedSequence:
    # Phase 1 shares the standalone run's streams so its log is identical
    # to a plain run with the same seed; phase 2 gets disjoint streams.
    if phase == "phase1":
        return np.random.SeedSequence(seed)
    key = 1 if phase == "phase2_coi" else 2
    return np.random.SeedSequence(seed, spawn_key=(key,))


def run_relay_experiment(config: ExperimentConfig, out_dir: str | None = None) -> list[RelayReport]:
    """Per seed: full run, then restricted reruns on the most- and
    least-selected clusters. Budget is three full runs per seed."""
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    reports: list[RelayReport] = []
    for seed in config.seeds:

        def phase_runner(subset: Sequence[HpCluster], phase: str) -> PhaseResult:
            path = os.path.join(out_dir, f"decisions_seed{seed}_{phase}.csv")
            conf_path = os.path.join(out_dir, f"confidence_seed{seed}_{phase}.csv")
            # each phase is a plain scheduler run; phase identity lives in
            # the report and the file names
            result = _run_single_seed(
                config,
                seed,
                _relay_phase_seed_seq(seed, phase),
                subset,
                "ultho",
                path,
                conf_path,
            )
            if result.failed:
                raise NonFiniteUpdateError(
                    f"{phase} failed at episode {result.failed_episode}: {result.error}"
                )
            return PhaseResult(
                phase=phase,
                clusters=tuple(c.name for c in subset),
                performance=result.final_return,
                final_counts=result.final_counts,
                log_path=path,
            )

        reports.append(run_relay(list(config.clusters), phase_runner))
    with open(os.path.join(out_dir, "relay_report.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "config": config.to_dict(),
                "per_seed": {
                    str(seed): report.to_dict()
                    for seed, report in zip(config.seeds, reports)
                },
            },
            fh,
            indent=2,
            sort_keys=True,
        )
    return reports


# -- replay ----------------------------------------------------------------


@dataclass
class ReplayVerdict:
    ok: bool
    rows: int
    mismatches: list[str]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "rows": self.rows, "mismatches": self.mismatches}


def read_decision_log(path: str) -> tuple[dict, list[DecisionLogRow]]:
    """Parse a decision CSV back into its embedded config and rows."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#config "):
        raise ValueError(f"{path}:1: missing '#config' line")
    try:
        embedded = json.loads(lines[0][len("#config ") :])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:1: bad config JSON: {exc}") from exc
    if len(lines) < 2 or lines[1] != CSV_HEADER:
        raise ValueError(f"{path}:2: unexpected header")
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        try:
            rows.append(DecisionLogRow.from_csv(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return embedded, rows


def _close(a: float, b: float, tol: float = 1e-9) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def replay_log(path: str) -> ReplayVerdict:
    """Re-simulate the scheduler from the logged utilities and check every
    logged decision and stat against the UCB argmax."""
    embedded, rows = read_decision_log(path)
    mismatches: list[str] = []
    for idx, row in enumerate(rows):
        if row.episode != idx + 1:
            mismatches.append(
                f"episode ordering broken at row {idx + 1}: logged episode {row.episode}"
            )
    if mismatches:
        return ReplayVerdict(ok=False, rows=len(rows), mismatches=mismatches)

    method = embedded.get("method", "")
    if method in ("ultho", "relay"):
        clusters = build_clusters(embedded["clusters"])
        scheduler = new_scheduler(
            clusters,
            SchedulerConfig(
                exploration_coefficient=float(embedded["c"]),
                window_capacity=int(embedded["W"]),
            ),
        )
        for row in rows:
            pre_cluster = {k: (s.utility, s.count) for k, s in scheduler.cluster_stats.items()}
            pre_hp = {k: (s.utility, s.count) for k, s in scheduler.hp_stats.items()}
            decision = scheduler.select()
            e = row.episode
            if decision.cluster_name != row.cluster:
                mismatches.append(
                    f"episode {e}: cluster logged {row.cluster!r}, replay selects {decision.cluster_name!r}"
                )
            if decision.hp_name != row.hp_name:
                mismatches.append(
                    f"episode {e}: hp_name logged {row.hp_name!r}, replay selects {decision.hp_name!r}"
                )
            if row.hp_value is None or not _close(decision.hp_value, row.hp_value):
                mismatches.append(
                    f"episode {e}: hp_value logged {row.hp_value!r}, replay selects {decision.hp_value!r}"
                )
            cu, cn = pre_cluster.get(row.cluster, (None, None))
            hu, hn = pre_hp.get((row.cluster, row.hp_name), (None, None))
            checks = [
                ("cluster_U", row.cluster_u, cu),
                ("hp_U", row.hp_u, hu),
                (
                    "cluster_bonus",
                    row.cluster_bonus,
                    None if cu is None else decision.cluster_score - cu,
                ),
                ("hp_bonus", row.hp_bonus, None if hu is None else decision.hp_score - hu),
            ]
            for name, logged, expected in checks:
                if expected is None or logged is None or not _close(logged, expected):
                    mismatches.append(
                        f"episode {e}: {name} logged {logged!r}, replay computes {expected!r}"
                    )
            for name, logged, expected in (("cluster_N", row.cluster_n, cn), ("hp_N", row.hp_n, hn)):
                if logged != expected:
                    mismatches.append(
                        f"episode {e}: {name} logged {logged!r}, replay computes {expected!r}"
                    )
            scheduler.record(row.v_bar)
    return ReplayVerdict(ok=not mismatches, rows=len(rows), mismatches=mismatches)
