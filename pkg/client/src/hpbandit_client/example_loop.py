"""Runnable example: drive the scheduler service over the wire.

Each episode asks for a hyperparameter, "trains" a stub objective that
favors one learning-rate value, and tells the resulting utility back. The
decision log it writes uses the same CSV layout as the experiment harness
(``#config`` line, fixed header, %.12g numbers), so
``hpbandit replay --log <csv>`` verifies it.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from .client import ClientSession, connect, default_server_command

CSV_HEADER = (
    "episode,method,cluster,hp_name,hp_value,v_bar,mean_episode_return,"
    "cluster_U,cluster_N,hp_U,hp_N,cluster_bonus,hp_bonus,return_is_carried"
)

EXAMPLE_CONFIG = {
    "c": 1.0,
    "W": 10,
    "clusters": [{"name": "lr", "values": [0.1, 0.01, 0.001]}],
}

FAVORED_VALUE = 0.01


def stub_objective(value: float, episode: int) -> float:
    """Deterministic utility landscape with one clearly best value and a
    mild upward trend, standing in for a real training episode."""
    quality = 1.0 if value == FAVORED_VALUE else 0.35
    return quality + 0.1 * math.log1p(episode) / math.log1p(100)


def g12(x: float) -> str:
    return format(float(x), ".12g")


def _clusters_from_snapshot(snapshot: dict) -> list[dict]:
    clusters: dict[str, list[dict]] = {}
    order: list[str] = []
    for arm in snapshot["arms"]:
        if arm["hp_name"] is None:
            order.append(arm["cluster"])
            clusters[arm["cluster"]] = []
        else:
            clusters[arm["cluster"]].append({"name": arm["hp_name"], "value": arm["value"]})
    return [{"name": name, "members": clusters[name]} for name in order]


def _arm_stats(snapshot: dict, arm_id: str) -> tuple[float, int, float]:
    arm = next(a for a in snapshot["arms"] if a["arm"] == arm_id)
    bonus = next(r["bonus"] for r in snapshot["confidence"] if r["arm"] == arm_id)
    return arm["utility"], arm["count"], bonus


def run_example(
    episodes: int = 60,
    out_csv: str = "client_decisions.csv",
    endpoint: str | None = None,
) -> ClientSession | None:
    """Run the ask/train/tell loop and write a replayable decision CSV."""
    endpoint = endpoint or default_server_command()
    session = connect(endpoint, EXAMPLE_CONFIG)
    try:
        embedded = {
            "method": "ultho",
            "seed": 0,
            "c": EXAMPLE_CONFIG["c"],
            "W": EXAMPLE_CONFIG["W"],
            "clusters": _clusters_from_snapshot(session.snapshot()),
            "total_episodes": episodes,
        }
        rows = []
        for _ in range(episodes):
            cluster, hp_name, value = session.ask()
            episode = session.last_episode
            pre = session.snapshot()  # selection-time stats: tell not sent yet
            cluster_u, cluster_n, cluster_bonus = _arm_stats(pre, cluster)
            hp_u, hp_n, hp_bonus = _arm_stats(pre, f"{cluster}/{hp_name}")
            v_bar = stub_objective(value, episode)
            session.tell(v_bar)
            rows.append(
                ",".join(
                    [
                        str(episode),
                        "ultho",
                        cluster,
                        hp_name,
                        g12(value),
                        g12(v_bar),
                        g12(v_bar),
                        g12(cluster_u),
                        str(cluster_n),
                        g12(hp_u),
                        str(hp_n),
                        g12(cluster_bonus),
                        g12(hp_bonus),
                        "0",
                    ]
                )
            )
        with open(out_csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("#config " + json.dumps(embedded, sort_keys=True) + "\n")
            fh.write(CSV_HEADER + "\n")
            fh.write("\n".join(rows) + "\n")
        session.shutdown()
    finally:
        session.close()
    return None


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="hpbandit-client-example")
    parser.add_argument("--episodes", type=int, default=60)
    parser.add_argument("--out", default="client_decisions.csv")
    parser.add_argument(
        "--endpoint",
        default=None,
        help="stdio:<command> or tcp://host:port (default: spawn the bundled service)",
    )
    args = parser.parse_args(argv)
    try:
        run_example(args.episodes, args.out, args.endpoint)
    except (ConnectionError, OSError) as exc:
        print(f"client error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.episodes} decisions to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
