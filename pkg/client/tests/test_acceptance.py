"""Acceptance: wire-protocol equivalence with the in-process scheduler."""

from __future__ import annotations

import json
import subprocess
import sys

import numpy as np

# in-process oracle for the equivalence check (test dependency only;
# the client itself never imports the scheduler package)
from hpbandit.bandit import SchedulerConfig, build_clusters, new_scheduler
from hpbandit_client import connect, default_server_command
from hpbandit_client.example_loop import FAVORED_VALUE, run_example

CONFIG = {
    "c": 1.0,
    "W": 10,
    "clusters": [
        {"name": "lr", "values": [0.00025, 0.0005, 0.001]},
        {"name": "bs", "values": [512, 1024, 2048]},
        {"name": "vlc", "values": [0.25, 0.5, 1.0]},
    ],
}


def report(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" -- {detail}"
    print(line, flush=True)
    assert ok, line


def test_acceptance_protocol_equivalence():
    steps = 1000
    rng = np.random.default_rng(17)
    utilities = [float(v) for v in rng.normal(size=steps)]

    session = connect(default_server_command(), CONFIG)
    wire = []
    try:
        for k, v in enumerate(utilities):
            # inject a malformed line midway: the session must survive it
            if k == steps // 2:
                bad = session.raw_request("{this is not json}")
                assert bad["ok"] is False
            cluster, hp, value = session.ask()
            wire.append((cluster, hp, value))
            session.tell(v)
        session.shutdown()
    finally:
        session.close()

    state = new_scheduler(
        build_clusters(CONFIG["clusters"]),
        SchedulerConfig(exploration_coefficient=CONFIG["c"], window_capacity=CONFIG["W"]),
    )
    local = []
    for v in utilities:
        decision = state.select()
        local.append((decision.cluster_name, decision.hp_name, decision.hp_value))
        state.record(v)

    matches = sum(a == b for a, b in zip(wire, local))
    report(
        "protocol equivalence",
        wire == local,
        f"{matches}/{steps} identical decisions; malformed injection survived",
    )


def test_example_loop_writes_replayable_csv(tmp_path):
    out = tmp_path / "client_decisions.csv"
    episodes = 80
    run_example(episodes=episodes, out_csv=str(out))

    proc = subprocess.run(
        [sys.executable, "-m", "hpbandit", "replay", "--log", str(out)],
        capture_output=True,
        text=True,
    )
    verdict = json.loads(proc.stdout)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert verdict["ok"] and verdict["rows"] == episodes

    # the stub objective favors one value; its share must beat uniform
    lines = out.read_text().splitlines()[2:]
    favored = sum(
        1 for line in lines if float(line.split(",")[4]) == FAVORED_VALUE
    )
    share = favored / episodes
    report(
        "example loop replay + favored-arm share",
        share > 1 / 3,
        f"replay clean over {episodes} rows; favored share {share:.1%}",
    )


def test_example_cli_exits_zero(tmp_path):
    out = tmp_path / "cli.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "hpbandit_client.example_loop", "--episodes", "15", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
    assert "wrote 15 decisions" in proc.stdout
