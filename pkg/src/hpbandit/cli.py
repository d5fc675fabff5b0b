"""Command-line entry points.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 replay
mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    ExperimentConfig,
    replay_log,
    run_experiment,
    run_relay_experiment,
    run_sweep,
)
from .service import serve_stdio, serve_tcp

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_REPLAY_MISMATCH = 3


def _load_config(path: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_json_file(path)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise SystemExit(_fail(f"config error: {exc}", EXIT_CONFIG))


def _fail(message: str, code: int) -> int:
    print(message, file=sys.stderr)
    return code


def _csv_floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


def _csv_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    try:
        report = run_experiment(config, args.out)
    except Exception as exc:  # noqa: BLE001 - surface as runtime failure
        return _fail(f"runtime failure: {exc}", EXIT_RUNTIME)
    print(json.dumps(report.to_dict()["aggregate"], sort_keys=True))
    if report.any_failed:
        return _fail("one or more seeds aborted", EXIT_RUNTIME)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    try:
        cs = _csv_floats(args.c)
        ws = _csv_ints(args.w)
    except ValueError as exc:
        return _fail(f"config error: bad grid: {exc}", EXIT_CONFIG)
    if not cs or not ws:
        return _fail("config error: empty sweep grid", EXIT_CONFIG)
    try:
        sweep = run_sweep(config, cs, ws, args.out)
    except Exception as exc:  # noqa: BLE001
        return _fail(f"runtime failure: {exc}", EXIT_RUNTIME)
    print(json.dumps(sweep.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_relay(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if config.method != "relay":
        return _fail("config error: relay command requires method 'relay'", EXIT_CONFIG)
    try:
        reports = run_relay_experiment(config, args.out)
    except Exception as exc:  # noqa: BLE001
        return _fail(f"runtime failure: {exc}", EXIT_RUNTIME)
    for seed, report in zip(config.seeds, reports):
        doc = report.to_dict()
        print(
            json.dumps(
                {
                    "seed": seed,
                    "coi": doc["plan"]["coi"],
                    "noi": doc["plan"]["noi"],
                    "winner": doc["winner"]["clusters"],
                    "performance": doc["winner"]["performance"],
                },
                sort_keys=True,
            )
        )
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        verdict = replay_log(args.log)
    except (OSError, ValueError) as exc:
        return _fail(f"replay parse error: {exc}", EXIT_CONFIG)
    print(json.dumps(verdict.to_dict(), sort_keys=True))
    return EXIT_OK if verdict.ok else EXIT_REPLAY_MISMATCH


def cmd_serve(args: argparse.Namespace) -> int:
    if args.stdio:
        serve_stdio()
        return EXIT_OK
    if args.port is None:
        return _fail("config error: serve needs --stdio or --port", EXIT_CONFIG)
    server = serve_tcp(args.host, args.port)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpbandit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (defaults to config out_dir)")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid over exploration coefficient and window size")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--c", default="1,5", help="comma-separated coefficients")
    p_sweep.add_argument("--w", default="10,50,100", help="comma-separated window sizes")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_relay = sub.add_parser("relay", help="full run plus restricted reruns")
    p_relay.add_argument("--config", required=True)
    p_relay.add_argument("--out", default=None)
    p_relay.set_defaults(fn=cmd_relay)

    p_replay = sub.add_parser("replay", help="verify a decision CSV against the scheduler")
    p_replay.add_argument("--log", required=True)
    p_replay.set_defaults(fn=cmd_replay)

    p_serve = sub.add_parser("serve", help="ask/tell service over stdio or TCP")
    p_serve.add_argument("--stdio", action="store_true")
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
