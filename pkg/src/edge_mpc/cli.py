"""Command-line entry point: ``edge-mpc {simulate,serve,fly,report,config-check}``.

Exit codes: 0 success, 1 failed or aborted run, 2 invalid config or CSV
schema, 3 bind/connect failure, 4 protocol version mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, config_to_dict, load_config, shipped_configs
from .harness import TRANSIENT, SchemaError, export_report, read_report_csv, run_closed_loop, summarize
from .protocol import PROTOCOL_VERSION, ProtocolError, VersionMismatch
from .trajectories import KINDS

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_CONNECT, EXIT_VERSION = 0, 1, 2, 3, 4

log = logging.getLogger("edge_mpc")


def _setup_logging():
    level = os.environ.get("EDGE_MPC_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "trajectory", None):
        cfg = replace(cfg, trajectory=replace(cfg.trajectory, kind=args.trajectory))
    return cfg


def _print_summary(summary: dict):
    print(json.dumps(summary, indent=2))


def _write_outputs(report, cfg, out: Path, stem: str = "run"):
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = export_report(report, out / stem)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
        fh.write("\n")
    log.info("wrote %s and %s", csv_path, json_path)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    report = run_closed_loop(cfg)
    _write_outputs(report, cfg, Path(args.out))
    summary = report.summary()
    _print_summary(summary)
    return EXIT_FAILED if summary["failed"] else EXIT_OK


def cmd_serve(args) -> int:
    from .edge import ConnectionFailed, EdgeServer

    cfg = load_config(args.config)
    try:
        server = EdgeServer(cfg, args.host, args.port, args.protocol_version)
    except ConnectionFailed as exc:
        log.error("%s", exc)
        return EXIT_CONNECT
    print(f"edge listening on {args.host}:{server.port}", file=sys.stderr, flush=True)
    try:
        trace = server.serve_one(args.timeout)
    except VersionMismatch as exc:
        log.error("version mismatch: %s", exc)
        return EXIT_VERSION
    except (TimeoutError, OSError) as exc:
        log.error("no session: %s", exc)
        return EXIT_CONNECT
    except ProtocolError as exc:
        log.error("protocol error: %s", exc)
        return EXIT_FAILED
    finally:
        server.close()
    print(json.dumps({"commands": len(trace.command_seqs), "solver_errors": trace.errors}))
    return EXIT_OK


def _parse_addr(addr: str):
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host, int(port)


def cmd_fly(args) -> int:
    from .edge import ConnectionFailed, exec_context_line, fly

    cfg = _load(args)
    try:
        host, port = _parse_addr(args.addr)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        report = fly(cfg, host, port, args.protocol_version)
    except ConnectionFailed as exc:
        log.error("%s", exc)
        return EXIT_CONNECT
    except VersionMismatch as exc:
        log.error("version mismatch: %s", exc)
        return EXIT_VERSION
    except ProtocolError as exc:
        log.error("protocol error: %s", exc)
        return EXIT_FAILED
    _write_outputs(report, cfg, Path(args.out))
    summary = report.summary()
    _print_summary(summary)
    print(exec_context_line(report), file=sys.stderr)
    if report.runtime.get("aborted") or summary["failed"]:
        return EXIT_FAILED
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        columns = read_report_csv(args.input)
    except SchemaError as exc:
        log.error("schema mismatch: %s", exc)
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _print_summary(summarize(columns, args.transient))
    return EXIT_OK


def cmd_config_check(args) -> int:
    targets = args.configs or sorted(shipped_configs())
    status = EXIT_OK
    for target in targets:
        try:
            load_config(target)
        except ConfigError as exc:
            print(f"{target}: invalid: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
        except (OSError, FileNotFoundError) as exc:
            print(f"{target}: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
        else:
            print(f"{target}: ok")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edge-mpc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="in-process closed loop on a simulated clock")
    s.add_argument("--config", required=True, help="config file or bundled config name")
    s.add_argument("--out", required=True, help="output directory for run.csv/run.json")
    s.add_argument("--seed", type=int, help="override run.seed")
    s.add_argument("--trajectory", choices=KINDS, help="override trajectory.kind")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("serve", help="edge controller: accept one session on a TCP port")
    s.add_argument("--config", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=7501)
    s.add_argument("--timeout", type=float, default=None, help="seconds to wait for a session")
    s.add_argument("--protocol-version", type=int, default=PROTOCOL_VERSION, help="protocol version to announce (for skew testing)")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("fly", help="vehicle plant: connect to an edge and fly in real time")
    s.add_argument("--addr", default="127.0.0.1:7501", help="edge host:port")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--trajectory", choices=KINDS)
    s.add_argument("--protocol-version", type=int, default=PROTOCOL_VERSION, help="protocol version to announce (for skew testing)")
    s.set_defaults(func=cmd_fly)

    s = sub.add_parser("report", help="recompute the summary of a run CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--transient", type=float, default=TRANSIENT)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("config-check", help="validate config files (default: all bundled)")
    s.add_argument("configs", nargs="*")
    s.set_defaults(func=cmd_config_check)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
