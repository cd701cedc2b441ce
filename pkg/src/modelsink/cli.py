"""modelsink command line.

    modelsink validate <scenario>
    modelsink run <scenario> --seed N --out DIR
    modelsink bench --clients N --poll 1s --duration 300s --reps 10 --out DIR
    modelsink hub --config hub.toml
    modelsink agent --config agent.toml
    modelsink plot <report.json> --out DIR
    modelsink admin HOST:PORT {stats|reload-mapping}

Exit codes: 0 ok, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import signal
import socket
import sys
from pathlib import Path

logger = logging.getLogger(__name__)


def parse_duration_ms(text: str) -> int:
    """Accepts '100ms', '1s', '5s', '300s', '2m', or a bare millisecond count."""
    m = re.fullmatch(r"(\d+)(ms|s|m)?", text.strip())
    if m is None:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}")
    value = int(m.group(1))
    unit = m.group(2) or "ms"
    return value * {"ms": 1, "s": 1000, "m": 60000}[unit]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modelsink",
        description="Synchronization middleware for distributed statechart models")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file and its referenced configs")
    p.add_argument("scenario")

    p = sub.add_parser("run", help="execute a scenario and write its metrics report")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")

    p = sub.add_parser("bench", help="synthetic load benchmark over loopback")
    p.add_argument("--clients", type=int, default=10)
    p.add_argument("--poll", type=parse_duration_ms, default="1s")
    p.add_argument("--duration", type=parse_duration_ms, default="300s")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--out", default="out")

    p = sub.add_parser("hub", help="run the hub server")
    p.add_argument("--config", required=True)

    p = sub.add_parser("agent", help="run a node agent with its local API")
    p.add_argument("--config", required=True)

    p = sub.add_parser("plot", help="emit plot-ready CSV views from a report")
    p.add_argument("report")
    p.add_argument("--out", default=None)

    p = sub.add_parser("admin", help="send one admin command to a running hub")
    p.add_argument("address", help="host:port of the hub admin channel")
    p.add_argument("admin_command", choices=["stats", "reload-mapping"])

    return parser


def cmd_validate(args) -> int:
    from .scenario import ScenarioError, load_scenario, validate_scenario
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}")
        return 1
    loaded = validate_scenario(scenario)
    print(loaded.report.summary())
    return 0 if loaded.report.ok else 1


def cmd_run(args) -> int:
    from .realrun import run_real
    from .report import write_report
    from .scenario import ScenarioError, load_scenario
    from .sim import run_simulated
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}")
        return 1
    try:
        if scenario.clock == "real":
            report = run_real(scenario, seed=args.seed)
        else:
            report = run_simulated(scenario, seed=args.seed)
    except ScenarioError as exc:
        print(f"error: {exc}")
        return 1
    path = write_report(report, args.out)
    lat = report["latency_ms"]
    print(f"report: {path}")
    print(f"latency ms: count={lat['count']} p50={lat['p50']} p95={lat['p95']} max={lat['max']}")
    print(f"fallbacks: {len(report['fallbacks'])}")
    print(f"conservation balanced: {report['conservation']['balanced']}")
    if report["meta"]["incomplete"]:
        print(f"INCOMPLETE: {report['meta']['error']}")
        return 2
    return 0


def cmd_bench(args) -> int:
    from .bench import run_bench
    try:
        report = run_bench(args.clients, args.poll, args.duration, args.reps,
                           progress=lambda msg: print(f"bench: {msg}", flush=True))
    except ValueError as exc:
        print(f"error: {exc}")
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    agg = report["aggregate"]
    print(f"report: {path}")
    print(f"throughput: {agg['throughput_mean_eps']} events/s "
          f"(rel std {agg['throughput_rel_std_pct']}%)")
    print(f"max queue depth: {agg['max_queue_depth']}")
    print(f"conserved: {agg['all_conserved']}  clean shutdown: {agg['all_clean_shutdown']}")
    return 0 if agg["all_conserved"] and agg["all_clean_shutdown"] else 2


def cmd_hub(args) -> int:
    from .config import load_hub_config
    from .hub import BindError, ConfigError, start
    from .mapping import MappingConfigError
    try:
        config = load_hub_config(args.config)
        server = start(config)
    except (ConfigError, MappingConfigError, BindError, OSError) as exc:
        print(f"error: {exc}")
        return 1
    print(f"hub listening: push={config.listen_host}:{server.push_port} "
          f"poll={config.listen_host}:{server.poll_port} "
          f"admin=127.0.0.1:{server.admin_port}", flush=True)
    try:
        signal.pause()
    except (KeyboardInterrupt, AttributeError):
        pass
    finally:
        server.stop()
    return 0


def cmd_agent(args) -> int:
    import uvicorn

    from .agent import Agent, ConfigError
    from .api import create_agent_api
    from .hub import ConfigError as HubConfigError
    from .config import load_agent_config
    from .modelfile import ModelFileError
    try:
        config = load_agent_config(args.config)
        probe = socket.socket()
        try:
            probe.bind((config.local_api_host, config.local_api_port))
        except OSError as exc:
            raise ConfigError(
                f"local API port {config.local_api_port} unavailable: {exc}") from exc
        finally:
            probe.close()
        agent = Agent(config)
    except (ConfigError, HubConfigError, ModelFileError, OSError) as exc:
        print(f"error: {exc}")
        return 1
    agent.start()
    app = create_agent_api(agent.core, raise_event=agent.on_local_event)
    print(f"agent {config.name!r}: api on "
          f"http://{config.local_api_host}:{config.local_api_port}", flush=True)
    try:
        uvicorn.run(app, host=config.local_api_host, port=config.local_api_port,
                    log_level="warning")
    finally:
        agent.stop()
    return 0


def cmd_plot(args) -> int:
    from .report import write_csv_views
    path = Path(args.report)
    try:
        report = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}")
        return 1
    out = Path(args.out) if args.out else path.parent
    write_csv_views(report, out)
    print(f"csv views written to {out}")
    return 0


def cmd_admin(args) -> int:
    host, _, port_text = args.address.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        print(f"error: bad address {args.address!r}")
        return 1
    try:
        with socket.create_connection((host or "127.0.0.1", port), timeout=5) as sock:
            sock.sendall(args.admin_command.encode() + b"\n")
            chunks = []
            while True:
                chunk = sock.recv(4096)
                if not chunk:
                    break
                chunks.append(chunk)
    except OSError as exc:
        print(f"error: {exc}")
        return 2
    sys.stdout.write(b"".join(chunks).decode("utf-8", "replace"))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handlers = {
        "validate": cmd_validate,
        "run": cmd_run,
        "bench": cmd_bench,
        "hub": cmd_hub,
        "agent": cmd_agent,
        "plot": cmd_plot,
        "admin": cmd_admin,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
