"""Command line entry point: one executable, five subcommands.

``master``, ``actor``, ``user`` and ``remotelogger`` launch a single
component over real TCP and run it until interrupted (the ``user``
subcommand instead exits once its submissions resolve).  ``scenario``
runs a simulated cluster from a bundled name or a JSON file and prints
the report.

Exit codes follow the usual convention: 0 on success, 1 when a runtime
step fails (a port cannot be bound, a submission fails), 2 on usage
errors (unknown flags, unknown scheduler or application names, malformed
scenario files).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace

from . import config
from .actor import Actor, InProcessLauncher
from .appmodel import AppModelError, build_application
from .harness import (
    ScenarioError,
    bundled_scenario,
    bundled_scenario_names,
    load_scenario,
    run_scenario,
)
from .master import Master, MasterConfig
from .profiling import sample_host_profile
from .protocol import ComponentRole, Endpoint, make_identity
from .remotelogger import FileLogStore, RemoteLogger
from .scheduler import SCHEDULER_NAMES, init_scheduler_by_name
from .transport import BindError, RealRuntime, Runtime
from .user import User

LOCALHOST = "127.0.0.1"

# Flags whose spelling is part of the public contract, grouped by the
# role subcommands that accept them.
_ROLE_FLAGS = {
    "remotelogger": (
        "bindIP", "bindPort", "containerName", "logPath", "configPath",
    ),
    "master": (
        "bindIP", "bindPort", "remoteLoggerIP", "remoteLoggerPort",
        "schedulerName", "containerName", "configPath",
    ),
    "actor": (
        "bindIP", "bindPort", "masterIP", "masterPort",
        "remoteLoggerIP", "remoteLoggerPort", "containerName", "configPath",
    ),
    "user": (
        "bindIP", "bindPort", "masterIP", "masterPort",
        "remoteLoggerIP", "remoteLoggerPort", "applicationName",
        "applicationLabel", "videoPath", "containerName", "configPath",
    ),
}

_ROLE_NAMES = {
    "remotelogger": "RemoteLogger",
    "master": "Master",
    "actor": "Actor",
    "user": "User",
}


@dataclass
class LaunchConfig:
    """Everything a component launch needs, resolved from flags."""

    bind_ip: str = LOCALHOST
    bind_port: int | None = None
    master_ip: str = LOCALHOST
    master_port: int = 5001
    remote_logger_ip: str | None = None
    remote_logger_port: int = 5000
    scheduler_name: str = "RankingBased"
    application_name: str = ""
    application_label: str = ""
    container_name: str = ""
    log_path: str = ""
    config_path: str = ""
    records: list = field(default_factory=list)

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "LaunchConfig":
        cfg = cls()
        for attr, flag in (
            ("bind_ip", "bindIP"),
            ("bind_port", "bindPort"),
            ("master_ip", "masterIP"),
            ("master_port", "masterPort"),
            ("remote_logger_ip", "remoteLoggerIP"),
            ("remote_logger_port", "remoteLoggerPort"),
            ("scheduler_name", "schedulerName"),
            ("application_name", "applicationName"),
            ("application_label", "applicationLabel"),
            ("container_name", "containerName"),
            ("log_path", "logPath"),
            ("config_path", "configPath"),
        ):
            value = getattr(ns, flag, None)
            if value is not None:
                setattr(cfg, attr, value)
        return cfg


def _number(text: str):
    """Parse a numeric flag the way the interactive prompts do."""
    try:
        return int(text)
    except ValueError:
        return float(text)


def _add_role_flags(sub: argparse.ArgumentParser, role_cmd: str) -> None:
    flags = _ROLE_FLAGS[role_cmd]
    if "bindIP" in flags:
        sub.add_argument("--bindIP", default=LOCALHOST,
                         help="address to listen on (default: %(default)s)")
    if "bindPort" in flags:
        sub.add_argument("--bindPort", type=int, default=None,
                         help="listen port; default picks a free port in "
                              "this role's range")
    if "masterIP" in flags:
        sub.add_argument("--masterIP", default=LOCALHOST,
                         help="address of the master to register with")
    if "masterPort" in flags:
        sub.add_argument("--masterPort", type=int, default=5001,
                         help="port of the master to register with")
    if "remoteLoggerIP" in flags:
        sub.add_argument("--remoteLoggerIP", default=None,
                         help="address of the remote logger (optional)")
    if "remoteLoggerPort" in flags:
        sub.add_argument("--remoteLoggerPort", type=int, default=5000,
                         help="port of the remote logger")
    if "schedulerName" in flags:
        sub.add_argument("--schedulerName", default="RankingBased",
                         help="placement policy; one of: "
                              + ", ".join(SCHEDULER_NAMES))
    if "applicationName" in flags:
        sub.add_argument("--applicationName", default=None,
                         help="application to request, e.g. "
                              "NaiveFormulaParallelized or GameOfLife 0")
    if "applicationLabel" in flags:
        sub.add_argument("--applicationLabel", default="",
                         help="free-form label attached to the request")
    if "videoPath" in flags:
        sub.add_argument("--videoPath", default=None,
                         help="input video for video applications "
                              "(accepted for fidelity; not supported)")
    if "containerName" in flags:
        sub.add_argument("--containerName", default="",
                         help="label stored in the component's name field")
    if "logPath" in flags:
        sub.add_argument("--logPath", default="",
                         help="persist logs to this file (one JSON document "
                              "per line); default keeps them in memory")
    if "configPath" in flags:
        sub.add_argument("--configPath", default="",
                         help="JSON file with scheduler parameters "
                              "(populationSize, generations, crossoverRate, "
                              "mutationRate, seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fogkit",
        description="Launch orchestration components or run simulated "
                    "cluster scenarios.",
    )
    subs = parser.add_subparsers(dest="command", metavar="command")

    for role_cmd, role_name in _ROLE_NAMES.items():
        sub = subs.add_parser(
            role_cmd, help=f"run a {role_name} component over TCP"
        )
        _add_role_flags(sub, role_cmd)
        if role_cmd == "user":
            sub.add_argument(
                "--inputs", nargs=3, type=_number, default=None,
                metavar=("A", "B", "C"),
                help="submit one record non-interactively instead of "
                     "prompting for a, b and c",
            )

    scenario = subs.add_parser(
        "scenario", help="run a simulated cluster and print its report"
    )
    scenario.add_argument(
        "scenario",
        help="bundled scenario name or path to a scenario JSON file; "
             "bundled: " + ", ".join(bundled_scenario_names()),
    )
    scenario.add_argument(
        "--output", default=None,
        help="write the report JSON here instead of stdout",
    )
    return parser


def _load_scheduler_params(path: str) -> dict:
    """Read NSGA-II parameters from a JSON config file."""
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return obj


def launch_component(
    role_name: str,
    cfg: LaunchConfig,
    runtime: Runtime,
    env: dict | None = None,
):
    """Construct, bind and start one component without blocking.

    The default port is the first free one inside the role's range, so a
    launch with no flags always lands where the port plan says it must.
    Raises :class:`BindError` when no usable port exists.
    """
    port_range = config.port_range_for(role_name, env)
    port = cfg.bind_port
    if port is None:
        port = runtime.find_free_port(cfg.bind_ip, port_range)
    endpoint = Endpoint(cfg.bind_ip, port)

    remote_logger = None
    if cfg.remote_logger_ip:
        remote_logger = make_identity(
            ComponentRole.RemoteLogger,
            Endpoint(cfg.remote_logger_ip, cfg.remote_logger_port),
        )
    master = make_identity(
        ComponentRole.Master, Endpoint(cfg.master_ip, cfg.master_port)
    )
    scheduler_params = _load_scheduler_params(cfg.config_path)

    if role_name == "RemoteLogger":
        store = FileLogStore(cfg.log_path) if cfg.log_path else None
        component = RemoteLogger(runtime, endpoint, store=store, env=env)
    elif role_name == "Master":
        component = Master(
            runtime,
            endpoint,
            MasterConfig(
                scheduler_name=cfg.scheduler_name,
                scheduler_params=scheduler_params,
                remote_logger=remote_logger,
                profile_source=sample_host_profile,
            ),
            env=env,
        )
    elif role_name == "Actor":
        component = Actor(
            runtime,
            endpoint,
            master=master,
            launcher=InProcessLauncher(lambda ip: runtime, env=env),
            profile_source=sample_host_profile,
            remote_logger=remote_logger,
            env=env,
        )
    elif role_name == "User":
        component = User(
            runtime,
            endpoint,
            master=master,
            application_name=cfg.application_name,
            label=cfg.application_label,
            records=list(cfg.records),
            env=env,
        )
    else:
        raise ValueError(f"unknown role {role_name!r}")

    if cfg.container_name:
        component.identity = replace(component.identity, name=cfg.container_name)
    component.start()
    return component


def _serve_forever(component, runtime: RealRuntime) -> int:
    try:
        while True:
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass
    finally:
        component.stop()
        runtime.close()
    return 0


def _collect_user_records(ns: argparse.Namespace, app_name: str) -> list:
    """One record per run: from --inputs, from prompts, or empty."""
    if ns.inputs is not None:
        a, b, c = ns.inputs
        return [{"a": a, "b": b, "c": c}]
    if app_name.startswith("NaiveFormula"):
        values = {}
        for key in ("a", "b", "c"):
            print(f"{key} = ", end="", flush=True)
            values[key] = _number(input())
        return [values]
    # Grid applications seed their own first generation.
    return [{}]


def _wait_for_user(user: User, expected: int) -> int:
    """Block until every submission resolves; 0 iff all completed."""
    deadline = time.monotonic() + (user.timeout_ms / 1000.0) * expected + 10.0
    while time.monotonic() < deadline:
        if user.state == "failed":
            break
        if len(user.results) >= expected:
            break
        time.sleep(0.02)
    for seq, result in enumerate(user.results, 1):
        status = "complete" if result.completed else f"partial: {result.reason}"
        print(f"submission {seq} ({status})")
        for key in sorted(result.payload):
            print(f"    {key} = {result.payload[key]}")
    if user.state == "failed":
        print(f"request failed: {user.failure_reason}", file=sys.stderr)
        return 1
    if len(user.results) < expected or user.failed_results:
        return 1
    return 0


def _run_role_command(parser: argparse.ArgumentParser,
                      ns: argparse.Namespace) -> int:
    role_name = _ROLE_NAMES[ns.command]
    cfg = LaunchConfig.from_args(ns)

    # Usage errors (exit 2) are caught before any socket is opened.
    if role_name == "Master":
        policy = init_scheduler_by_name(cfg.scheduler_name)
        if policy is None:
            parser.error(
                f"unknown scheduler {cfg.scheduler_name!r}; "
                "choose from: " + ", ".join(SCHEDULER_NAMES)
            )
        if not policy.available:
            parser.error(
                f"scheduler {cfg.scheduler_name!r} is recognized but not "
                "implemented in this build"
            )
    if role_name == "User":
        if getattr(ns, "videoPath", None):
            parser.error(
                "--videoPath: application out of scope "
                "(the video pipeline is not part of this build)"
            )
        if not cfg.application_name:
            parser.error("user requires --applicationName")
        try:
            build_application(cfg.application_name, label=cfg.application_label)
        except AppModelError as exc:
            parser.error(str(exc))
        try:
            cfg.records = _collect_user_records(ns, cfg.application_name)
        except ValueError:
            parser.error("inputs a, b and c must be numbers")
    if cfg.config_path:
        try:
            _load_scheduler_params(cfg.config_path)
        except (OSError, ValueError) as exc:
            parser.error(f"--configPath: {exc}")

    runtime = RealRuntime()
    try:
        try:
            component = launch_component(role_name, cfg, runtime)
        except AppModelError as exc:
            parser.error(str(exc))
        except BindError as exc:
            print(f"cannot start {role_name}: {exc}", file=sys.stderr)
            return 1
        if role_name == "User":
            code = _wait_for_user(component, expected=len(cfg.records))
            component.stop()
            return code
        return _serve_forever(component, runtime)
    finally:
        runtime.close()


_EMPTY_REPORT_KEYS = {
    "stoppedReason": "drained",
    "finalTimeMs": 0.0,
    "delivered": 0,
    "traceCounts": {},
    "users": [],
    "decisions": [],
    "assertions": [],
    "status": "passed",
}


def _run_scenario_command(parser: argparse.ArgumentParser,
                          ns: argparse.Namespace) -> int:
    target = ns.scenario
    try:
        if os.path.exists(target) or target.endswith(".json") or os.sep in target:
            scenario = load_scenario(target)
        else:
            scenario = bundled_scenario(target)
        if not isinstance(scenario, dict):
            raise ScenarioError(f"{target}: expected a JSON object")
    except (OSError, json.JSONDecodeError, ScenarioError) as exc:
        parser.error(str(exc))

    if not scenario.get("components"):
        report = {"name": scenario.get("name", ""), **_EMPTY_REPORT_KEYS}
    else:
        try:
            report, _ = run_scenario(scenario)
        except ScenarioError as exc:
            parser.error(str(exc))

    text = json.dumps(report, indent=2, sort_keys=True)
    if ns.output:
        with open(ns.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0 if report["status"] == "passed" else 1


def main(argv: list | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_help()
        return 2
    logging.basicConfig(
        level=logging.WARNING if ns.command == "scenario" else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if ns.command == "scenario":
        return _run_scenario_command(parser, ns)
    return _run_role_command(parser, ns)


if __name__ == "__main__":
    sys.exit(main())
