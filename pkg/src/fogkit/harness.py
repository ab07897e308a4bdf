"""Scenario harness: whole clusters inside the deterministic simulation.

A scenario is a JSON-friendly description of hosts, link latencies,
components, a timed workload and post-run assertions.  The harness
builds every component on one :class:`~fogkit.transport.SimNetwork`,
runs the event heap to completion, and produces a report with the
message trace, per-user outcomes and assertion verdicts.  The same
scenario always yields the same trace: all randomness is derived from
the scenario seed.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

from .actor import Actor, InProcessLauncher
from .master import Master, MasterConfig
from .profiling import HostProfile
from .protocol import ComponentIdentity, ComponentRole, Endpoint
from .remotelogger import FileLogStore, MemoryLogStore, RemoteLogger
from .transport import SimNetwork, TraceRecord
from .user import User
from . import config


class ScenarioError(ValueError):
    """The scenario description is malformed."""


def derive_seed(scenario_seed: int, component_id: str) -> int:
    """Stable per-component seed; never Python's salted ``hash``."""
    return zlib.crc32(f"{scenario_seed}:{component_id}".encode()) & 0x7FFFFFFF


def host_profile_from_obj(obj: dict) -> HostProfile:
    return HostProfile(
        cores=int(obj.get("cores", 4)),
        frequency_mhz=float(obj.get("frequencyMhz", 2000.0)),
        cpu_utilization=float(obj.get("cpuUtilization", 0.1)),
        cpu_utilization_peak=float(obj.get("cpuUtilizationPeak", 1.0)),
        memory_maximum=int(obj.get("memoryMaximum", 8 * 1024**3)),
        memory_utilization=float(obj.get("memoryUtilization", 0.2)),
        memory_utilization_peak=float(obj.get("memoryUtilizationPeak", 1.0)),
    )


# -- trace matching ----------------------------------------------------

def _matches(record: TraceRecord, step) -> bool:
    if isinstance(step, dict):
        checks = (
            ("type", record.type),
            ("subType", record.sub_type),
            ("subSubType", record.sub_sub_type),
            ("source", record.source),
            ("destination", record.destination),
        )
        return all(
            step.get(key, "*") in ("*", value) for key, value in checks
        )
    # sequence form: [type, subType] or [type, subType, subSubType]
    step = tuple(step)
    want = (*step, "*")[:3]
    have = (record.type, record.sub_type, record.sub_sub_type)
    return all(w in ("*", h) for w, h in zip(want, have))


def find_subsequence(trace, pattern) -> bool:
    """True when the pattern's steps occur in order (gaps allowed)."""
    position = 0
    for record in trace:
        if position == len(pattern):
            break
        if _matches(record, pattern[position]):
            position += 1
    return position == len(pattern)


def count_kind(trace, type_: str, sub_type: str = "*", sub_sub_type: str = "*") -> int:
    return sum(
        1 for r in trace if _matches(r, [type_, sub_type, sub_sub_type])
    )


# -- cluster -----------------------------------------------------------

@dataclass
class _ComponentEntry:
    component_id: str
    role: str
    host: str
    component: object
    start_at_ms: float = 0.0


@dataclass
class Cluster:
    """A built scenario: the network plus every component, by id."""

    scenario: dict
    network: SimNetwork
    host_ips: dict
    entries: dict = field(default_factory=dict)
    launcher: InProcessLauncher | None = None
    _ran: bool = False

    def __getitem__(self, component_id: str):
        return self.entries[component_id].component

    def by_role(self, role: str) -> list:
        return [
            entry.component
            for entry in self.entries.values()
            if entry.role == role
        ]

    @property
    def users(self) -> list:
        return self.by_role("User")

    @property
    def masters(self) -> list:
        return self.by_role("Master")

    @property
    def actors(self) -> list:
        return self.by_role("Actor")

    @property
    def trace(self) -> list:
        return self.network.trace

    def run(self) -> dict:
        if self._ran:
            raise ScenarioError("a cluster can only run once")
        self._ran = True
        self.network.run()
        return self.report()

    # -- reporting -----------------------------------------------------

    def report(self) -> dict:
        counts: dict = {}
        for record in self.network.trace:
            key = "/".join(k for k in record.kind if k)
            counts[key] = counts.get(key, 0) + 1
        users = []
        for component_id, entry in self.entries.items():
            if entry.role != "User":
                continue
            user = entry.component
            users.append(
                {
                    "id": component_id,
                    "state": user.state,
                    "completed": len(user.completed_results),
                    "failed": len(user.failed_results),
                    "redirections": user.redirections,
                    "responseTime": {
                        "count": user.stats.count,
                        "meanMs": user.stats.mean_ms,
                        "lastMs": user.stats.last_ms,
                    },
                }
            )
        decisions = []
        for component_id, entry in self.entries.items():
            if entry.role != "Master":
                continue
            for session in entry.component.users.values():
                if session.decision is None:
                    continue
                decisions.append(
                    {
                        "master": component_id,
                        "user": session.user_id,
                        "scheduler": session.decision.scheduler,
                        "assignment": dict(session.decision.assignment),
                    }
                )
        verdicts = [
            self._check_assertion(a) for a in self.scenario.get("assertions", [])
        ]
        return {
            "name": self.scenario.get("name", ""),
            "stoppedReason": self.network.stopped_reason,
            "finalTimeMs": self.network.clock.now_ms(),
            "delivered": self.network.delivered_count,
            "traceCounts": dict(sorted(counts.items())),
            "users": users,
            "decisions": decisions,
            "assertions": verdicts,
            "status": "passed" if all(v["passed"] for v in verdicts) else "failed",
        }

    def _check_assertion(self, assertion: dict) -> dict:
        kind = assertion.get("kind")
        if kind == "sequence":
            passed = find_subsequence(self.network.trace, assertion["pattern"])
        elif kind == "count":
            n = count_kind(
                self.network.trace,
                assertion.get("type", "*"),
                assertion.get("subType", "*"),
                assertion.get("subSubType", "*"),
            )
            passed = assertion.get("min", 0) <= n <= assertion.get("max", n)
        elif kind == "userCompleted":
            user = self[assertion["user"]]
            passed = len(user.completed_results) >= assertion.get("atLeast", 1)
        else:
            raise ScenarioError(f"unknown assertion kind {kind!r}")
        return {**assertion, "passed": passed}


def _auto_id(role: str, index: int) -> str:
    return f"{role[0].lower()}{role[1:]}{index}"


def build_cluster(scenario: dict) -> Cluster:
    """Construct every host, link and component a scenario describes."""
    hosts = scenario.get("hosts")
    if not hosts:
        raise ScenarioError("scenario needs at least one host")
    host_ips = {name: f"192.0.0.{i + 1}" for i, name in enumerate(hosts)}
    profiles = {name: host_profile_from_obj(obj) for name, obj in hosts.items()}

    links = scenario.get("links", {})
    network = SimNetwork(
        default_latency_ms=float(links.get("defaultLatencyMs", 1.0)),
        horizon_ms=float(scenario.get("durationMs", config.SIM_HORIZON_MS)),
        event_budget=int(scenario.get("eventBudget", config.SIM_EVENT_BUDGET)),
    )
    for pair in links.get("pairs", []):
        network.set_latency(
            host_ips[pair["a"]], host_ips[pair["b"]], float(pair["latencyMs"])
        )

    cluster = Cluster(scenario=scenario, network=network, host_ips=host_ips)
    cluster.launcher = InProcessLauncher(network.runtime_for_host)
    seed = int(scenario.get("seed", 0))

    specs = scenario.get("components", [])
    role_counts: dict = {}
    parsed = []
    endpoints: dict = {}
    used_ports: set = set()
    for spec in specs:
        role = spec.get("role")
        if role not in ("RemoteLogger", "Master", "Actor", "User"):
            raise ScenarioError(f"unsupported component role {role!r}")
        index = role_counts.get(role, 0)
        role_counts[role] = index + 1
        component_id = spec.get("id", _auto_id(role, index))
        if component_id in cluster.entries:
            raise ScenarioError(f"duplicate component id {component_id!r}")
        host = spec.get("host")
        if host not in host_ips:
            raise ScenarioError(f"{component_id}: unknown host {host!r}")
        parsed.append((component_id, role, host, spec))
        cluster.entries[component_id] = _ComponentEntry(
            component_id, role, host, None
        )
        # Reserve every endpoint up front so components may refer to one
        # another regardless of construction order.
        ip = host_ips[host]
        for port in config.port_range_for(role):
            if (ip, port) not in used_ports:
                used_ports.add((ip, port))
                endpoints[component_id] = Endpoint(ip, port)
                break
        else:
            raise ScenarioError(f"no free port for {component_id} on {host}")

    def identity_of(component_id: str) -> ComponentIdentity:
        entry = cluster.entries.get(component_id)
        if entry is None:
            raise ScenarioError(f"unknown component reference {component_id!r}")
        if entry.component is not None:
            return entry.component.identity
        from .protocol import make_identity

        return make_identity(
            ComponentRole(entry.role), endpoints[component_id]
        )

    def first_id(role: str) -> str | None:
        for component_id, entry in cluster.entries.items():
            if entry.role == role:
                return component_id
        return None

    # Build in dependency order: logger, masters, actors, users.
    build_order = sorted(
        parsed,
        key=lambda item: ("RemoteLogger", "Master", "Actor", "User").index(item[1]),
    )
    remote_logger_id = first_id("RemoteLogger")
    for component_id, role, host, spec in build_order:
        ip = host_ips[host]
        runtime = network.runtime_for_host(ip)
        endpoint = endpoints[component_id]
        remote_logger = (
            identity_of(remote_logger_id)
            if remote_logger_id is not None and role != "RemoteLogger"
            else None
        )
        if role == "RemoteLogger":
            store = (
                FileLogStore(spec["storePath"])
                if spec.get("storePath")
                else MemoryLogStore()
            )
            component = RemoteLogger(runtime, endpoint, store=store)
        elif role == "Master":
            params = dict(spec.get("schedulerParams", {}))
            params.setdefault("seed", derive_seed(seed, component_id))
            cfg = MasterConfig(
                scheduler_name=spec.get("schedulerName", "RankingBased"),
                scheduler_params=params,
                queue_capacity=int(
                    spec.get("queueCapacity", config.PLACEMENT_QUEUE_CAPACITY)
                ),
                cool_off_ms=float(spec.get("coolOffMs", config.COOL_OFF_MS)),
                cpu_threshold=float(
                    spec.get("cpuThreshold", config.CPU_UTILIZATION_THRESHOLD)
                ),
                policy_seed=derive_seed(seed, component_id),
                remote_logger=remote_logger,
                profile_source=profiles[host],
                discovery_targets=tuple(
                    identity_of(t).addr for t in spec.get("discoveryTargets", [])
                ),
                discovery_interval_ms=float(
                    spec.get("discoveryIntervalMs", config.DISCOVERY_INTERVAL_MS)
                ),
            )
            component = Master(runtime, endpoint, cfg)
        elif role == "Actor":
            master_id = spec.get("master", first_id("Master"))
            component = Actor(
                runtime,
                endpoint,
                master=identity_of(master_id),
                launcher=cluster.launcher,
                profile_source=profiles[host],
                remote_logger=remote_logger,
            )
        else:  # User
            master_id = spec.get("master", first_id("Master"))
            component = User(
                runtime,
                endpoint,
                master=identity_of(master_id),
                application_name=spec["applicationName"],
                label=spec.get("label", ""),
                task_count=spec.get("taskCount"),
                records=list(spec.get("records", [])),
                timeout_ms=float(spec.get("timeoutMs", config.USER_TIMEOUT_MS)),
            )
        entry = cluster.entries[component_id]
        entry.component = component
        entry.start_at_ms = float(spec.get("startAtMs", 0.0))
        if entry.start_at_ms <= 0.0:
            component.start()
        else:
            network.call_later(entry.start_at_ms, component.start)

    _schedule_workload(cluster, scenario.get("workload", []))
    return cluster


def _schedule_workload(cluster: Cluster, workload: list) -> None:
    network = cluster.network
    for step in workload:
        at = float(step.get("atMs", 0.0))
        action = step.get("action")
        if action == "submit":
            user = cluster[step["user"]]
            record = dict(step.get("record", {}))
            network.call_later(at, lambda u=user, r=record: u.submit(r))
        elif action == "sever":
            a, b = cluster.host_ips[step["a"]], cluster.host_ips[step["b"]]
            network.call_later(at, lambda a=a, b=b: network.sever(a, b))
        elif action == "heal":
            a, b = cluster.host_ips[step["a"]], cluster.host_ips[step["b"]]
            network.call_later(at, lambda a=a, b=b: network.heal(a, b))
        elif action == "stop":
            target = cluster[step["component"]]
            network.call_later(at, target.stop)
        else:
            raise ScenarioError(f"unknown workload action {action!r}")


def load_scenario(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def bundled_scenario_names() -> list:
    from importlib.resources import files

    folder = files("fogkit") / "scenarios"
    return sorted(
        entry.name[: -len(".json")]
        for entry in folder.iterdir()
        if entry.name.endswith(".json")
    )


def bundled_scenario(name: str) -> dict:
    from importlib.resources import files

    path = files("fogkit").joinpath("scenarios", f"{name}.json")
    try:
        text = path.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError):
        raise ScenarioError(
            f"no bundled scenario {name!r}; available: "
            f"{', '.join(bundled_scenario_names())}"
        ) from None
    return json.loads(text)


def run_scenario(scenario: dict) -> tuple:
    """Build, run and report; returns ``(report, cluster)``."""
    cluster = build_cluster(scenario)
    report = cluster.run()
    return report, cluster
