"""Acceptance checks: one test per published guarantee, eleven in all.

Each test prints a single ``[PASS]``/``[FAIL]`` verdict line (bypassing
capture so the line is visible in normal runs) and enforces both the
stated tolerance and the stated runtime budget.
"""
from __future__ import annotations

import itertools
import json
import random
import time

import pytest

from doubles import drive_random_executor
from fogkit import cli, config
from fogkit.appmodel import ApplicationSpec, TaskNode
from fogkit.config import port_range_for
from fogkit.harness import bundled_scenario, count_kind, find_subsequence, run_scenario
from fogkit.profiling import HostProfile
from fogkit.protocol import (
    ComponentRole,
    classify,
    decode_message,
    encode_message,
)
from fogkit.remotelogger import FileLogStore, LogRecord
from fogkit.scheduler import (
    ExecTimeModel,
    dominates,
    genome_objectives,
    non_dominated_sort,
    schedule_nsga2,
    tasks_assignment,
)
from fogkit.taskexecutor import LEGAL_TRANSITIONS
from fogkit.transport import RealRuntime


def verdict(capsys, number: int, budget_s: float, started: float,
            problems: list, title: str) -> None:
    """Print the one-line verdict, then fail the test if anything broke."""
    elapsed = time.perf_counter() - started
    if elapsed >= budget_s:
        problems.append(f"took {elapsed:.2f}s, budget {budget_s:g}s")
    status = "PASS" if not problems else "FAIL"
    with capsys.disabled():
        print(
            f"[{status}] acceptance {number:2d}/11: {title} "
            f"({elapsed:.2f}s < {budget_s:g}s)"
        )
    assert not problems, f"acceptance {number}: " + "; ".join(problems)


# ---------------------------------------------------------------------------
# 1. Golden message: the published sample log envelope, verbatim.
# ---------------------------------------------------------------------------

GOLDEN_LOG_MESSAGE = {
    "data": {
        "resources": {
            "cpu": {
                "cores": 8,
                "frequency": 2400.0,
                "utilization": 0.052,
                "utilizationPeak": 1.0,
            },
            "memory": {
                "maximum": 17179869184,
                "utilization": 0.075,
                "utilizationPeak": 1.0,
            },
        }
    },
    "destination": {
        "addr": ["127.0.0.1", 5000],
        "componentID": "?",
        "hostID": "HostID",
        "name": "RemoteLogger-?_127.0.0.1-5000",
        "nameConsistent": "RemoteLogger_HostID",
        "nameLogPrinting": "RemoteLogger-?_127.0.0.1-5000",
        "role": "RemoteLogger",
    },
    "receivedAtLocalTimestamp": 0.0,
    "sentAtSourceTimestamp": 1625572932123.89,
    "source": {
        "addr": ["127.0.0.1", 50000],
        "componentID": "2",
        "hostID": "127.0.0.1",
        "name": "Actor",
        "nameConsistent": "Actor_127.0.0.1",
        "nameLogPrinting": "Actor-2_127.0.0.1-50000_Master-?_127.0.0.1-5001",
        "role": "Actor",
    },
    "subSubType": "",
    "subType": "hostResources",
    "type": "log",
}


def test_check_01_golden_message_round_trip(capsys):
    started = time.perf_counter()
    problems: list = []
    raw = json.dumps(
        GOLDEN_LOG_MESSAGE, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    envelope = decode_message(raw)
    for label, got, want in (
        ("source role", envelope.source.role, ComponentRole.Actor),
        ("destination role", envelope.destination.role, ComponentRole.RemoteLogger),
        ("type", envelope.type, "log"),
        ("subType", envelope.sub_type, "hostResources"),
        ("cpu cores", envelope.data["resources"]["cpu"]["cores"], 8),
        ("cpu frequency", envelope.data["resources"]["cpu"]["frequency"], 2400.0),
        ("sent stamp", envelope.sent_at, 1625572932123.89),
    ):
        if got != want:
            problems.append(f"{label}: {got!r} != {want!r}")
    if encode_message(envelope) != raw:
        problems.append("re-encoding did not round-trip byte-for-byte")
    verdict(capsys, 1, 1.0, started, problems,
            "golden log envelope decodes and re-encodes exactly")


# ---------------------------------------------------------------------------
# 2. Message catalog: every published (sender, receiver, kind) row.
# ---------------------------------------------------------------------------

_M, _A, _TE, _U, _RL = (
    ComponentRole.Master,
    ComponentRole.Actor,
    ComponentRole.TaskExecutor,
    ComponentRole.User,
    ComponentRole.RemoteLogger,
)
ANY = "any"

# The published protocol table: 20 directed rows plus the two probe rows
# that any component may exchange.
PUBLISHED_TABLE = (
    (_M, _A, "placement", "runTaskExecutor", ""),
    (_TE, _M, "placement", "lookup", ""),
    (_M, _TE, "placement", "lookup", ""),
    (_TE, _M, "acknowledgement", "ready", ""),
    (_M, _U, "acknowledgement", "serviceReady", ""),
    (_U, _M, "data", "sensoryData", ""),
    (_M, _TE, "data", "intermediateData", ""),
    (_TE, _TE, "data", "intermediateData", ""),
    (_TE, _M, "acknowledgement", "waiting", ""),
    (_M, _TE, "acknowledgement", "wait", ""),
    (_M, _TE, "placement", "reuse", ""),
    (_TE, _M, "data", "finalResult", ""),
    (_M, _U, "data", "finalResult", ""),
    (_M, _M, "scaling", "getProfiles", ""),
    (_M, _M, "scaling", "profilesInfo", ""),
    (_M, _A, "scaling", "initNewMaster", ""),
    (_RL, _M, "log", "allResourcesProfiles", ""),
    (_M, _M, "resourcesDiscovery", "requestActorsInfo", ""),
    (_M, _M, "resourcesDiscovery", "actorsInfo", ""),
    (_M, _A, "resourcesDiscovery", "advertiseMaster", ""),
    (ANY, ANY, "resourcesDiscovery", "probe", "try"),
    (ANY, ANY, "resourcesDiscovery", "probe", "result"),
)


def test_check_02_catalog_covers_published_rows(capsys):
    started = time.perf_counter()
    problems: list = []
    passes = 0
    for sender, receiver, type_, sub, subsub in PUBLISHED_TABLE:
        entry = classify((type_, sub, subsub))
        row_name = f"{type_}/{sub}" + (f"/{subsub}" if subsub else "")
        if entry is None:
            problems.append(f"{row_name}: not in the catalog")
            continue
        if sender is ANY:
            pairs = itertools.product(ComponentRole, ComponentRole)
        else:
            pairs = [(sender, receiver)]
        if all(entry.permits(s, r) for s, r in pairs):
            passes += 1
        else:
            problems.append(f"{row_name}: sender/receiver pairing refused")
    if passes != len(PUBLISHED_TABLE):
        problems.append(f"only {passes}/{len(PUBLISHED_TABLE)} rows classified")
    verdict(capsys, 2, 1.0, started, problems,
            f"all {len(PUBLISHED_TABLE)} published catalog rows classify")


# ---------------------------------------------------------------------------
# 3. End-to-end parallel formula on one master and three actors.
# ---------------------------------------------------------------------------

SERVICE_SEQUENCE = [
    ["placement", "request"],
    ["placement", "runTaskExecutor"],
    ["placement", "runTaskExecutor"],
    ["placement", "runTaskExecutor"],
    ["acknowledgement", "ready"],
    ["acknowledgement", "ready"],
    ["acknowledgement", "ready"],
    ["acknowledgement", "serviceReady"],
    ["data", "sensoryData"],
    ["data", "finalResult"],
    ["data", "finalResult"],
    ["data", "finalResult"],
]


def test_check_03_parallel_formula_end_to_end(capsys):
    started = time.perf_counter()
    problems: list = []
    scenario = {
        "name": "three-actor-parallel-formula",
        "seed": 7,
        "durationMs": 30000,
        "hosts": {
            "cloud": {"cores": 8, "frequencyMhz": 2400.0, "cpuUtilization": 0.05},
            "edgeA": {"cores": 4, "frequencyMhz": 1800.0, "cpuUtilization": 0.1},
            "edgeB": {"cores": 4, "frequencyMhz": 1800.0, "cpuUtilization": 0.15},
            "edgeC": {"cores": 2, "frequencyMhz": 1500.0, "cpuUtilization": 0.1},
            "phone": {"cores": 2, "frequencyMhz": 1200.0, "cpuUtilization": 0.2},
        },
        "links": {"defaultLatencyMs": 1.0},
        "components": [
            {"role": "Master", "host": "cloud", "id": "m1",
             "schedulerName": "RankingBased"},
            {"role": "Actor", "host": "edgeA", "id": "a1", "master": "m1"},
            {"role": "Actor", "host": "edgeB", "id": "a2", "master": "m1"},
            {"role": "Actor", "host": "edgeC", "id": "a3", "master": "m1"},
            {"role": "User", "host": "phone", "id": "u1", "master": "m1",
             "applicationName": "NaiveFormulaParallelized",
             "records": [{"a": 1, "b": 2, "c": 3}]},
        ],
    }
    report, cluster = run_scenario(scenario)
    user = cluster["u1"]
    if not user.completed_results:
        problems.append(f"user never completed (state {user.state!r})")
    else:
        payload = user.completed_results[0].payload
        if payload.get("resultPart0") != 6.0:
            problems.append(f"resultPart0 {payload.get('resultPart0')!r} != 6.0")
        if abs(payload.get("resultPart1", 0.0) - 1.0 / 13.0) > 1e-9:
            problems.append(f"resultPart1 {payload.get('resultPart1')!r} off 1/13")
        if abs(payload.get("resultPart2", 0.0) - 3.0) > 1e-9:
            problems.append(f"resultPart2 {payload.get('resultPart2')!r} off 3.0")
    if not find_subsequence(cluster.network.trace, SERVICE_SEQUENCE):
        problems.append("service bring-up sequence missing from trace")
    verdict(capsys, 3, 5.0, started, problems,
            "parallel formula yields 6.0, 1/13, 3.0 and the service sequence")


# ---------------------------------------------------------------------------
# 4. Executor reuse across two back-to-back requests.
# ---------------------------------------------------------------------------

def test_check_04_second_request_reuses_executors(capsys):
    started = time.perf_counter()
    problems: list = []
    report, _ = run_scenario(bundled_scenario("reuse"))
    spawns = report["traceCounts"].get("placement/runTaskExecutor", 0)
    reuses = report["traceCounts"].get("placement/reuse", 0)
    if spawns != 3:
        problems.append(f"runTaskExecutor count {spawns} != 3")
    if reuses != 3:
        problems.append(f"reuse count {reuses} != 3")
    for user in report["users"]:
        if user["completed"] < 1:
            problems.append(f"user {user['id']} never completed")
    verdict(capsys, 4, 5.0, started, problems,
            "two requests: 3 fresh executors total, 3 reused bindings")


# ---------------------------------------------------------------------------
# 5. Scale-out under a full placement queue.
# ---------------------------------------------------------------------------

def test_check_05_scaleout_serves_both_users(capsys):
    started = time.perf_counter()
    problems: list = []
    report, _ = run_scenario(bundled_scenario("scaling"))
    redirects = report["traceCounts"].get("scaling/redirect", 0)
    new_masters = report["traceCounts"].get("scaling/initNewMaster", 0)
    if redirects < 1 and new_masters < 1:
        problems.append("neither a redirect nor a new master appeared")
    for user in report["users"]:
        if user["completed"] < 1:
            problems.append(f"user {user['id']} never completed")
    verdict(capsys, 5, 10.0, started, problems,
            "full queue triggers redirect or a new master; both users served")


# ---------------------------------------------------------------------------
# 6. Discovery: masters exchange actor listings and converge.
# ---------------------------------------------------------------------------

def test_check_06_discovery_converges_actor_sets(capsys):
    started = time.perf_counter()
    problems: list = []
    scenario = {
        "name": "mutual-discovery",
        "seed": 31,
        "durationMs": 15000,
        "hosts": {
            "cloud": {"cores": 8, "frequencyMhz": 2400.0},
            "edge": {"cores": 4, "frequencyMhz": 1800.0},
            "lab": {"cores": 4, "frequencyMhz": 2000.0},
        },
        "links": {"defaultLatencyMs": 1.0},
        "components": [
            {"role": "Master", "host": "cloud", "id": "m1",
             "discoveryTargets": ["m2"]},
            {"role": "Actor", "host": "edge", "id": "a1", "master": "m1"},
            {"role": "Master", "host": "lab", "id": "m2",
             "discoveryTargets": ["m1"]},
        ],
    }
    report, cluster = run_scenario(scenario)
    m1, m2 = cluster["m1"], cluster["m2"]
    trace = cluster.network.trace
    if set(m1.actors) != set(m2.actors) or not m2.actors:
        problems.append(
            f"actor sets differ: {sorted(m1.actors)} vs {sorted(m2.actors)}"
        )
    if count_kind(trace, "resourcesDiscovery", "actorsInfo") < 1:
        problems.append("masters never exchanged actor listings")
    adv = [r.time_ms for r in trace
           if r.kind[:2] == ("resourcesDiscovery", "advertiseMaster")
           and r.source == m2.identity.name_consistent]
    reg = [r.time_ms for r in trace
           if r.kind[:2] == ("registration", "register")
           and r.destination == m2.identity.name_consistent]
    if not adv:
        problems.append("the late master never advertised itself")
    elif not reg:
        problems.append("no actor registered with the late master")
    elif min(reg) > min(adv) + 2 * config.DISCOVERY_INTERVAL_MS:
        problems.append(
            f"registration at {min(reg):.0f}ms, more than two discovery "
            f"ticks after advertising at {min(adv):.0f}ms"
        )
    verdict(capsys, 6, 5.0, started, problems,
            "advertised actor registers within two ticks; actor sets converge")


# ---------------------------------------------------------------------------
# 7. Placement search against exhaustive enumeration.
# ---------------------------------------------------------------------------

def random_placement_instance(rng: random.Random):
    """A random DAG of up to 4 tasks over up to 4 profiled hosts."""
    n_tasks = rng.randint(1, 4)
    names = [f"Step{i}" for i in range(n_tasks)]
    parents: dict = {name: [] for name in names}
    children: dict = {name: [] for name in names}
    for i in range(n_tasks):
        for j in range(i + 1, n_tasks):
            if rng.random() < 0.35:
                parents[names[j]].append(names[i])
                children[names[i]].append(names[j])
    tasks = {}
    for i, name in enumerate(names):
        tasks[name] = TaskNode(
            name=name,
            task_id=900 + i,
            parents=tuple(parents[name]) or ("Sensor",),
            children=tuple(children[name]) or ("Actuator",),
        )
    app = ApplicationSpec(f"Random{n_tasks}", tasks)
    hosts = [f"h{k}" for k in range(rng.randint(1, 4))]
    profiles = {
        host: HostProfile(
            rng.randint(1, 8),
            rng.choice([1000.0, 1600.0, 2400.0, 3000.0]),
            rng.uniform(0.0, 0.7),
        )
        for host in hosts
    }
    work = {name: rng.uniform(40.0, 400.0) for name in names}
    model = ExecTimeModel(profiles, work=work)
    user_host = "phone"
    latency = {
        pair: rng.uniform(0.0, 25.0)
        for pair in itertools.combinations(hosts + [user_host], 2)
    }
    return app, model, hosts, latency, user_host


def peel_fronts(objectives):
    """Reference partition: repeatedly remove the non-dominated set."""
    remaining = list(range(len(objectives)))
    fronts = []
    while remaining:
        front = [
            i for i in remaining
            if not any(
                dominates(objectives[j], objectives[i])
                for j in remaining if j != i
            )
        ]
        fronts.append(front)
        remaining = [i for i in remaining if i not in front]
    return fronts


def test_check_07_search_tracks_exhaustive_optimum(capsys):
    started = time.perf_counter()
    problems: list = []
    rng = random.Random(1234)
    near_optimal = 0
    instances = 50
    for index in range(instances):
        app, model, hosts, latency, user_host = random_placement_instance(rng)
        task_order = sorted(app.tasks)
        genomes = list(
            itertools.product(range(len(hosts)), repeat=len(task_order))
        )
        points = [
            genome_objectives(
                genome, task_order, hosts, app, model, latency, user_host
            )
            for genome in genomes
        ]
        sample = points if len(points) <= 100 else rng.sample(points, 100)
        if non_dominated_sort(sample) != peel_fronts(sample):
            problems.append(f"instance {index}: front partition mismatch")
        best = min(point[0] for point in points)
        decision = schedule_nsga2(
            app, model, hosts,
            {"populationSize": 16, "generations": 30, "seed": index},
            latency=latency, user_host=user_host,
        )
        if decision.objectives[0] <= best * 1.05 + 1e-9:
            near_optimal += 1
    if near_optimal < 45:
        problems.append(
            f"only {near_optimal}/{instances} searches within 5% of optimum"
        )
    verdict(capsys, 7, 60.0, started, problems,
            f"front sort exact; search near-optimal on {near_optimal}/50")


# ---------------------------------------------------------------------------
# 8. Ranking policy: valid topological order, deterministic output.
# ---------------------------------------------------------------------------

def test_check_08_ranking_is_valid_and_deterministic(capsys):
    started = time.perf_counter()
    problems: list = []
    rng = random.Random(99)
    violations = 0
    for index in range(100):
        app, model, hosts, _, _ = random_placement_instance(rng)
        first = tasks_assignment(app, model, hosts)
        again = tasks_assignment(app, model, hosts)
        if first != again:
            problems.append(f"instance {index}: decision not deterministic")
        position = {name: i for i, (name, _) in enumerate(first.assignment)}
        for name, node in app.tasks.items():
            for parent in node.task_parents:
                if position[parent] >= position[name]:
                    violations += 1
    if violations:
        problems.append(f"{violations} dependency-order violations")
    verdict(capsys, 8, 10.0, started, problems,
            "100 ranked placements: 0 order violations, all repeatable")


# ---------------------------------------------------------------------------
# 9. Executor lifecycle under 1000 random event sequences.
# ---------------------------------------------------------------------------

def test_check_09_lifecycle_safe_under_random_events(capsys):
    started = time.perf_counter()
    problems: list = []
    illegal = 0
    for index in range(1000):
        # drive_random_executor itself asserts that every executed
        # payload carries the bound user, so mixing fails loudly here.
        executor = drive_random_executor(
            random.Random(index), steps=8, with_children=(index % 3 == 0)
        )
        for old, new in executor.transitions:
            if new not in LEGAL_TRANSITIONS.get(old, ()):
                illegal += 1
    if illegal:
        problems.append(f"{illegal} illegal state transitions")
    verdict(capsys, 9, 10.0, started, problems,
            "1000 random event sequences: no illegal transition, no mixing")


# ---------------------------------------------------------------------------
# 10. Log store durability across close and reopen.
# ---------------------------------------------------------------------------

def test_check_10_file_store_survives_reopen(capsys, tmp_path):
    started = time.perf_counter()
    problems: list = []
    path = str(tmp_path / "durability.ndjson")
    rng = random.Random(4242)
    store = FileLogStore(path)
    originals = []
    for index in range(1000):
        record = LogRecord(
            kind=rng.choice(["hostResources", "responseTime", "event"]),
            source=f"Component_{rng.randrange(20)}",
            host_id=f"10.0.0.{rng.randrange(255)}",
            timestamp_ms=rng.uniform(0, 10**12),
            payload={
                "sequence": index,
                "value": rng.random(),
                "nested": {"flag": bool(index % 2), "items": [index, "x"]},
            },
        )
        store.append(record)
        originals.append(record.to_obj())
    store.close()
    reopened = FileLogStore(path)
    survived = [record.to_obj() for record in reopened.records()]
    reopened.close()
    if len(survived) != 1000:
        problems.append(f"{len(survived)}/1000 records survived reopen")
    elif survived != originals:
        problems.append("payloads changed across close/reopen")
    verdict(capsys, 10, 5.0, started, problems,
            "1000 records survive file-store close/reopen losslessly")


# ---------------------------------------------------------------------------
# 11. Port plan: CLI default launches stay inside each role's range.
# ---------------------------------------------------------------------------

def test_check_11_cli_defaults_respect_port_plan(capsys):
    started = time.perf_counter()
    problems: list = []
    runtime = RealRuntime()
    launched = []

    def expect_range(role: str, port: int) -> None:
        if port not in port_range_for(role):
            problems.append(
                f"{role} bound {port}, outside {port_range_for(role)}"
            )

    try:
        logger = cli.launch_component("RemoteLogger", cli.LaunchConfig(), runtime)
        launched.append(logger)
        expect_range("RemoteLogger", logger.endpoint.port)

        master = cli.launch_component("Master", cli.LaunchConfig(), runtime)
        launched.append(master)
        expect_range("Master", master.endpoint.port)

        actor = cli.launch_component(
            "Actor", cli.LaunchConfig(master_port=master.endpoint.port), runtime
        )
        launched.append(actor)
        expect_range("Actor", actor.endpoint.port)

        deadline = time.monotonic() + 2.0
        while time.monotonic() < deadline and not master.actors:
            time.sleep(0.02)
        if not master.actors:
            problems.append("actor never registered with the master")

        user = cli.launch_component(
            "User",
            cli.LaunchConfig(
                master_port=master.endpoint.port,
                application_name="NaiveFormulaSerialized",
                records=[{"a": 1, "b": 2, "c": 3}],
            ),
            runtime,
        )
        launched.append(user)
        expect_range("User", user.endpoint.port)

        deadline = time.monotonic() + 3.0
        while time.monotonic() < deadline and not user.results:
            time.sleep(0.02)
        if not (user.results and user.results[0].completed):
            problems.append(f"user request never completed ({user.state})")
        if not actor.hosted_executors:
            problems.append("no task executors were spawned")
        for _, port in actor.hosted_executors:
            expect_range("TaskExecutor", port)
    finally:
        for component in launched:
            component.stop()
        runtime.close()
    verdict(capsys, 11, 5.0, started, problems,
            "default launches bind inside every role's port range")
