"""Scripted counterparties for driving one component over the simulation.

A ``Collector`` binds an endpoint, records every envelope delivered to
it, and only dispatches the kinds a test registered a handler for — no
warnings, no permission checks.  Tests play the other side of a
conversation by calling ``send`` on a collector of the right role.

``drive_random_executor`` feeds one task executor a random stream of
protocol events and checks, step by step, that no payload is ever
executed for a user other than the executor's current one.
"""
from __future__ import annotations

import random

from fogkit.component import Component
from fogkit.protocol import ComponentRole, Endpoint
from fogkit.taskexecutor import ExecutorAssignment, TaskExecutor
from fogkit.transport import SimNetwork


class Collector(Component):
    def __init__(self, runtime, endpoint, env=None):
        super().__init__(runtime, endpoint, env)
        self.inbox: list = []
        self.register_handler(("registration", "registered"), self._adopt_assigned_id)

    def _adopt_assigned_id(self, envelope):
        self.identity = self.identity.with_component_id(
            str(envelope.data["componentID"])
        )

    def _on_message(self, envelope):
        self.inbox.append(envelope)
        handler = self._handlers.get(tuple(envelope.kind))
        if handler is not None:
            handler(envelope)

    def received(self, *kind) -> list:
        want = (*kind, "")[:3]
        return [e for e in self.inbox if tuple(e.kind) == want]

    def last(self, *kind):
        matches = self.received(*kind)
        assert matches, f"nothing of kind {kind} arrived"
        return matches[-1]


class MasterDouble(Collector):
    role = ComponentRole.Master


class UserDouble(Collector):
    role = ComponentRole.User


class ActorDouble(Collector):
    role = ComponentRole.Actor


class ExecutorDouble(Collector):
    role = ComponentRole.TaskExecutor


class LoggerDouble(Collector):
    role = ComponentRole.RemoteLogger


ROLE_PORTS = {
    ComponentRole.RemoteLogger: 5000,
    ComponentRole.Master: 5001,
    ComponentRole.Actor: 50000,
    ComponentRole.User: 50101,
    ComponentRole.TaskExecutor: 50201,
}


def endpoint_for(role: ComponentRole, ip: str, offset: int = 0) -> Endpoint:
    """First ports of each role's default range, plus an offset."""
    return Endpoint(ip, ROLE_PORTS[role] + offset)


def started(component):
    component.start()
    return component


def make_network(latency_ms: float = 1.0, **kwargs) -> SimNetwork:
    return SimNetwork(default_latency_ms=latency_ms, **kwargs)


def settle(network: SimNetwork, window_ms: float = 10.0) -> None:
    """Let in-flight messages land without firing far-future timers."""
    network.run_until(network.clock.now_ms() + window_ms)


EXECUTOR_EVENTS = (
    "register_ack",
    "data",
    "foreign_data",
    "wait_ack",
    "reuse",
    "tick",
    "lookup_reply",
)


def drive_random_executor(rng: random.Random, steps: int = 12, with_children: bool = False):
    """Feed a fresh executor ``steps`` random protocol events.

    Events arrive in any order — acks may be unsolicited, data may
    target a past or future user, reuse may arrive in the wrong state.
    After every event the network drains fully and each payload the
    executor ran in that window must carry the owner it was then bound
    to.  Returns the executor for further inspection.
    """
    network = make_network(horizon_ms=10.0**9)
    master = started(
        MasterDouble(
            network.runtime_for_host("10.0.0.1"),
            endpoint_for(ComponentRole.Master, "10.0.0.1"),
        )
    )
    actor = started(
        ActorDouble(
            network.runtime_for_host("10.0.0.2"),
            endpoint_for(ComponentRole.Actor, "10.0.0.2"),
        )
    )
    child = started(
        ExecutorDouble(
            network.runtime_for_host("10.0.0.2"),
            endpoint_for(ComponentRole.TaskExecutor, "10.0.0.2", offset=1),
        )
    )
    cool_off_ms = 50.0
    executor = TaskExecutor(
        network.runtime_for_host("10.0.0.2"),
        endpoint_for(ComponentRole.TaskExecutor, "10.0.0.2"),
        master=master.identity,
        actor=actor.identity,
        assignment=ExecutorAssignment(
            user_id="u0",
            app_name="NaiveFormulaParallelized",
            task_name="NaiveFormula0",
            parents=("Sensor",),
            children=("NaiveFormula1",) if with_children else ("Actuator",),
        ),
        cool_off_ms=cool_off_ms,
    )
    executor.start()
    network.run()

    users = ["u0"]

    def deliver(event: str) -> None:
        if event == "register_ack":
            master.send(
                executor.identity,
                ("registration", "registered"),
                {"componentID": "7", "master": master.identity.to_wire()},
            )
        elif event in ("data", "foreign_data"):
            owner = "intruder" if event == "foreign_data" else rng.choice(users)
            master.send(
                executor.identity,
                ("data", "intermediateData"),
                {
                    "userID": owner,
                    "fromTask": "Sensor",
                    "payload": {"a": 1, "b": 2, "c": 3, "owner": owner},
                },
            )
        elif event == "wait_ack":
            master.send(
                executor.identity,
                ("acknowledgement", "wait"),
                {"coolOffMs": cool_off_ms},
            )
        elif event == "reuse":
            users.append(f"u{len(users)}")
            master.send(
                executor.identity,
                ("placement", "reuse"),
                {
                    "userID": users[-1],
                    "applicationName": "NaiveFormulaParallelized",
                    "parents": ["Sensor"],
                    "children": ["NaiveFormula1"] if with_children else ["Actuator"],
                },
            )
        elif event == "tick":
            network.call_later(cool_off_ms + 1.0, lambda: None)
        elif event == "lookup_reply":
            master.send(
                executor.identity,
                ("placement", "lookup"),
                {"addresses": {"NaiveFormula1": child.identity.to_wire()}},
            )

    for _ in range(steps):
        already_served = len(executor.served_payloads)
        deliver(rng.choice(EXECUTOR_EVENTS))
        network.run()
        for payload in executor.served_payloads[already_served:]:
            assert payload.get("owner") == executor.assignment.user_id, (
                f"executed {payload.get('owner')!r} data while bound to "
                f"{executor.assignment.user_id!r}"
            )
    return executor
