"""Task executor: hosts one task's logic for one user at a time.

Lifecycle::

    Starting ──register──> AwaitingChildren ──lookup done──> Ready
        │                        │                             │ data
        │ (bootstrap failure)    │ (lookup exhausted)          v
        └──> Terminated <────────┘                          Serving
                 ^                                             │ round done
                 │ cool-off expired                            v
             CoolingOff <──── wait ack ──────────── AskingToWait
                 │ reuse / same-user data
                 └──────────> Serving

Executors without task children skip AwaitingChildren.  While cooling
off an executor can be rebound to a new user (reuse) or revived by more
data from the one it already serves; when the cool-off deadline passes
it terminates and tells its actor and master.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import config
from .appmodel import ACTUATOR, TaskExecutionError, run_task
from .component import Component
from .protocol import ComponentIdentity, ComponentRole, Endpoint, MessageEnvelope
from .transport import Runtime


class ExecutorState(str, Enum):
    Starting = "Starting"
    AwaitingChildren = "AwaitingChildren"
    Ready = "Ready"
    Serving = "Serving"
    AskingToWait = "AskingToWait"
    CoolingOff = "CoolingOff"
    Terminated = "Terminated"


LEGAL_TRANSITIONS: dict = {
    ExecutorState.Starting: {
        ExecutorState.AwaitingChildren,
        ExecutorState.Ready,
        ExecutorState.Terminated,
    },
    ExecutorState.AwaitingChildren: {ExecutorState.Ready, ExecutorState.Terminated},
    ExecutorState.Ready: {ExecutorState.Serving},
    ExecutorState.Serving: {ExecutorState.AskingToWait},
    ExecutorState.AskingToWait: {ExecutorState.CoolingOff, ExecutorState.Terminated},
    ExecutorState.CoolingOff: {ExecutorState.Serving, ExecutorState.Terminated},
    ExecutorState.Terminated: set(),
}


class IllegalTransitionError(RuntimeError):
    pass


@dataclass
class ExecutorAssignment:
    """What one placement binds an executor to."""

    user_id: str
    app_name: str
    task_name: str
    parents: tuple = ()
    children: tuple = ()

    @property
    def task_parents(self) -> tuple:
        return tuple(p for p in self.parents if p not in ("Sensor", ACTUATOR))

    @property
    def task_children(self) -> tuple:
        return tuple(c for c in self.children if c not in ("Sensor", ACTUATOR))

    @property
    def reports_final(self) -> bool:
        return ACTUATOR in self.children


class TaskExecutor(Component):
    role = ComponentRole.TaskExecutor

    def __init__(
        self,
        runtime: Runtime,
        endpoint: Endpoint,
        master: ComponentIdentity,
        actor: ComponentIdentity,
        assignment: ExecutorAssignment,
        cool_off_ms: float = config.COOL_OFF_MS,
        remote_logger: ComponentIdentity | None = None,
        env: dict | None = None,
    ):
        super().__init__(runtime, endpoint, env)
        self.master = master
        self.actor = actor
        self.assignment = assignment
        self.cool_off_ms = cool_off_ms
        self.remote_logger = remote_logger
        self.state = ExecutorState.Starting
        self.transitions: list = []
        self.child_addresses: dict = {}
        self.served_payloads: list = []   # every payload this executor executed
        self.rejected_payloads = 0        # frames dropped by the user guard
        self._inbox_parents: dict = {}    # parent name -> payload for this round
        self._buffered: list = []         # envelopes parked while AskingToWait
        self._durations: list = []
        self._cooloff_timer = None
        self._lookup_attempts = 0
        self._ready_pending = False
        self.register_handler(("registration", "registered"), self._handle_registered)
        self.register_handler(("placement", "lookup"), self._handle_lookup_reply)
        self.register_handler(("data", "intermediateData"), self._handle_data)
        self.register_handler(("acknowledgement", "wait"), self._handle_wait)
        self.register_handler(("placement", "reuse"), self._handle_reuse)

    # -- state machine -------------------------------------------------

    def _transition(self, new_state: ExecutorState) -> None:
        if new_state not in LEGAL_TRANSITIONS[self.state]:
            raise IllegalTransitionError(f"{self.state.value} -> {new_state.value}")
        self.transitions.append((self.state, new_state))
        self.state = new_state

    # -- bootstrap -----------------------------------------------------

    def on_start(self) -> None:
        delivered = self.send(
            self.master,
            ("registration", "register"),
            {
                "taskName": self.assignment.task_name,
                "userID": self.assignment.user_id,
                "applicationName": self.assignment.app_name,
                "actor": self.actor.name_consistent,
            },
        )
        if not delivered:
            self._fail_bootstrap("master unreachable during registration")

    def _fail_bootstrap(self, reason: str) -> None:
        self.log.warning("bootstrap failed: %s", reason)
        self.send(self.master, ("error", "bootstrapFailed"), {"reason": reason})
        self._transition(ExecutorState.Terminated)
        self.stop()

    def _handle_registered(self, envelope: MessageEnvelope) -> None:
        if self.state is not ExecutorState.Starting:
            return
        self.identity = self.identity.with_component_id(
            str(envelope.data["componentID"])
        )
        if self.assignment.task_children:
            self._transition(ExecutorState.AwaitingChildren)
            self._send_lookup()
        else:
            self._transition(ExecutorState.Ready)
            self._announce_ready()

    def _send_lookup(self) -> None:
        self._lookup_attempts += 1
        self.send(
            self.master,
            ("placement", "lookup"),
            {
                "userID": self.assignment.user_id,
                "children": list(self.assignment.task_children),
            },
        )
        self.call_later(config.LOOKUP_RETRY_MS, self._retry_lookup)

    def _retry_lookup(self) -> None:
        if self.state is not ExecutorState.AwaitingChildren:
            return
        if self._missing_children():
            if self._lookup_attempts >= config.LOOKUP_MAX_ATTEMPTS:
                self._fail_bootstrap(
                    f"children never appeared: {sorted(self._missing_children())}"
                )
            else:
                self._send_lookup()

    def _missing_children(self) -> set:
        return set(self.assignment.task_children) - set(self.child_addresses)

    def _handle_lookup_reply(self, envelope: MessageEnvelope) -> None:
        for name, wire in envelope.data.get("addresses", {}).items():
            self.child_addresses[name] = ComponentIdentity.from_wire(wire)
        if self._missing_children():
            return
        if self.state is ExecutorState.AwaitingChildren:
            self._transition(ExecutorState.Ready)
            self._announce_ready()
        elif self.state is ExecutorState.Serving and self._ready_pending:
            # children re-resolved after a reuse
            self._ready_pending = False
            self._announce_ready()
            self._drain_buffer()

    def _announce_ready(self) -> None:
        self.send(
            self.master,
            ("acknowledgement", "ready"),
            {
                "userID": self.assignment.user_id,
                "taskName": self.assignment.task_name,
            },
        )
        if self.state is ExecutorState.Ready and self._buffered:
            self._transition(ExecutorState.Serving)
            self._drain_buffer()

    # -- serving -------------------------------------------------------

    def _handle_data(self, envelope: MessageEnvelope) -> None:
        if self.state is ExecutorState.Terminated:
            return
        if envelope.data.get("userID") != self.assignment.user_id:
            # Never let one user's frames reach another user's pipeline.
            self.rejected_payloads += 1
            self.log.warning(
                "rejecting data for user %r while serving %r",
                envelope.data.get("userID"),
                self.assignment.user_id,
            )
            return
        if self.state in (
            ExecutorState.AskingToWait,
            ExecutorState.Starting,
            ExecutorState.AwaitingChildren,
        ):
            self._buffered.append(envelope)
            return
        if self.state is ExecutorState.CoolingOff:
            self._cancel_cooloff()
            self._transition(ExecutorState.Serving)
        elif self.state is ExecutorState.Ready:
            self._transition(ExecutorState.Serving)
        if self._missing_children():
            # a reuse is still re-resolving child addresses
            self._buffered.append(envelope)
            return
        self._ingest(envelope)

    def _ingest(self, envelope: MessageEnvelope) -> None:
        from_task = envelope.data.get("fromTask", "Sensor")
        payload = envelope.data.get("payload", {})
        self._inbox_parents[from_task] = payload
        needed = set(self.assignment.task_parents) or {"Sensor"}
        if needed <= set(self._inbox_parents):
            merged: dict = {}
            for name in sorted(self._inbox_parents):
                merged.update(self._inbox_parents[name])
            self._inbox_parents.clear()
            self._execute_and_forward(merged)

    def _execute_and_forward(self, payload: dict) -> None:
        started = self.now_ms()
        try:
            result = run_task(self.assignment.task_name, payload)
        except TaskExecutionError as exc:
            self.log.warning("task failed: %s", exc)
            self.send(
                self.master,
                ("error", "execError"),
                {
                    "userID": self.assignment.user_id,
                    "taskName": self.assignment.task_name,
                    "error": str(exc),
                },
            )
            self._finish_round()
            return
        self._durations.append(self.now_ms() - started)
        self.served_payloads.append(payload)
        for child in self.assignment.task_children:
            target = self.child_addresses.get(child)
            if target is None:
                self.log.warning("no address for child %s; result dropped", child)
                continue
            self.send(
                target,
                ("data", "intermediateData"),
                {
                    "userID": self.assignment.user_id,
                    "fromTask": self.assignment.task_name,
                    "payload": result,
                },
            )
        if self.assignment.reports_final:
            self.send(
                self.master,
                ("data", "finalResult"),
                {
                    "userID": self.assignment.user_id,
                    "taskName": self.assignment.task_name,
                    "payload": result,
                },
            )
        self._finish_round()

    def _finish_round(self) -> None:
        if self._buffered:
            return  # more rounds queued; keep serving
        if self.state is ExecutorState.Serving:
            self._transition(ExecutorState.AskingToWait)
            self.send(
                self.master,
                ("acknowledgement", "waiting"),
                {
                    "userID": self.assignment.user_id,
                    "taskName": self.assignment.task_name,
                },
            )

    def _drain_buffer(self) -> None:
        while self._buffered and self.state is ExecutorState.Serving:
            self._ingest(self._buffered.pop(0))

    # -- cool-off and reuse --------------------------------------------

    def _handle_wait(self, envelope: MessageEnvelope) -> None:
        if self.state is not ExecutorState.AskingToWait:
            return
        self._transition(ExecutorState.CoolingOff)
        self._flush_durations()
        deadline = float(envelope.data.get("coolOffMs", self.cool_off_ms))
        self._cooloff_timer = self.call_later(deadline, self._cooloff_expired)
        if self._buffered:
            self._cancel_cooloff()
            self._transition(ExecutorState.Serving)
            self._drain_buffer()

    def _cancel_cooloff(self) -> None:
        if self._cooloff_timer is not None:
            self._cooloff_timer.cancel()
            self._cooloff_timer = None

    def _cooloff_expired(self) -> None:
        if self.state is not ExecutorState.CoolingOff:
            return
        self._transition(ExecutorState.Terminated)
        report = {
            "taskName": self.assignment.task_name,
            "userID": self.assignment.user_id,
        }
        self.send(self.actor, ("acknowledgement", "terminated"), report)
        self.send(self.master, ("acknowledgement", "terminated"), report)
        self.stop()

    def _handle_reuse(self, envelope: MessageEnvelope) -> None:
        if self.state is ExecutorState.AskingToWait:
            # our waiting ack and the reuse crossed; take the wait as read
            self._transition(ExecutorState.CoolingOff)
        if self.state is not ExecutorState.CoolingOff:
            self.log.warning("ignoring reuse while %s", self.state.value)
            return
        self._cancel_cooloff()
        data = envelope.data
        self.assignment = ExecutorAssignment(
            user_id=str(data["userID"]),
            app_name=str(data.get("applicationName", self.assignment.app_name)),
            task_name=self.assignment.task_name,
            parents=tuple(data.get("parents", self.assignment.parents)),
            children=tuple(data.get("children", self.assignment.children)),
        )
        self._inbox_parents.clear()
        self._buffered.clear()
        self.child_addresses.clear()
        self._transition(ExecutorState.Serving)
        self._lookup_attempts = 0
        if self.assignment.task_children:
            self._ready_pending = True
            self._send_reuse_lookup()
        else:
            self._announce_ready()

    def _send_reuse_lookup(self) -> None:
        self.send(
            self.master,
            ("placement", "lookup"),
            {
                "userID": self.assignment.user_id,
                "children": list(self.assignment.task_children),
            },
        )

    # -- logging -------------------------------------------------------

    def _flush_durations(self) -> None:
        if not self._durations or self.remote_logger is None:
            self._durations.clear()
            return
        self.send(
            self.remote_logger,
            ("log", "executionDuration"),
            {
                "taskName": self.assignment.task_name,
                "durationsMs": list(self._durations),
            },
        )
        self._durations.clear()
