"""User: the client-side component.

A user validates its application name locally (a bad name never even
reaches the network), registers with a master, requests a placement, and
once the service is ready streams its input records one submission at a
time.  Results from exit tasks are aggregated until every required
result key is present; a submission that stalls past its deadline is
recorded as partial, never silently dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import config
from .appmodel import build_application, required_result_keys
from .component import Component
from .protocol import (
    ComponentIdentity,
    ComponentRole,
    Endpoint,
    MessageEnvelope,
)
from .transport import Runtime


class PartialResultsError(Exception):
    """A submission finished without all of its required result keys."""

    def __init__(self, missing, reason: str = "timed out"):
        self.missing = tuple(sorted(missing))
        super().__init__(
            f"submission {reason}; missing results: {', '.join(self.missing) or '-'}"
        )


@dataclass
class ResponseTimeStats:
    count: int = 0
    mean_ms: float = 0.0
    last_ms: float = 0.0

    def update(self, sample_ms: float) -> None:
        self.count += 1
        self.mean_ms += (sample_ms - self.mean_ms) / self.count
        self.last_ms = sample_ms


@dataclass(frozen=True)
class SubmissionResult:
    completed: bool
    payload: dict
    missing: tuple = ()
    reason: str = ""


class User(Component):
    role = ComponentRole.User

    def __init__(
        self,
        runtime: Runtime,
        endpoint: Endpoint,
        master: ComponentIdentity,
        application_name: str,
        label: str = "",
        task_count: int | None = None,
        records: list | None = None,
        timeout_ms: float = config.USER_TIMEOUT_MS,
        env: dict | None = None,
    ):
        super().__init__(runtime, endpoint, env)
        # Validates locally; an unknown application raises right here,
        # before any registration traffic exists.
        self.app = build_application(application_name, label=label, task_count=task_count)
        self.required = required_result_keys(self.app)
        self.master = master
        self.label = label
        self.task_count = task_count
        self.timeout_ms = timeout_ms
        self.stats = ResponseTimeStats()
        self.results: list = []
        self.state = "idle"  # idle|registering|requesting|ready|failed
        self.failure_reason = ""
        self.redirections = 0
        self._queue: list = list(records or [])
        self._aggregate: dict = {}
        self._in_flight = False
        self._submission_seq = 0
        self._last_sent_ms = 0.0
        self.register_handler(("registration", "registered"), self._handle_registered)
        self.register_handler(
            ("acknowledgement", "serviceReady"), self._handle_service_ready
        )
        self.register_handler(("data", "finalResult"), self._handle_final_result)
        self.register_handler(("scaling", "redirect"), self._handle_redirect)
        self.register_handler(("error", "unknownApplication"), self._handle_fatal_error)
        self.register_handler(("error", "saturated"), self._handle_fatal_error)
        self.register_handler(("error", "notReady"), self._handle_not_ready)
        self.register_handler(("error", "execError"), self._handle_exec_error)

    # -- bootstrap -----------------------------------------------------

    def on_start(self) -> None:
        self._register()

    def _register(self) -> None:
        self.state = "registering"
        if not self.send(self.master, ("registration", "register"), {}):
            self._fail("master unreachable")

    def _handle_registered(self, envelope: MessageEnvelope) -> None:
        if envelope.source.name_consistent != self.master.name_consistent:
            return
        self.identity = self.identity.with_component_id(
            str(envelope.data["componentID"])
        )
        self.state = "requesting"
        request = {"applicationName": self.app.name, "label": self.label}
        if self.task_count is not None:
            request["taskCount"] = self.task_count
        self.send(self.master, ("placement", "request"), request)

    def _handle_service_ready(self, envelope: MessageEnvelope) -> None:
        if self.state in ("requesting", "ready"):
            self.state = "ready"
            self._send_next()

    def _handle_redirect(self, envelope: MessageEnvelope) -> None:
        if self.redirections >= 1:
            self._fail("redirected more than once")
            return
        try:
            target = ComponentIdentity.from_wire(envelope.data["master"])
        except (KeyError, TypeError, ValueError):
            self._fail("redirect without a usable master identity")
            return
        self.redirections += 1
        self.log.info("redirected to %s", target.name_consistent)
        self.master = target
        # The new master assigns its own component id.
        self.identity = self.identity.with_component_id("?")
        self._register()

    # -- submissions ---------------------------------------------------

    def submit(self, record: dict) -> None:
        self._queue.append(record)
        if self.state == "ready" and not self._in_flight:
            self._send_next()

    def _send_next(self) -> None:
        if self._in_flight or not self._queue or self.state != "ready":
            return
        record = self._queue.pop(0)
        self._aggregate = {}
        self._in_flight = True
        self._submission_seq += 1
        seq = self._submission_seq
        self._last_sent_ms = self.now_ms()
        self.send(self.master, ("data", "sensoryData"), {"payload": record})
        self.call_later(self.timeout_ms, lambda: self._check_deadline(seq))

    def _handle_final_result(self, envelope: MessageEnvelope) -> None:
        if not self._in_flight:
            return
        self.stats.update(self.now_ms() - self._last_sent_ms)
        payload = envelope.data.get("payload", {})
        if isinstance(payload, dict):
            self._aggregate.update(payload)
        if self.required <= set(self._aggregate):
            self._complete_submission()

    def _complete_submission(self) -> None:
        self._in_flight = False
        result = SubmissionResult(completed=True, payload=dict(self._aggregate))
        self.results.append(result)
        self.log.info(
            "Received all the %d results for submission %d",
            len(self.required),
            self._submission_seq,
        )
        for key in sorted(self.required):
            self.log.info("    %s = %r", key, self._aggregate.get(key))
        self._send_next()

    def _check_deadline(self, seq: int) -> None:
        if self._in_flight and self._submission_seq == seq:
            missing = tuple(sorted(self.required - set(self._aggregate)))
            self._in_flight = False
            self.results.append(
                SubmissionResult(
                    completed=False,
                    payload=dict(self._aggregate),
                    missing=missing,
                    reason="timed out",
                )
            )
            self.log.warning("submission %d timed out; missing %s", seq, missing)

    def _handle_exec_error(self, envelope: MessageEnvelope) -> None:
        if not self._in_flight:
            return
        missing = tuple(sorted(self.required - set(self._aggregate)))
        self._in_flight = False
        self.results.append(
            SubmissionResult(
                completed=False,
                payload=dict(self._aggregate),
                missing=missing,
                reason=f"task {envelope.data.get('taskName')} failed: "
                f"{envelope.data.get('error')}",
            )
        )

    def _handle_not_ready(self, envelope: MessageEnvelope) -> None:
        self.log.warning("master had no ready placement; will retry on ready")

    def _handle_fatal_error(self, envelope: MessageEnvelope) -> None:
        self._fail(str(envelope.data.get("error", envelope.sub_type)))

    def _fail(self, reason: str) -> None:
        self.state = "failed"
        self.failure_reason = reason
        self.log.warning("giving up: %s", reason)

    # -- inspection ----------------------------------------------------

    @property
    def completed_results(self) -> list:
        return [r for r in self.results if r.completed]

    @property
    def failed_results(self) -> list:
        return [r for r in self.results if not r.completed]

    def raise_on_partial(self) -> None:
        """CLI helper: surface the first failed submission as an exception."""
        for result in self.results:
            if not result.completed:
                raise PartialResultsError(result.missing, result.reason)
