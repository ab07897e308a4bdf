"""Shared behaviour for the five component roles.

A component owns an identity, listens on one endpoint inside its role's
port range, dispatches incoming envelopes to per-kind handlers, and
answers discovery probes.  Everything time- or network-related goes
through the injected :class:`~fogkit.transport.Runtime`, which is what
lets the same component run over real TCP or inside the simulation.
"""
from __future__ import annotations

import logging
from typing import Callable

from .config import port_range_for
from .protocol import (
    ComponentIdentity,
    ComponentRole,
    Endpoint,
    MessageEnvelope,
    classify,
    make_identity,
)
from .transport import Runtime, TimerHandle, UnreachableError


class Component:
    """Base of all five roles."""

    role: ComponentRole

    def __init__(self, runtime: Runtime, endpoint: Endpoint, env: dict | None = None):
        self.runtime = runtime
        self.endpoint = endpoint
        self.env = env
        self.identity = make_identity(self.role, endpoint)
        self.port_range = port_range_for(self.role.value, env)
        self.log = logging.getLogger(f"fogkit.{self.role.value.lower()}")
        self._handlers: dict = {}
        self._timers: list = []
        self._running = False
        self.register_handler(
            ("resourcesDiscovery", "probe", "try"), self._handle_probe
        )

    # -- lifecycle -----------------------------------------------------

    def start(self) -> None:
        if self._running:
            return
        self.runtime.listen(self.endpoint, self._on_message, self.port_range)
        self._running = True
        self.log.info("%s listening on %s", self.identity.name_log_printing, self.endpoint)
        self.on_start()

    def stop(self) -> None:
        if not self._running:
            return
        self._running = False
        for handle in self._timers:
            handle.cancel()
        self._timers.clear()
        self.runtime.unlisten(self.endpoint)
        self.on_stop()

    def on_start(self) -> None:
        """Hook for subclasses; runs after the endpoint is bound."""

    def on_stop(self) -> None:
        """Hook for subclasses; runs after the endpoint is released."""

    @property
    def running(self) -> bool:
        return self._running

    # -- messaging -----------------------------------------------------

    def register_handler(self, kind: tuple, handler: Callable) -> None:
        key = (*kind, "")[:3]
        self._handlers[key] = handler

    def _on_message(self, envelope: MessageEnvelope) -> None:
        if envelope.destination.addr != self.identity.addr:
            self.log.warning(
                "dropping misdelivered %s for %s",
                envelope.kind,
                envelope.destination.addr,
            )
            return
        entry = classify(tuple(envelope.kind))
        if entry is not None and not entry.permits(envelope.source.role, self.role):
            self.log.warning(
                "dropping %s: %s may not send this to %s",
                tuple(envelope.kind),
                envelope.source.role.value,
                self.role.value,
            )
            return
        handler = self._handlers.get(tuple(envelope.kind))
        if handler is None:
            self.log.warning("no handler for %s", tuple(envelope.kind))
            return
        handler(envelope)

    def send(
        self,
        destination: ComponentIdentity,
        kind: tuple,
        data: dict | None = None,
    ) -> bool:
        """Send one envelope; returns False when the peer is unreachable."""
        type_, sub, subsub = (*kind, "")[:3]
        envelope = MessageEnvelope(
            source=self.identity,
            destination=destination,
            type=type_,
            sub_type=sub,
            sub_sub_type=subsub,
            data=data or {},
        )
        try:
            self.runtime.send(envelope)
        except UnreachableError as exc:
            self.log.warning("cannot deliver %s: %s", tuple(envelope.kind), exc)
            return False
        return True

    def call_later(self, delay_ms: float, callback: Callable[[], None]) -> TimerHandle:
        handle = self.runtime.call_later(delay_ms, self._guarded(callback))
        self._timers.append(handle)
        return handle

    def every(self, interval_ms: float, callback: Callable[[], None]) -> None:
        """Run ``callback`` now and then every ``interval_ms`` while running."""

        def tick():
            callback()
            self.call_later(interval_ms, tick)

        self.call_later(0.0, tick)

    def _guarded(self, callback: Callable[[], None]) -> Callable[[], None]:
        def run():
            if self._running:
                callback()

        return run

    def now_ms(self) -> float:
        return self.runtime.now_ms()

    # -- discovery -----------------------------------------------------

    def _handle_probe(self, envelope: MessageEnvelope) -> None:
        self.send(
            envelope.source,
            ("resourcesDiscovery", "probe", "result"),
            {"role": self.role.value, "identity": self.identity.to_wire()},
        )


def provisional_identity(endpoint: Endpoint) -> ComponentIdentity:
    """Address-only identity for probing endpoints whose role is unknown.

    The declared role is a guess (probe replies carry the authoritative
    identity); receivers validate the address, not the role, on probes.
    """
    return make_identity(ComponentRole.Master, endpoint)
