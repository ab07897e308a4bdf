"""Message transport.

Two interchangeable runtimes sit behind the same small interface:

* :class:`SimRuntime` — a deterministic discrete-event network.  A single
  event heap ordered by (virtual time, sequence number) carries both
  message deliveries and timers; every send is encoded to wire bytes and
  decoded again on delivery, so the simulation exercises the real codec.
* :class:`RealRuntime` — length-prefixed frames over short-lived TCP
  connections, with one dispatcher thread serialising all handler calls.

Components only ever talk to a :class:`Runtime`, which keeps their logic
identical in both worlds.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable

from .clock import VirtualClock, WallClock
from .config import PortRange
from .protocol import (
    Endpoint,
    MessageEnvelope,
    ProtocolError,
    decode_message,
    encode_message,
)

logger = logging.getLogger(__name__)

_LENGTH_PREFIX = struct.Struct("!I")
MAX_FRAME_BYTES = 16 * 1024 * 1024


class TransportError(Exception):
    pass


class UnreachableError(TransportError):
    """The destination endpoint cannot be reached right now."""


class BindError(TransportError):
    """A component tried to listen outside its role's port range, or the
    port was unavailable."""


def frame(payload: bytes) -> bytes:
    """Prefix a wire document with its 4-byte big-endian length."""
    if len(payload) > MAX_FRAME_BYTES:
        raise TransportError(f"frame of {len(payload)} bytes exceeds limit")
    return _LENGTH_PREFIX.pack(len(payload)) + payload


class FrameDecoder:
    """Incremental parser for a length-prefixed byte stream."""

    def __init__(self):
        self._buffer = bytearray()

    def feed(self, chunk: bytes) -> list:
        self._buffer.extend(chunk)
        frames = []
        while True:
            if len(self._buffer) < _LENGTH_PREFIX.size:
                return frames
            (length,) = _LENGTH_PREFIX.unpack_from(self._buffer)
            if length > MAX_FRAME_BYTES:
                raise TransportError(f"declared frame of {length} bytes exceeds limit")
            end = _LENGTH_PREFIX.size + length
            if len(self._buffer) < end:
                return frames
            frames.append(bytes(self._buffer[_LENGTH_PREFIX.size:end]))
            del self._buffer[:end]

    @property
    def pending_bytes(self) -> int:
        return len(self._buffer)


Handler = Callable[[MessageEnvelope], None]


class TimerHandle:
    def __init__(self):
        self._cancelled = False

    def cancel(self) -> None:
        self._cancelled = True

    @property
    def cancelled(self) -> bool:
        return self._cancelled


class Runtime:
    """What a component needs from the world: a clock, a mailbox and timers."""

    def now_ms(self) -> float:
        raise NotImplementedError

    def listen(self, endpoint: Endpoint, handler: Handler, port_range: PortRange) -> None:
        raise NotImplementedError

    def unlisten(self, endpoint: Endpoint) -> None:
        raise NotImplementedError

    def send(self, envelope: MessageEnvelope) -> None:
        raise NotImplementedError

    def call_later(self, delay_ms: float, callback: Callable[[], None]) -> TimerHandle:
        raise NotImplementedError

    def find_free_port(self, ip: str, port_range: PortRange) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class TraceRecord:
    """One delivered envelope, as seen by the simulated network."""

    time_ms: float
    source: str
    destination: str
    type: str
    sub_type: str
    sub_sub_type: str

    @property
    def kind(self) -> tuple:
        return (self.type, self.sub_type, self.sub_sub_type)


def _pair(a: str, b: str) -> tuple:
    return (a, b) if a <= b else (b, a)


@dataclass
class _Scheduled:
    deadline_ms: float
    seq: int
    action: Callable[[], None]
    handle: TimerHandle = field(default_factory=TimerHandle)


class SimNetwork:
    """Deterministic in-process network shared by every simulated component.

    Ordering is total: events fire in (virtual time, insertion sequence)
    order, so two runs over the same inputs produce identical traces.
    Latency is configured per unordered host pair with a global default,
    and links can be severed and healed while the clock runs.
    """

    def __init__(
        self,
        clock: VirtualClock | None = None,
        default_latency_ms: float = 0.0,
        horizon_ms: float | None = None,
        event_budget: int | None = None,
    ):
        from . import config

        self.clock = clock or VirtualClock()
        self.default_latency_ms = default_latency_ms
        self.horizon_ms = config.SIM_HORIZON_MS if horizon_ms is None else horizon_ms
        self.event_budget = (
            config.SIM_EVENT_BUDGET if event_budget is None else event_budget
        )
        self.trace: list = []
        self.lost: list = []
        self.stopped_reason: str | None = None
        self._heap: list = []
        self._seq = itertools.count()
        self._listeners: dict = {}
        self._latency: dict = {}
        self._severed: set = set()
        self._delivered = 0

    # -- topology ------------------------------------------------------

    def set_latency(self, ip_a: str, ip_b: str, latency_ms: float) -> None:
        if latency_ms < 0:
            raise ValueError("latency cannot be negative")
        self._latency[_pair(ip_a, ip_b)] = latency_ms

    def latency_between(self, ip_a: str, ip_b: str) -> float:
        return self._latency.get(_pair(ip_a, ip_b), self.default_latency_ms)

    def sever(self, ip_a: str, ip_b: str) -> None:
        """Cut the link between two hosts.  Sends fail immediately; frames
        already in flight still arrive."""
        self._severed.add(_pair(ip_a, ip_b))

    def heal(self, ip_a: str, ip_b: str) -> None:
        self._severed.discard(_pair(ip_a, ip_b))

    def is_severed(self, ip_a: str, ip_b: str) -> bool:
        return ip_a != ip_b and _pair(ip_a, ip_b) in self._severed

    # -- endpoints -----------------------------------------------------

    def attach(self, endpoint: Endpoint, handler: Handler) -> None:
        key = (endpoint.ip, endpoint.port)
        if key in self._listeners:
            raise BindError(f"{endpoint} is already in use")
        self._listeners[key] = handler

    def detach(self, endpoint: Endpoint) -> None:
        self._listeners.pop((endpoint.ip, endpoint.port), None)

    def is_listening(self, endpoint: Endpoint) -> bool:
        return (endpoint.ip, endpoint.port) in self._listeners

    def free_port(self, ip: str, port_range: PortRange) -> int:
        for port in port_range:
            if (ip, port) not in self._listeners:
                return port
        raise BindError(f"no free port on {ip} in {port_range}")

    # -- events --------------------------------------------------------

    def _push(self, delay_ms: float, action: Callable[[], None]) -> TimerHandle:
        if delay_ms < 0:
            raise ValueError("cannot schedule into the past")
        item = _Scheduled(self.clock.now_ms() + delay_ms, next(self._seq), action)
        heapq.heappush(self._heap, (item.deadline_ms, item.seq, item))
        return item.handle

    def call_later(self, delay_ms: float, callback: Callable[[], None]) -> TimerHandle:
        return self._push(delay_ms, callback)

    def send(self, envelope: MessageEnvelope) -> None:
        src_ip = envelope.source.addr.ip
        dest = envelope.destination.addr
        if self.is_severed(src_ip, dest.ip):
            raise UnreachableError(f"link {src_ip} <-> {dest.ip} is severed")
        if (dest.ip, dest.port) not in self._listeners:
            raise UnreachableError(f"nothing is listening on {dest}")
        envelope.sent_at = self.clock.now_ms()
        envelope.received_at = 0.0
        raw = encode_message(envelope)
        self._push(
            self.latency_between(src_ip, dest.ip),
            lambda: self._deliver(raw, dest),
        )

    def _deliver(self, raw: bytes, dest: Endpoint) -> None:
        handler = self._listeners.get((dest.ip, dest.port))
        envelope = decode_message(raw)
        envelope.received_at = self.clock.now_ms()
        if handler is None:
            self.lost.append(envelope)
            return
        self._delivered += 1
        self.trace.append(
            TraceRecord(
                time_ms=envelope.received_at,
                source=envelope.source.name_consistent,
                destination=envelope.destination.name_consistent,
                type=envelope.type,
                sub_type=envelope.sub_type,
                sub_sub_type=envelope.sub_sub_type,
            )
        )
        handler(envelope)

    @property
    def delivered_count(self) -> int:
        return self._delivered

    def run(self) -> None:
        """Drain the event heap until it empties, the horizon passes, or
        the event budget is spent."""
        self.stopped_reason = "drained"
        while self._heap:
            deadline, _, item = heapq.heappop(self._heap)
            if item.handle.cancelled:
                continue
            if deadline > self.horizon_ms:
                self.stopped_reason = "horizon"
                break
            if self._delivered >= self.event_budget:
                self.stopped_reason = "budget"
                break
            self.clock.advance_to(deadline)
            item.action()

    def run_until(self, deadline_ms: float) -> None:
        """Process every event due at or before ``deadline_ms``, then park
        the clock there.  Later events stay queued for the next call."""
        while self._heap and self._heap[0][0] <= deadline_ms:
            _, _, item = heapq.heappop(self._heap)
            if item.handle.cancelled:
                continue
            self.clock.advance_to(item.deadline_ms)
            item.action()
        if self.clock.now_ms() < deadline_ms:
            self.clock.advance_to(deadline_ms)

    def runtime_for_host(self, ip: str) -> "SimRuntime":
        return SimRuntime(self, ip)


class SimRuntime(Runtime):
    """A component's view of a :class:`SimNetwork`, pinned to one host."""

    def __init__(self, network: SimNetwork, host_ip: str):
        self.network = network
        self.host_ip = host_ip

    def now_ms(self) -> float:
        return self.network.clock.now_ms()

    def listen(self, endpoint: Endpoint, handler: Handler, port_range: PortRange) -> None:
        if endpoint.port not in port_range:
            raise BindError(
                f"port {endpoint.port} is outside this role's range {port_range}"
            )
        self.network.attach(endpoint, handler)

    def unlisten(self, endpoint: Endpoint) -> None:
        self.network.detach(endpoint)

    def send(self, envelope: MessageEnvelope) -> None:
        self.network.send(envelope)

    def call_later(self, delay_ms: float, callback: Callable[[], None]) -> TimerHandle:
        return self.network.call_later(delay_ms, callback)

    def find_free_port(self, ip: str, port_range: PortRange) -> int:
        return self.network.free_port(ip, port_range)


class RealRuntime(Runtime):
    """TCP transport for real deployments.

    Each send opens a short-lived connection and writes one frame.  Every
    accepted frame and every timer callback funnels through a single
    dispatcher thread, so component code never needs its own locking.
    """

    def __init__(self):
        self._clock = WallClock()
        self._queue: queue.Queue = queue.Queue()
        self._servers: dict = {}
        self._timers: list = []
        self._closed = threading.Event()
        self._dispatcher = threading.Thread(
            target=self._dispatch_loop, name="fogkit-dispatch", daemon=True
        )
        self._dispatcher.start()

    def now_ms(self) -> float:
        return self._clock.now_ms()

    def _dispatch_loop(self) -> None:
        while not self._closed.is_set():
            try:
                action = self._queue.get(timeout=0.2)
            except queue.Empty:
                continue
            try:
                action()
            except Exception:
                logger.exception("handler raised")

    def listen(self, endpoint: Endpoint, handler: Handler, port_range: PortRange) -> None:
        if endpoint.port not in port_range:
            raise BindError(
                f"port {endpoint.port} is outside this role's range {port_range}"
            )
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            server.bind((endpoint.ip, endpoint.port))
        except OSError as exc:
            server.close()
            raise BindError(f"cannot bind {endpoint}: {exc}") from None
        server.listen(32)
        server.settimeout(0.2)
        key = (endpoint.ip, endpoint.port)
        accept_thread = threading.Thread(
            target=self._accept_loop,
            args=(server, handler, key),
            name=f"fogkit-accept-{endpoint.port}",
            daemon=True,
        )
        self._servers[key] = server
        accept_thread.start()

    def _accept_loop(self, server: socket.socket, handler: Handler, key: tuple) -> None:
        while not self._closed.is_set() and self._servers.get(key) is server:
            try:
                conn, _ = server.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(
                target=self._read_connection,
                args=(conn, handler),
                daemon=True,
            ).start()
        server.close()

    def _read_connection(self, conn: socket.socket, handler: Handler) -> None:
        decoder = FrameDecoder()
        try:
            with conn:
                while True:
                    chunk = conn.recv(65536)
                    if not chunk:
                        break
                    for payload in decoder.feed(chunk):
                        try:
                            envelope = decode_message(payload)
                        except ProtocolError:
                            logger.warning("dropping undecodable frame")
                            continue
                        envelope.received_at = self.now_ms()
                        self._queue.put(lambda e=envelope: handler(e))
        except (OSError, TransportError):
            logger.debug("connection closed abruptly", exc_info=True)

    def unlisten(self, endpoint: Endpoint) -> None:
        server = self._servers.pop((endpoint.ip, endpoint.port), None)
        if server is not None:
            server.close()

    def send(self, envelope: MessageEnvelope) -> None:
        envelope.sent_at = self.now_ms()
        envelope.received_at = 0.0
        payload = frame(encode_message(envelope))
        dest = envelope.destination.addr
        try:
            with socket.create_connection((dest.ip, dest.port), timeout=5.0) as conn:
                conn.sendall(payload)
        except OSError as exc:
            raise UnreachableError(f"cannot reach {dest}: {exc}") from None

    def call_later(self, delay_ms: float, callback: Callable[[], None]) -> TimerHandle:
        handle = TimerHandle()

        def fire():
            if not handle.cancelled and not self._closed.is_set():
                self._queue.put(callback)

        timer = threading.Timer(delay_ms / 1000.0, fire)
        timer.daemon = True
        timer.start()
        self._timers.append(timer)
        return handle

    def find_free_port(self, ip: str, port_range: PortRange) -> int:
        for port in port_range:
            probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            try:
                probe.bind((ip, port))
            except OSError:
                continue
            finally:
                probe.close()
            if (ip, port) not in self._servers:
                return port
        raise BindError(f"no free port on {ip} in {port_range}")

    def close(self) -> None:
        self._closed.set()
        for timer in self._timers:
            timer.cancel()
        for server in list(self._servers.values()):
            server.close()
        self._servers.clear()
        self._dispatcher.join(timeout=1.0)
