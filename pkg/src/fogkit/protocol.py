"""Wire protocol: the eight-element JSON message envelope, component
identity/naming, the message-kind catalog, and the codec.

Every message any component exchanges is a single strict-JSON document with
exactly these top-level elements::

    source, destination, type, subType, subSubType, data,
    sentAtSourceTimestamp, receivedAtLocalTimestamp

``type``/``subType``/``subSubType`` categorise messages hierarchically and
must name a registered kind.  Encoding is canonical (sorted keys, compact
separators) so identical envelopes always produce identical bytes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, NamedTuple

import json


class ProtocolError(Exception):
    """Base class for wire-level failures."""


class CatalogError(ProtocolError):
    """(type, subType, subSubType) is not a registered message kind."""


class WireFormatError(ProtocolError):
    """Payload is not a parseable JSON document."""


class SchemaError(ProtocolError):
    """Document parsed but does not have the required envelope shape."""

    def __init__(self, message: str, missing: Iterable[str] = ()):
        super().__init__(message)
        self.missing = sorted(missing)


class UnstampedEnvelopeError(ProtocolError):
    """Delay was requested for an envelope that has not been received yet."""


class ComponentRole(str, Enum):
    User = "User"
    Master = "Master"
    Actor = "Actor"
    TaskExecutor = "TaskExecutor"
    RemoteLogger = "RemoteLogger"


ALL_ROLES = frozenset(ComponentRole)

UNASSIGNED_COMPONENT_ID = "?"


@dataclass(frozen=True)
class Endpoint:
    ip: str
    port: int

    def __post_init__(self):
        if not (1 <= self.port <= 65535):
            raise ValueError(f"port {self.port} outside 1-65535")

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"


@dataclass(frozen=True)
class ComponentIdentity:
    """Who a message is from or to, including the three naming forms."""

    role: ComponentRole
    addr: Endpoint
    host_id: str
    component_id: str = UNASSIGNED_COMPONENT_ID
    name: str = ""
    name_consistent: str = ""
    name_log_printing: str = ""

    @property
    def is_registered(self) -> bool:
        return self.component_id != UNASSIGNED_COMPONENT_ID

    def with_component_id(self, component_id: str) -> "ComponentIdentity":
        ident = replace(self, component_id=component_id)
        return replace(
            ident,
            name_log_printing=f"{ident.role.value}-{component_id}_"
            f"{ident.addr.ip}-{ident.addr.port}",
        )

    def to_wire(self) -> dict:
        return {
            "addr": [self.addr.ip, self.addr.port],
            "componentID": self.component_id,
            "hostID": self.host_id,
            "name": self.name,
            "nameConsistent": self.name_consistent,
            "nameLogPrinting": self.name_log_printing,
            "role": self.role.value,
        }

    @classmethod
    def from_wire(cls, obj: Any) -> "ComponentIdentity":
        if not isinstance(obj, dict):
            raise SchemaError("identity must be an object")
        missing = _IDENTITY_KEYS - set(obj)
        if missing:
            raise SchemaError(f"identity missing {sorted(missing)}", missing)
        try:
            role = ComponentRole(obj["role"])
        except ValueError:
            raise SchemaError(f"unknown role {obj['role']!r}") from None
        addr = obj["addr"]
        if not (isinstance(addr, (list, tuple)) and len(addr) == 2):
            raise SchemaError("identity addr must be [ip, port]")
        try:
            endpoint = Endpoint(str(addr[0]), int(addr[1]))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"bad identity addr: {exc}") from None
        return cls(
            role=role,
            addr=endpoint,
            host_id=str(obj["hostID"]),
            component_id=str(obj["componentID"]),
            name=str(obj["name"]),
            name_consistent=str(obj["nameConsistent"]),
            name_log_printing=str(obj["nameLogPrinting"]),
        )


_IDENTITY_KEYS = {
    "addr", "componentID", "hostID", "name", "nameConsistent",
    "nameLogPrinting", "role",
}


def make_identity(
    role: ComponentRole,
    endpoint: Endpoint,
    host_id: str | None = None,
    component_id: str = UNASSIGNED_COMPONENT_ID,
) -> ComponentIdentity:
    """Build a self-describing identity with the canonical naming forms.

    ``nameConsistent`` is always ``<RoleName>_<hostID>`` and survives
    re-registration; ``nameLogPrinting`` additionally carries the component
    id and bound address.
    """
    host = endpoint.ip if host_id is None else host_id
    return ComponentIdentity(
        role=role,
        addr=endpoint,
        host_id=host,
        component_id=component_id,
        name=role.value,
        name_consistent=f"{role.value}_{host}",
        name_log_printing=f"{role.value}-{component_id}_{endpoint.ip}-{endpoint.port}",
    )


class MessageKind(NamedTuple):
    type: str
    sub_type: str
    sub_sub_type: str = ""


@dataclass(frozen=True)
class KindRow:
    """One permitted (sender, receiver) pairing for a message kind."""

    kind: MessageKind
    sender: frozenset
    receiver: frozenset
    description: str


@dataclass(frozen=True)
class CatalogEntry:
    """All rows registered for one message kind."""

    kind: MessageKind
    rows: tuple

    @property
    def senders(self) -> frozenset:
        out: frozenset = frozenset()
        for row in self.rows:
            out = out | row.sender
        return out

    @property
    def receivers(self) -> frozenset:
        out: frozenset = frozenset()
        for row in self.rows:
            out = out | row.receiver
        return out

    @property
    def description(self) -> str:
        return "; ".join(row.description for row in self.rows)

    def permits(self, sender: ComponentRole, receiver: ComponentRole) -> bool:
        return any(sender in row.sender and receiver in row.receiver for row in self.rows)


def _row(type_, sub, subsub, senders, receivers, description) -> KindRow:
    def as_roles(value):
        if value == "*":
            return ALL_ROLES
        if isinstance(value, ComponentRole):
            return frozenset({value})
        return frozenset(value)

    return KindRow(
        kind=MessageKind(type_, sub, subsub),
        sender=as_roles(senders),
        receiver=as_roles(receivers),
        description=description,
    )


_M = ComponentRole.Master
_A = ComponentRole.Actor
_TE = ComponentRole.TaskExecutor
_U = ComponentRole.User
_RL = ComponentRole.RemoteLogger

#: Documented message kinds.  The placement/data/acknowledgement/scaling/
#: log/resourcesDiscovery rows mirror the framework's published protocol
#: table; the registration, placement-request, redirect, extra log and
#: error rows are additions this codebase needs (the catalog is data-driven
#: and additive).
CATALOG_ROWS: tuple = (
    _row("placement", "runTaskExecutor", "", _M, _A,
         "scheduling finished; start a fresh task executor (no reuse)"),
    _row("placement", "lookup", "", _TE, _M,
         "executor asks for the addresses of its child executors"),
    _row("placement", "lookup", "", _M, _TE,
         "reply carrying the requested child executor addresses"),
    _row("acknowledgement", "ready", "", _TE, _M,
         "executor has resolved its children and is ready"),
    _row("acknowledgement", "serviceReady", "", _M, _U,
         "all executors ready; user may start sending sensory data"),
    _row("data", "sensoryData", "", _U, _M,
         "raw input forwarded from the user"),
    _row("data", "intermediateData", "", _M, _TE,
         "master feeds sensory data to entry-task executors"),
    _row("data", "intermediateData", "", _TE, _TE,
         "executor forwards its output to a dependent executor"),
    _row("acknowledgement", "waiting", "", _TE, _M,
         "executor asks whether it may enter its cool-off period"),
    _row("acknowledgement", "wait", "", _M, _TE,
         "master tells the executor to start cooling off immediately"),
    _row("placement", "reuse", "", _M, _TE,
         "scheduling finished; rebind a cooling-off executor (reuse)"),
    _row("data", "finalResult", "", _TE, _M,
         "executor delivers a final result to the master"),
    _row("data", "finalResult", "", _M, _U,
         "master delivers a final result to the user"),
    _row("scaling", "getProfiles", "", _M, _M,
         "one master requests registry profiles from another"),
    _row("scaling", "profilesInfo", "", _M, _M,
         "profiles reply used to seed a scaled-out master"),
    _row("scaling", "initNewMaster", "", _M, _A,
         "master asks an actor to bootstrap a new master"),
    _row("log", "allResourcesProfiles", "", _RL, _M,
         "latest host profiles, sent in response to requestProfiles"),
    _row("resourcesDiscovery", "requestActorsInfo", "", _M, _M,
         "ask a peer master for its registered actors"),
    _row("resourcesDiscovery", "actorsInfo", "", _M, _M,
         "registered-actor listing sent to a peer master"),
    _row("resourcesDiscovery", "advertiseMaster", "", _M, _A,
         "master advertises itself so the actor can register"),
    _row("resourcesDiscovery", "probe", "try", "*", "*",
         "ask any component to reveal its role"),
    _row("resourcesDiscovery", "probe", "result", "*", "*",
         "reply to a probe, carrying the responder's role"),
    _row("log", "hostResources", "", {_A, _M}, _RL,
         "periodic host profile snapshot"),
    # Additions beyond the published table.
    _row("registration", "register", "", {_U, _A, _TE}, _M,
         "request a unique component id from a master"),
    _row("registration", "registered", "", _M, {_U, _A, _TE},
         "reply carrying the assigned component id"),
    _row("placement", "request", "", _U, _M,
         "user asks for an application placement"),
    _row("scaling", "redirect", "", _M, _U,
         "busy master names a peer the user should re-request at"),
    _row("log", "requestProfiles", "", _M, _RL,
         "master asks the remote logger for the latest host profiles"),
    _row("log", "responseTime", "", _M, _RL,
         "per-result response event emitted while routing final results"),
    _row("log", "executionDuration", "", _TE, _RL,
         "buffered per-task execution durations"),
    _row("log", "event", "", "*", _RL,
         "free-form operational event"),
    _row("acknowledgement", "terminated", "", _TE, {_A, _M},
         "executor announces the end of its cool-off lifecycle"),
    _row("error", "unknownApplication", "", _M, _U,
         "placement named an application the master does not know"),
    _row("error", "notReady", "", _M, _U,
         "sensory data arrived before the service became ready"),
    _row("error", "saturated", "", _M, _U,
         "no capacity, no peers and no actors to scale onto"),
    _row("error", "execError", "", {_TE, _M}, {_M, _U},
         "task logic failed; diagnostic attached"),
    _row("error", "spawnFailed", "", _A, _M,
         "actor could not start the requested executor"),
    _row("error", "bootstrapFailed", "", _TE, _M,
         "executor gave up during bootstrap"),
)


def _build_catalog() -> dict:
    grouped: dict = {}
    for row in CATALOG_ROWS:
        grouped.setdefault(row.kind, []).append(row)
    return {kind: CatalogEntry(kind, tuple(rows)) for kind, rows in grouped.items()}


CATALOG: dict = _build_catalog()


def classify(kind: tuple) -> CatalogEntry | None:
    """Look a (type, subType, subSubType) triple up in the catalog.

    Absent kinds are a value (``None``), not an error.
    """
    return CATALOG.get(MessageKind(*kind))


@dataclass
class MessageEnvelope:
    """The eight-element wire record.

    ``sent_at`` / ``received_at`` are fractional milliseconds since the
    epoch; 0.0 means the stamp has not been applied yet.
    """

    source: ComponentIdentity
    destination: ComponentIdentity
    type: str
    sub_type: str
    sub_sub_type: str = ""
    data: dict = field(default_factory=dict)
    sent_at: float = 0.0
    received_at: float = 0.0

    @property
    def kind(self) -> MessageKind:
        return MessageKind(self.type, self.sub_type, self.sub_sub_type)


_ENVELOPE_KEYS = {
    "source", "destination", "type", "subType", "subSubType", "data",
    "sentAtSourceTimestamp", "receivedAtLocalTimestamp",
}


def envelope_to_wire(envelope: MessageEnvelope) -> dict:
    return {
        "source": envelope.source.to_wire(),
        "destination": envelope.destination.to_wire(),
        "type": envelope.type,
        "subType": envelope.sub_type,
        "subSubType": envelope.sub_sub_type,
        "data": envelope.data,
        "sentAtSourceTimestamp": envelope.sent_at,
        "receivedAtLocalTimestamp": envelope.received_at,
    }


def encode_message(envelope: MessageEnvelope) -> bytes:
    """Serialise an envelope to canonical UTF-8 JSON.

    Raises :class:`CatalogError` when the envelope's kind is unknown, so a
    component can never emit a message the rest of the system would reject.
    """
    if envelope.kind not in CATALOG:
        raise CatalogError(f"unknown message kind {tuple(envelope.kind)}")
    return json.dumps(
        envelope_to_wire(envelope), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")


def decode_message(raw: bytes | str) -> MessageEnvelope:
    """Parse one wire document back into an envelope.

    Requires exactly the eight envelope elements at the top level; the
    ``data`` subtree is passed through verbatim, unknown keys included.
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WireFormatError(f"not UTF-8: {exc}") from None
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise WireFormatError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise SchemaError("top level must be an object")
    missing = _ENVELOPE_KEYS - set(obj)
    if missing:
        raise SchemaError(
            f"envelope missing elements: {sorted(missing)}", missing
        )
    extras = set(obj) - _ENVELOPE_KEYS
    if extras:
        raise SchemaError(f"envelope has extra elements: {sorted(extras)}")
    if not isinstance(obj["data"], dict):
        raise SchemaError("data must be an object")
    for key in ("type", "subType", "subSubType"):
        if not isinstance(obj[key], str):
            raise SchemaError(f"{key} must be a string")
    for key in ("sentAtSourceTimestamp", "receivedAtLocalTimestamp"):
        if not isinstance(obj[key], (int, float)) or isinstance(obj[key], bool):
            raise SchemaError(f"{key} must be a number")
    envelope = MessageEnvelope(
        source=ComponentIdentity.from_wire(obj["source"]),
        destination=ComponentIdentity.from_wire(obj["destination"]),
        type=obj["type"],
        sub_type=obj["subType"],
        sub_sub_type=obj["subSubType"],
        data=obj["data"],
        sent_at=float(obj["sentAtSourceTimestamp"]),
        received_at=float(obj["receivedAtLocalTimestamp"]),
    )
    if envelope.kind not in CATALOG:
        raise CatalogError(f"unknown message kind {tuple(envelope.kind)}")
    return envelope


class NetworkDelay(NamedTuple):
    ms: float
    skewed: bool


def measure_network_delay(envelope: MessageEnvelope) -> NetworkDelay:
    """Receive stamp minus send stamp.

    Negative values (clock skew between hosts) are returned as-is but
    flagged.  Envelopes that were never received cannot be measured.
    """
    if envelope.received_at == 0.0:
        raise UnstampedEnvelopeError(
            "receivedAtLocalTimestamp is unset; envelope was never received"
        )
    delay = envelope.received_at - envelope.sent_at
    return NetworkDelay(delay, delay < 0)
