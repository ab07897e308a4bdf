"""Central log sink.

The remote logger ingests every ``log/*`` message, validates resource
snapshots before trusting them, keeps the latest profile per host, and
answers profile queries from masters.  Records go to a pluggable store;
the file store survives close/reopen without losing fidelity.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .component import Component
from .profiling import HostProfile, ProfileError
from .protocol import ComponentRole, Endpoint, MessageEnvelope
from .transport import Runtime


@dataclass(frozen=True)
class LogRecord:
    """One ingested log line."""

    kind: str            # hostResources | responseTime | executionDuration | event
    source: str          # sender's consistent name
    host_id: str
    timestamp_ms: float  # sender's send stamp
    payload: dict = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "kind": self.kind,
            "source": self.source,
            "hostID": self.host_id,
            "timestampMs": self.timestamp_ms,
            "payload": self.payload,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "LogRecord":
        return cls(
            kind=str(obj["kind"]),
            source=str(obj["source"]),
            host_id=str(obj["hostID"]),
            timestamp_ms=float(obj["timestampMs"]),
            payload=dict(obj["payload"]),
        )


class LogStore:
    def append(self, record: LogRecord) -> None:
        raise NotImplementedError

    def records(self) -> list:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class MemoryLogStore(LogStore):
    def __init__(self):
        self._records: list = []

    def append(self, record: LogRecord) -> None:
        self._records.append(record)

    def records(self) -> list:
        return list(self._records)

    def close(self) -> None:
        pass


class FileLogStore(LogStore):
    """Newline-delimited JSON on disk; reopening resumes where it left off."""

    def __init__(self, path: str):
        self.path = path
        self._records: list = []
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._records.append(LogRecord.from_obj(json.loads(line)))
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, record: LogRecord) -> None:
        if self._fh.closed:
            raise ValueError("store is closed")
        self._records.append(record)
        self._fh.write(json.dumps(record.to_obj(), sort_keys=True) + "\n")
        self._fh.flush()

    def records(self) -> list:
        return list(self._records)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


class RemoteLogger(Component):
    role = ComponentRole.RemoteLogger

    def __init__(
        self,
        runtime: Runtime,
        endpoint: Endpoint,
        store: LogStore | None = None,
        env: dict | None = None,
    ):
        super().__init__(runtime, endpoint, env)
        self.store = store if store is not None else MemoryLogStore()
        self.latest_profiles: dict = {}  # hostID -> (timestamp_ms, resources wire)
        self.rejected = 0
        for sub in ("responseTime", "executionDuration", "event"):
            self.register_handler(("log", sub), self._handle_plain_log)
        self.register_handler(("log", "hostResources"), self._handle_host_resources)
        self.register_handler(("log", "requestProfiles"), self._handle_request_profiles)

    def _record(self, envelope: MessageEnvelope) -> LogRecord:
        record = LogRecord(
            kind=envelope.sub_type,
            source=envelope.source.name_consistent,
            host_id=envelope.source.host_id,
            timestamp_ms=envelope.sent_at,
            payload=envelope.data,
        )
        self.store.append(record)
        return record

    def _handle_plain_log(self, envelope: MessageEnvelope) -> None:
        self._record(envelope)

    def _handle_host_resources(self, envelope: MessageEnvelope) -> None:
        resources = envelope.data.get("resources")
        try:
            HostProfile.from_wire(resources)
        except ProfileError as exc:
            self.rejected += 1
            self.log.warning(
                "rejecting hostResources from %s: %s",
                envelope.source.name_consistent,
                exc,
            )
            return
        record = self._record(envelope)
        known = self.latest_profiles.get(record.host_id)
        if known is None or record.timestamp_ms >= known[0]:
            self.latest_profiles[record.host_id] = (record.timestamp_ms, resources)

    def _handle_request_profiles(self, envelope: MessageEnvelope) -> None:
        profiles = {
            host: resources for host, (_, resources) in self.latest_profiles.items()
        }
        self.send(
            envelope.source,
            ("log", "allResourcesProfiles"),
            {"profiles": profiles},
        )

    def on_stop(self) -> None:
        self.store.close()
