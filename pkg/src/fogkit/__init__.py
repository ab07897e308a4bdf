"""fogkit: a compact edge/cloud orchestration framework.

Five cooperating component roles (User, Master, Actor, TaskExecutor,
RemoteLogger) exchange a strict eight-element JSON envelope over
length-prefixed TCP, schedule task graphs onto hosts with pluggable
policies, and can run either as real daemons or inside a deterministic
in-process simulation harness.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .protocol import (  # noqa: F401
    ComponentIdentity,
    ComponentRole,
    Endpoint,
    MessageEnvelope,
    MessageKind,
    classify,
    decode_message,
    encode_message,
    measure_network_delay,
)
