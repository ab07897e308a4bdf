"""Port plan and tunable defaults shared by every component role.

Each role binds only inside its own port range.  The ranges can be
overridden through environment variables named ``<ROLE>_PORT_RANGE``
holding a ``"low-high"`` string.
"""
from __future__ import annotations

import os
from dataclasses import dataclass


@dataclass(frozen=True)
class PortRange:
    low: int
    high: int

    def __contains__(self, port: int) -> bool:
        return self.low <= port <= self.high

    def __iter__(self):
        return iter(range(self.low, self.high + 1))

    def __str__(self) -> str:
        return f"{self.low}-{self.high}"

    @classmethod
    def parse(cls, text: str) -> "PortRange":
        low, sep, high = text.partition("-")
        if not sep:
            raise ValueError(f"port range must look like 'low-high', got {text!r}")
        try:
            rng = cls(int(low), int(high))
        except ValueError:
            raise ValueError(f"invalid port range {text!r}") from None
        if not (1 <= rng.low <= rng.high <= 65535):
            raise ValueError(f"invalid port range {text!r}")
        return rng


_DEFAULT_RANGES = {
    "RemoteLogger": "5000-5000",
    "Master": "5001-5010",
    "Actor": "50000-50100",
    "User": "50101-50200",
    "TaskExecutor": "50201-60000",
}

_ENV_NAMES = {
    "RemoteLogger": "REMOTE_LOGGER_PORT_RANGE",
    "Master": "MASTER_PORT_RANGE",
    "Actor": "ACTOR_PORT_RANGE",
    "User": "USER_PORT_RANGE",
    "TaskExecutor": "TASK_EXECUTOR_PORT_RANGE",
}


def port_range_for(role_name: str, env: dict | None = None) -> PortRange:
    """Return the port range for a role, honouring environment overrides."""
    if role_name not in _DEFAULT_RANGES:
        raise KeyError(f"unknown role {role_name!r}")
    env = os.environ if env is None else env
    text = env.get(_ENV_NAMES[role_name], _DEFAULT_RANGES[role_name])
    return PortRange.parse(text)


# Timing defaults, all in milliseconds unless suffixed otherwise.
PROFILE_INTERVAL_MS = 5_000.0
DISCOVERY_INTERVAL_MS = 5_000.0
COOL_OFF_MS = 10_000.0
USER_TIMEOUT_MS = 30_000.0
REGISTER_RETRY_INITIAL_MS = 500.0
REGISTER_RETRY_CAP_MS = 8_000.0
LOOKUP_RETRY_MS = 500.0
LOOKUP_MAX_ATTEMPTS = 4

# Master capacity defaults.
PLACEMENT_QUEUE_CAPACITY = 8
CPU_UTILIZATION_THRESHOLD = 0.9

# Harness defaults.
SIM_HORIZON_MS = 60_000.0
SIM_EVENT_BUDGET = 100_000
