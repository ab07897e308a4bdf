"""Clocks.  Components never read the wall clock directly; they go through
an injected clock so the simulation harness can substitute virtual time."""
from __future__ import annotations

import time


class Clock:
    def now_ms(self) -> float:
        raise NotImplementedError


class WallClock(Clock):
    """Fractional milliseconds since the Unix epoch."""

    def now_ms(self) -> float:
        return time.time() * 1000.0


class VirtualClock(Clock):
    """Manually advanced clock used by the simulated network."""

    def __init__(self, start_ms: float = 0.0):
        self._now = start_ms

    def now_ms(self) -> float:
        return self._now

    def advance_to(self, t_ms: float) -> None:
        if t_ms < self._now:
            raise ValueError(f"clock cannot move backwards ({self._now} -> {t_ms})")
        self._now = t_ms
