"""Host resource profiles: the snapshot shape components report to the
remote logger and schedulers consume when estimating execution times.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any


class ProfileError(ValueError):
    """A resource snapshot violated its own invariants."""


@dataclass(frozen=True)
class HostProfile:
    """A point-in-time picture of one host's CPU and memory.

    ``frequency_mhz`` is the advertised clock in MHz; utilizations are
    fractions in [0, 1] and can never exceed their recorded peaks.
    """

    cores: int
    frequency_mhz: float
    cpu_utilization: float
    cpu_utilization_peak: float = 1.0
    memory_maximum: int = 0
    memory_utilization: float = 0.0
    memory_utilization_peak: float = 1.0

    def __post_init__(self):
        if self.cores < 1:
            raise ProfileError(f"cores must be >= 1, got {self.cores}")
        if self.frequency_mhz <= 0:
            raise ProfileError(f"frequency must be positive, got {self.frequency_mhz}")
        if self.memory_maximum < 0:
            raise ProfileError("memory maximum cannot be negative")
        for label, value, peak in (
            ("cpu", self.cpu_utilization, self.cpu_utilization_peak),
            ("memory", self.memory_utilization, self.memory_utilization_peak),
        ):
            if not 0.0 <= value <= 1.0:
                raise ProfileError(f"{label} utilization {value} outside [0, 1]")
            if not 0.0 <= peak <= 1.0:
                raise ProfileError(f"{label} utilization peak {peak} outside [0, 1]")
            if value > peak:
                raise ProfileError(
                    f"{label} utilization {value} exceeds recorded peak {peak}"
                )

    def to_wire(self) -> dict:
        """The ``resources`` object carried in log/hostResources messages."""
        return {
            "cpu": {
                "cores": self.cores,
                "frequency": self.frequency_mhz,
                "utilization": self.cpu_utilization,
                "utilizationPeak": self.cpu_utilization_peak,
            },
            "memory": {
                "maximum": self.memory_maximum,
                "utilization": self.memory_utilization,
                "utilizationPeak": self.memory_utilization_peak,
            },
        }

    @classmethod
    def from_wire(cls, obj: Any) -> "HostProfile":
        if not isinstance(obj, dict):
            raise ProfileError("resources must be an object")
        try:
            cpu = obj["cpu"]
            memory = obj["memory"]
            return cls(
                cores=int(cpu["cores"]),
                frequency_mhz=float(cpu["frequency"]),
                cpu_utilization=float(cpu["utilization"]),
                cpu_utilization_peak=float(cpu["utilizationPeak"]),
                memory_maximum=int(memory["maximum"]),
                memory_utilization=float(memory["utilization"]),
                memory_utilization_peak=float(memory["utilizationPeak"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ProfileError):
                raise
            raise ProfileError(f"malformed resources object: {exc!r}") from None

    def bump_peaks(self) -> "HostProfile":
        """Return a copy whose peaks cover the current utilizations."""
        return HostProfile(
            cores=self.cores,
            frequency_mhz=self.frequency_mhz,
            cpu_utilization=self.cpu_utilization,
            cpu_utilization_peak=max(self.cpu_utilization_peak, self.cpu_utilization),
            memory_maximum=self.memory_maximum,
            memory_utilization=self.memory_utilization,
            memory_utilization_peak=max(
                self.memory_utilization_peak, self.memory_utilization
            ),
        )


def sample_host_profile() -> HostProfile:
    """Snapshot the machine this process runs on (real deployments only)."""
    import psutil

    freq = psutil.cpu_freq()
    mem = psutil.virtual_memory()
    utilization = psutil.cpu_percent(interval=0.1) / 100.0
    return HostProfile(
        cores=psutil.cpu_count(logical=True) or 1,
        frequency_mhz=float(freq.max or freq.current or 1000.0) if freq else 1000.0,
        cpu_utilization=min(utilization, 1.0),
        cpu_utilization_peak=1.0,
        memory_maximum=int(mem.total),
        memory_utilization=min(mem.percent / 100.0, 1.0),
        memory_utilization_peak=1.0,
    )
