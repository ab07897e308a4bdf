"""Actor: the per-host agent that runs task executors.

An actor registers with one or more masters (its configured primary plus
any master that advertises itself), reports its host profile, spawns
task executors on request, and can bootstrap a whole new master on its
host when an overloaded master asks for one.
"""
from __future__ import annotations

from typing import Callable

from . import config
from .component import Component
from .profiling import HostProfile
from .protocol import (
    ComponentIdentity,
    ComponentRole,
    Endpoint,
    MessageEnvelope,
)
from .taskexecutor import ExecutorAssignment, TaskExecutor
from .transport import BindError, Runtime


class InProcessLauncher:
    """Starts executors and masters as in-process components.

    ``runtime_factory`` maps a host ip to the runtime new components
    should use; with the simulated network that pins them to the actor's
    host, with TCP it hands back the shared runtime.
    """

    def __init__(self, runtime_factory: Callable[[str], Runtime], env: dict | None = None):
        self.runtime_factory = runtime_factory
        self.env = env
        self.spawned: list = []

    def launch_task_executor(
        self,
        host_ip: str,
        endpoint: Endpoint,
        master: ComponentIdentity,
        actor: ComponentIdentity,
        assignment: ExecutorAssignment,
        cool_off_ms: float,
        remote_logger: ComponentIdentity | None,
    ) -> TaskExecutor:
        executor = TaskExecutor(
            self.runtime_factory(host_ip),
            endpoint,
            master=master,
            actor=actor,
            assignment=assignment,
            cool_off_ms=cool_off_ms,
            remote_logger=remote_logger,
            env=self.env,
        )
        executor.start()
        self.spawned.append(executor)
        return executor

    def launch_master(self, host_ip: str, endpoint: Endpoint, cfg) -> "Component":
        from .master import Master

        master = Master(self.runtime_factory(host_ip), endpoint, cfg, env=self.env)
        master.start()
        self.spawned.append(master)
        return master


class Actor(Component):
    role = ComponentRole.Actor

    def __init__(
        self,
        runtime: Runtime,
        endpoint: Endpoint,
        master: ComponentIdentity,
        launcher: InProcessLauncher,
        profile_source: HostProfile | Callable,
        remote_logger: ComponentIdentity | None = None,
        env: dict | None = None,
    ):
        super().__init__(runtime, endpoint, env)
        self.primary_master = master
        self.launcher = launcher
        self.profile_source = profile_source
        self.remote_logger = remote_logger
        self.masters: dict = {}        # nameConsistent -> identity (registered)
        self.hosted_executors: dict = {}  # (ip, port) -> TaskExecutor
        self.hosted_masters: list = []
        self._registering: dict = {}   # nameConsistent -> retry attempt
        self.register_handler(("registration", "registered"), self._handle_registered)
        self.register_handler(
            ("resourcesDiscovery", "advertiseMaster"), self._handle_advertise
        )
        self.register_handler(("placement", "runTaskExecutor"), self._handle_run_executor)
        self.register_handler(("scaling", "initNewMaster"), self._handle_init_new_master)
        self.register_handler(("acknowledgement", "terminated"), self._handle_terminated)

    def profile(self) -> HostProfile:
        source = self.profile_source
        return source() if callable(source) else source

    # -- registration --------------------------------------------------

    def on_start(self) -> None:
        self._register_with(self.primary_master)
        if self.remote_logger is not None:
            self.every(config.PROFILE_INTERVAL_MS, self._profile_tick)

    def _register_with(self, master: ComponentIdentity) -> None:
        name = master.name_consistent
        if name in self.masters or name in self._registering:
            return
        self._registering[name] = 0
        self._attempt_registration(master)

    def _attempt_registration(self, master: ComponentIdentity) -> None:
        name = master.name_consistent
        if name not in self._registering:
            return
        self.send(
            master,
            ("registration", "register"),
            {"resources": self.profile().to_wire()},
        )
        attempt = self._registering[name]
        self._registering[name] = attempt + 1
        backoff = min(
            config.REGISTER_RETRY_INITIAL_MS * (2 ** attempt),
            config.REGISTER_RETRY_CAP_MS,
        )
        self.call_later(backoff, lambda: self._attempt_registration(master))

    def _handle_registered(self, envelope: MessageEnvelope) -> None:
        name = envelope.source.name_consistent
        if name not in self._registering:
            return
        del self._registering[name]
        self.masters[name] = envelope.source
        if name == self.primary_master.name_consistent and not self.identity.is_registered:
            self.identity = self.identity.with_component_id(
                str(envelope.data["componentID"])
            )

    def _handle_advertise(self, envelope: MessageEnvelope) -> None:
        self._register_with(envelope.source)

    # -- spawning ------------------------------------------------------

    def _handle_run_executor(self, envelope: MessageEnvelope) -> None:
        master = envelope.source
        if master.name_consistent not in self.masters:
            self.log.warning(
                "ignoring runTaskExecutor from unknown master %s",
                master.name_consistent,
            )
            return
        data = envelope.data
        assignment = ExecutorAssignment(
            user_id=str(data.get("userID", "")),
            app_name=str(data.get("applicationName", "")),
            task_name=str(data.get("taskName", "")),
            parents=tuple(data.get("parents", ())),
            children=tuple(data.get("children", ())),
        )
        remote_logger = None
        if data.get("remoteLogger") is not None:
            remote_logger = ComponentIdentity.from_wire(data["remoteLogger"])
        try:
            port = self.runtime.find_free_port(
                self.endpoint.ip, config.port_range_for("TaskExecutor", self.env)
            )
            executor = self.launcher.launch_task_executor(
                self.endpoint.ip,
                Endpoint(self.endpoint.ip, port),
                master=master,
                actor=self.identity,
                assignment=assignment,
                cool_off_ms=float(data.get("coolOffMs", config.COOL_OFF_MS)),
                remote_logger=remote_logger,
            )
        except (BindError, OSError) as exc:
            self.log.warning("cannot start executor: %s", exc)
            self.send(
                master,
                ("error", "spawnFailed"),
                {"taskName": assignment.task_name, "error": str(exc)},
            )
            return
        self.hosted_executors[(executor.endpoint.ip, executor.endpoint.port)] = executor

    def _handle_init_new_master(self, envelope: MessageEnvelope) -> None:
        from .master import MasterConfig

        if envelope.source.name_consistent not in self.masters:
            self.log.warning("ignoring initNewMaster from unknown master")
            return
        data = envelope.data
        remote_logger = None
        if data.get("remoteLogger") is not None:
            remote_logger = ComponentIdentity.from_wire(data["remoteLogger"])
        cfg = MasterConfig(
            scheduler_name=str(data.get("schedulerName", "RankingBased")),
            scheduler_params=dict(data.get("schedulerParams", {})),
            queue_capacity=int(data.get("queueCapacity", config.PLACEMENT_QUEUE_CAPACITY)),
            cool_off_ms=float(data.get("coolOffMs", config.COOL_OFF_MS)),
            remote_logger=remote_logger,
            seed_master=envelope.source,
            profile_source=self.profile_source,
        )
        try:
            port = self.runtime.find_free_port(
                self.endpoint.ip, config.port_range_for("Master", self.env)
            )
            master = self.launcher.launch_master(
                self.endpoint.ip, Endpoint(self.endpoint.ip, port), cfg
            )
        except (BindError, OSError, ValueError) as exc:
            self.log.warning("cannot start a new master: %s", exc)
            return
        self.hosted_masters.append(master)

    def _handle_terminated(self, envelope: MessageEnvelope) -> None:
        self.hosted_executors.pop(
            (envelope.source.addr.ip, envelope.source.addr.port), None
        )

    # -- profiling -----------------------------------------------------

    def _profile_tick(self) -> None:
        if self.remote_logger is not None:
            self.send(
                self.remote_logger,
                ("log", "hostResources"),
                {"resources": self.profile().to_wire()},
            )
