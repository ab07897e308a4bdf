"""Master: registration authority, scheduler, data router and scaler.

One master assigns component ids, schedules placement requests onto the
actors it knows, routes sensory data and results between users and task
executors, pools cooling-off executors for reuse, and — when its
placement queue or host saturates — redirects users to a peer master or
asks an actor to bootstrap a brand-new one.  Peers and actors are also
found proactively through periodic discovery probes.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Callable

from . import config
from .appmodel import AppModelError, ApplicationSpec, SENSOR, build_application
from .component import Component, provisional_identity
from .profiling import HostProfile, ProfileError
from .protocol import (
    ComponentIdentity,
    ComponentRole,
    Endpoint,
    MessageEnvelope,
)
from .scheduler import (
    Decision,
    ExecTimeModel,
    SaturatedHostError,
    SchedulerError,
    get_best_master,
    init_scheduler_by_name,
)
from .transport import Runtime


@dataclass
class MasterConfig:
    scheduler_name: str = "RankingBased"
    scheduler_params: dict = field(default_factory=dict)
    queue_capacity: int = config.PLACEMENT_QUEUE_CAPACITY
    cool_off_ms: float = config.COOL_OFF_MS
    cpu_threshold: float = config.CPU_UTILIZATION_THRESHOLD
    policy_seed: int = 0
    remote_logger: ComponentIdentity | None = None
    seed_master: ComponentIdentity | None = None
    discovery_targets: tuple = ()
    profile_source: HostProfile | Callable | None = None
    profile_interval_ms: float = config.PROFILE_INTERVAL_MS
    discovery_interval_ms: float = config.DISCOVERY_INTERVAL_MS


@dataclass
class ActorRecord:
    identity: ComponentIdentity

    @property
    def host_id(self) -> str:
        return self.identity.host_id


@dataclass
class ExecutorRecord:
    identity: ComponentIdentity
    task_name: str
    user_id: str
    app_name: str
    actor_name: str
    cooling: bool = False

    @property
    def host_id(self) -> str:
        return self.identity.host_id


@dataclass
class UserSession:
    identity: ComponentIdentity
    app: ApplicationSpec | None = None
    label: str = ""
    state: str = "registered"  # registered|queued|parked|ready|failed
    decision: Decision | None = None
    executors: dict = field(default_factory=dict)   # taskName -> identity
    ready_tasks: set = field(default_factory=set)

    @property
    def user_id(self) -> str:
        return self.identity.component_id


class Master(Component):
    role = ComponentRole.Master

    def __init__(
        self,
        runtime: Runtime,
        endpoint: Endpoint,
        cfg: MasterConfig | None = None,
        env: dict | None = None,
    ):
        super().__init__(runtime, endpoint, env)
        self.cfg = cfg or MasterConfig()
        self.scheduler = init_scheduler_by_name(
            self.cfg.scheduler_name, self.cfg.scheduler_params
        )
        if self.scheduler is None:
            raise ValueError(f"unknown scheduler {self.cfg.scheduler_name!r}")
        if not self.scheduler.available:
            raise ValueError(
                f"scheduler {self.cfg.scheduler_name!r} is recognized "
                "but not implemented in this build"
            )
        self._ids = itertools.count(1)
        self._policy_rng = random.Random(self.cfg.policy_seed)
        self.model = ExecTimeModel()
        self.users: dict = {}            # userID -> UserSession
        self.actors: dict = {}           # nameConsistent -> ActorRecord
        self.executors: dict = {}        # (ip, port) -> ExecutorRecord
        self.peers: dict = {}            # nameConsistent -> identity
        self.placement_queue: list = []  # userIDs with an unfinished placement
        self.reuse_pool: dict = {}       # (appName, taskName) -> [ExecutorRecord]
        self._pending_actors: dict = {}  # advertised but not yet registered
        self._pending_lookups: list = [] # (executor identity, userID, children)
        self._overflow_users: list = []  # redirected once a new master exists
        self._scaling_out = False
        self._bootstrapping = self.cfg.seed_master is not None

        self.register_handler(("registration", "register"), self._handle_register)
        self.register_handler(("placement", "request"), self._handle_placement_request)
        self.register_handler(("placement", "lookup"), self._handle_lookup)
        self.register_handler(("acknowledgement", "ready"), self._handle_ready)
        self.register_handler(("acknowledgement", "waiting"), self._handle_waiting)
        self.register_handler(("acknowledgement", "terminated"), self._handle_terminated)
        self.register_handler(("data", "sensoryData"), self._handle_sensory_data)
        self.register_handler(("data", "finalResult"), self._handle_final_result)
        self.register_handler(("error", "execError"), self._handle_exec_error)
        self.register_handler(("error", "bootstrapFailed"), self._handle_bootstrap_failed)
        self.register_handler(("scaling", "getProfiles"), self._handle_get_profiles)
        self.register_handler(("scaling", "profilesInfo"), self._handle_profiles_info)
        self.register_handler(
            ("resourcesDiscovery", "requestActorsInfo"), self._handle_request_actors
        )
        self.register_handler(("resourcesDiscovery", "actorsInfo"), self._handle_actors_info)
        self.register_handler(
            ("resourcesDiscovery", "probe", "result"), self._handle_probe_result
        )
        self.register_handler(("log", "allResourcesProfiles"), self._handle_all_profiles)

    # -- lifecycle -----------------------------------------------------

    def on_start(self) -> None:
        if self.cfg.seed_master is not None:
            self.send(self.cfg.seed_master, ("scaling", "getProfiles"), {})
            self.peers[self.cfg.seed_master.name_consistent] = self.cfg.seed_master
        if self.cfg.profile_source is not None or self.cfg.remote_logger is not None:
            self.every(self.cfg.profile_interval_ms, self._profile_tick)
        if self.cfg.discovery_targets:
            self.every(self.cfg.discovery_interval_ms, self._discovery_tick)

    def self_profile(self) -> HostProfile | None:
        source = self.cfg.profile_source
        if source is None:
            return None
        return source() if callable(source) else source

    # -- registration --------------------------------------------------

    def _assign_id(self, envelope: MessageEnvelope) -> ComponentIdentity:
        assigned = envelope.source.with_component_id(str(next(self._ids)))
        self.send(
            envelope.source,
            ("registration", "registered"),
            {"componentID": assigned.component_id, "master": self.identity.to_wire()},
        )
        return assigned

    def _handle_register(self, envelope: MessageEnvelope) -> None:
        role = envelope.source.role
        if role is ComponentRole.Actor:
            self._register_actor(envelope)
        elif role is ComponentRole.User:
            self._register_user(envelope)
        elif role is ComponentRole.TaskExecutor:
            self._register_executor(envelope)
        else:
            self.log.warning("refusing to register a %s", role.value)

    def _register_actor(self, envelope: MessageEnvelope) -> None:
        assigned = self._assign_id(envelope)
        name = assigned.name_consistent
        if name in self.actors:
            self.log.warning("actor %s re-registered; replacing", name)
        self.actors[name] = ActorRecord(assigned)
        self._pending_actors.pop(name, None)
        self._bootstrapping = False
        resources = envelope.data.get("resources")
        if resources is not None:
            try:
                self.model.update_profile(
                    assigned.host_id, HostProfile.from_wire(resources)
                )
            except ProfileError as exc:
                self.log.warning("ignoring bad profile from %s: %s", name, exc)
        self._pump_parked()

    def _register_user(self, envelope: MessageEnvelope) -> None:
        assigned = self._assign_id(envelope)
        self.users[assigned.component_id] = UserSession(identity=assigned)

    def _register_executor(self, envelope: MessageEnvelope) -> None:
        assigned = self._assign_id(envelope)
        data = envelope.data
        record = ExecutorRecord(
            identity=assigned,
            task_name=str(data.get("taskName", "")),
            user_id=str(data.get("userID", "")),
            app_name=str(data.get("applicationName", "")),
            actor_name=str(data.get("actor", "")),
        )
        key = (assigned.addr.ip, assigned.addr.port)
        if key in self.executors:
            self.log.warning("executor at %s re-registered; replacing", key)
        self.executors[key] = record
        session = self.users.get(record.user_id)
        if session is not None:
            session.executors[record.task_name] = assigned
        self._resolve_lookups(record.user_id)

    # -- placement -----------------------------------------------------

    def _handle_placement_request(self, envelope: MessageEnvelope) -> None:
        session = self.users.get(envelope.source.component_id)
        if session is None:
            self.log.warning("placement request from unregistered user")
            return
        data = envelope.data
        app_name = str(data.get("applicationName", ""))
        try:
            app = build_application(
                app_name,
                label=str(data.get("label", "")),
                task_count=data.get("taskCount"),
            )
        except AppModelError as exc:
            self.send(
                session.identity, ("error", "unknownApplication"), {"error": str(exc)}
            )
            return
        session.app = app
        session.label = app.label
        profile = self.self_profile()
        overloaded = (
            profile is not None
            and profile.cpu_utilization >= self.cfg.cpu_threshold
        )
        if len(self.placement_queue) >= self.cfg.queue_capacity or overloaded:
            self._scale_out(session)
            return
        self.placement_queue.append(session.user_id)
        session.state = "queued"
        self._try_place(session)

    def _usable_actor_hosts(self) -> list:
        return self.model.usable_hosts(
            {record.host_id for record in self.actors.values()}
        )

    def _try_place(self, session: UserSession) -> None:
        hosts = self._usable_actor_hosts()
        if not hosts:
            if self._pending_actors or self._bootstrapping:
                session.state = "parked"  # actors are on their way
                return
            self._drop_placement(session)
            if self.peers:
                self._redirect(session)
            else:
                session.state = "failed"
                self.send(
                    session.identity,
                    ("error", "saturated"),
                    {"error": "no actors are available to run tasks"},
                )
            return
        try:
            decision = self.scheduler.schedule(
                session.app,
                self.model,
                hosts=hosts,
                user_host=session.identity.host_id,
            )
        except (SaturatedHostError, SchedulerError) as exc:
            self._drop_placement(session)
            session.state = "failed"
            self.send(session.identity, ("error", "saturated"), {"error": str(exc)})
            return
        session.decision = decision
        session.ready_tasks.clear()
        session.state = "queued"
        for task_name, host in decision.assignment:
            self._place_task(session, task_name, host)
        self._resolve_lookups(session.user_id)

    def _place_task(self, session: UserSession, task_name: str, host: str) -> None:
        task = session.app.tasks[task_name]
        spawn_data = {
            "userID": session.user_id,
            "taskName": task_name,
            "applicationName": session.app.name,
            "parents": list(task.parents),
            "children": list(task.children),
            "coolOffMs": self.cfg.cool_off_ms,
        }
        reused = self._take_reusable(session.app.name, task_name, host)
        if reused is not None:
            reused.user_id = session.user_id
            reused.cooling = False
            session.executors[task_name] = reused.identity
            delivered = self.send(
                reused.identity,
                ("placement", "reuse"),
                {
                    "userID": session.user_id,
                    "applicationName": session.app.name,
                    "parents": list(task.parents),
                    "children": list(task.children),
                    "coolOffMs": self.cfg.cool_off_ms,
                },
            )
            if delivered:
                return
            session.executors.pop(task_name, None)
            self.executors.pop(
                (reused.identity.addr.ip, reused.identity.addr.port), None
            )
        actor = self._actor_on_host(host)
        if actor is None:
            self.log.warning("no actor on host %s for %s", host, task_name)
            return
        if self.cfg.remote_logger is not None:
            spawn_data["remoteLogger"] = self.cfg.remote_logger.to_wire()
        self.send(actor.identity, ("placement", "runTaskExecutor"), spawn_data)

    def _actor_on_host(self, host: str) -> ActorRecord | None:
        for name in sorted(self.actors):
            if self.actors[name].host_id == host:
                return self.actors[name]
        return None

    def _take_reusable(
        self, app_name: str, task_name: str, host: str
    ) -> ExecutorRecord | None:
        pool = self.reuse_pool.get((app_name, task_name))
        if not pool:
            return None
        for index, record in enumerate(pool):
            if record.host_id == host:
                return pool.pop(index)
        return pool.pop(0)

    def _unpool(self, record: ExecutorRecord) -> None:
        pool = self.reuse_pool.get((record.app_name, record.task_name))
        if pool and record in pool:
            pool.remove(record)

    def _drop_placement(self, session: UserSession) -> None:
        if session.user_id in self.placement_queue:
            self.placement_queue.remove(session.user_id)

    def _pump_parked(self) -> None:
        for user_id in list(self.placement_queue):
            session = self.users.get(user_id)
            if session is not None and session.state == "parked":
                self._try_place(session)

    # -- executor bootstrap --------------------------------------------

    def _handle_lookup(self, envelope: MessageEnvelope) -> None:
        user_id = str(envelope.data.get("userID", ""))
        children = [str(c) for c in envelope.data.get("children", [])]
        if not self._answer_lookup(envelope.source, user_id, children):
            self._pending_lookups.append((envelope.source, user_id, children))

    def _answer_lookup(
        self, executor: ComponentIdentity, user_id: str, children: list
    ) -> bool:
        session = self.users.get(user_id)
        if session is None:
            return False
        if not all(name in session.executors for name in children):
            return False
        self.send(
            executor,
            ("placement", "lookup"),
            {
                "addresses": {
                    name: session.executors[name].to_wire() for name in children
                }
            },
        )
        return True

    def _resolve_lookups(self, user_id: str) -> None:
        still_pending = []
        for executor, pending_user, children in self._pending_lookups:
            if pending_user == user_id and self._answer_lookup(
                executor, pending_user, children
            ):
                continue
            still_pending.append((executor, pending_user, children))
        self._pending_lookups = still_pending

    def _handle_ready(self, envelope: MessageEnvelope) -> None:
        user_id = str(envelope.data.get("userID", ""))
        task_name = str(envelope.data.get("taskName", ""))
        session = self.users.get(user_id)
        if session is None or session.app is None:
            return
        session.ready_tasks.add(task_name)
        record = self.executors.get(
            (envelope.source.addr.ip, envelope.source.addr.port)
        )
        if record is not None:
            record.cooling = False
        if session.state != "ready" and set(session.app.task_names) <= session.ready_tasks:
            session.state = "ready"
            self._drop_placement(session)
            self.send(
                session.identity,
                ("acknowledgement", "serviceReady"),
                {"applicationName": session.app.name},
            )

    def _handle_bootstrap_failed(self, envelope: MessageEnvelope) -> None:
        self.log.warning(
            "executor %s failed to bootstrap: %s",
            envelope.source.name_log_printing,
            envelope.data.get("reason"),
        )

    # -- data plane ----------------------------------------------------

    def _handle_sensory_data(self, envelope: MessageEnvelope) -> None:
        session = self.users.get(envelope.source.component_id)
        if session is None or session.app is None or session.state != "ready":
            self.send(
                envelope.source,
                ("error", "notReady"),
                {"error": "no ready placement for this user"},
            )
            return
        payload = envelope.data.get("payload", {})
        for task_name in session.app.entry_tasks:
            target = session.executors.get(task_name)
            if target is None:
                self.log.warning("entry task %s has no executor", task_name)
                continue
            record = self.executors.get((target.addr.ip, target.addr.port))
            if record is not None:
                self._unpool(record)
                record.cooling = False
            self.send(
                target,
                ("data", "intermediateData"),
                {
                    "userID": session.user_id,
                    "fromTask": SENSOR,
                    "payload": payload,
                },
            )

    def _handle_final_result(self, envelope: MessageEnvelope) -> None:
        user_id = str(envelope.data.get("userID", ""))
        session = self.users.get(user_id)
        if session is None:
            self.log.warning("final result for unknown user %r", user_id)
            return
        task_name = str(envelope.data.get("taskName", ""))
        self.send(
            session.identity,
            ("data", "finalResult"),
            {"taskName": task_name, "payload": envelope.data.get("payload", {})},
        )
        if self.cfg.remote_logger is not None:
            self.send(
                self.cfg.remote_logger,
                ("log", "responseTime"),
                {"userID": user_id, "taskName": task_name},
            )

    def _handle_exec_error(self, envelope: MessageEnvelope) -> None:
        user_id = str(envelope.data.get("userID", ""))
        session = self.users.get(user_id)
        if session is None:
            return
        self.send(
            session.identity,
            ("error", "execError"),
            {
                "taskName": envelope.data.get("taskName"),
                "error": envelope.data.get("error"),
            },
        )

    # -- executor lifecycle --------------------------------------------

    def _handle_waiting(self, envelope: MessageEnvelope) -> None:
        key = (envelope.source.addr.ip, envelope.source.addr.port)
        record = self.executors.get(key)
        self.send(
            envelope.source,
            ("acknowledgement", "wait"),
            {"coolOffMs": self.cfg.cool_off_ms},
        )
        if record is not None and not record.cooling:
            record.cooling = True
            self.reuse_pool.setdefault(
                (record.app_name, record.task_name), []
            ).append(record)

    def _handle_terminated(self, envelope: MessageEnvelope) -> None:
        key = (envelope.source.addr.ip, envelope.source.addr.port)
        record = self.executors.pop(key, None)
        if record is None:
            return
        self._unpool(record)
        session = self.users.get(record.user_id)
        if session is not None:
            existing = session.executors.get(record.task_name)
            if existing is not None and existing.addr == envelope.source.addr:
                session.executors.pop(record.task_name, None)

    # -- scaling -------------------------------------------------------

    def _scale_out(self, session: UserSession) -> None:
        if self.peers:
            self._redirect(session)
            return
        self._overflow_users.append(session.user_id)
        if self._scaling_out:
            return
        target = self._least_utilized_actor()
        if target is None:
            self._overflow_users.remove(session.user_id)
            session.state = "failed"
            self.send(
                session.identity,
                ("error", "saturated"),
                {"error": "no peers and no actors to scale onto"},
            )
            return
        self._scaling_out = True
        data = {
            "schedulerName": self.cfg.scheduler_name,
            "schedulerParams": self.cfg.scheduler_params,
            "queueCapacity": self.cfg.queue_capacity,
            "coolOffMs": self.cfg.cool_off_ms,
        }
        if self.cfg.remote_logger is not None:
            data["remoteLogger"] = self.cfg.remote_logger.to_wire()
        self.send(target.identity, ("scaling", "initNewMaster"), data)

    def _least_utilized_actor(self) -> ActorRecord | None:
        best = None
        best_util = None
        for name in sorted(self.actors):
            record = self.actors[name]
            profile = self.model.profiles.get(record.host_id)
            util = profile.cpu_utilization if profile is not None else 1.0
            if best_util is None or util < best_util:
                best, best_util = record, util
        return best

    def _redirect(self, session: UserSession) -> None:
        choice = get_best_master(sorted(self.peers), self._policy_rng)
        if choice is None:
            return
        session.state = "redirected"
        self.send(
            session.identity,
            ("scaling", "redirect"),
            {"master": self.peers[choice].to_wire()},
        )

    def _handle_get_profiles(self, envelope: MessageEnvelope) -> None:
        self.peers[envelope.source.name_consistent] = envelope.source
        self.send(
            envelope.source,
            ("scaling", "profilesInfo"),
            {"actors": self._actor_listing()},
        )
        self._scaling_out = False
        overflow, self._overflow_users = self._overflow_users, []
        for user_id in overflow:
            session = self.users.get(user_id)
            if session is not None:
                self._redirect(session)

    def _actor_listing(self) -> list:
        listing = []
        for name in sorted(self.actors):
            record = self.actors[name]
            profile = self.model.profiles.get(record.host_id)
            listing.append(
                {
                    "identity": record.identity.to_wire(),
                    "resources": profile.to_wire() if profile is not None else None,
                }
            )
        return listing

    def _handle_profiles_info(self, envelope: MessageEnvelope) -> None:
        self.peers[envelope.source.name_consistent] = envelope.source
        self._adopt_actor_listing(envelope.data.get("actors", []))

    def _adopt_actor_listing(self, listing: list) -> None:
        for entry in listing:
            try:
                identity = ComponentIdentity.from_wire(entry["identity"])
            except (KeyError, TypeError, ValueError) as exc:
                self.log.warning("skipping malformed actor entry: %r", exc)
                continue
            resources = entry.get("resources")
            if resources is not None:
                try:
                    self.model.update_profile(
                        identity.host_id, HostProfile.from_wire(resources)
                    )
                except ProfileError:
                    pass
            name = identity.name_consistent
            if name not in self.actors and name not in self._pending_actors:
                self._pending_actors[name] = identity
                self.send(identity, ("resourcesDiscovery", "advertiseMaster"), {})

    # -- discovery -----------------------------------------------------

    def _discovery_tick(self) -> None:
        for target in self.cfg.discovery_targets:
            if target == self.endpoint:
                continue
            self.send(
                provisional_identity(target),
                ("resourcesDiscovery", "probe", "try"),
                {},
            )

    def _handle_probe_result(self, envelope: MessageEnvelope) -> None:
        try:
            identity = ComponentIdentity.from_wire(envelope.data["identity"])
        except (KeyError, TypeError, ValueError):
            return
        if identity.role is ComponentRole.Master:
            if identity.name_consistent == self.identity.name_consistent:
                return
            if identity.name_consistent not in self.peers:
                self.peers[identity.name_consistent] = identity
            self.send(identity, ("resourcesDiscovery", "requestActorsInfo"), {})
        elif identity.role is ComponentRole.Actor:
            name = identity.name_consistent
            if name not in self.actors and name not in self._pending_actors:
                self._pending_actors[name] = identity
                self.send(identity, ("resourcesDiscovery", "advertiseMaster"), {})

    def _handle_request_actors(self, envelope: MessageEnvelope) -> None:
        self.peers[envelope.source.name_consistent] = envelope.source
        self.send(
            envelope.source,
            ("resourcesDiscovery", "actorsInfo"),
            {"actors": self._actor_listing()},
        )

    def _handle_actors_info(self, envelope: MessageEnvelope) -> None:
        self.peers[envelope.source.name_consistent] = envelope.source
        self._adopt_actor_listing(envelope.data.get("actors", []))

    # -- profiling -----------------------------------------------------

    def _profile_tick(self) -> None:
        if self.cfg.remote_logger is None:
            return
        profile = self.self_profile()
        if profile is not None:
            self.send(
                self.cfg.remote_logger,
                ("log", "hostResources"),
                {"resources": profile.to_wire()},
            )
        self.send(self.cfg.remote_logger, ("log", "requestProfiles"), {})

    def _handle_all_profiles(self, envelope: MessageEnvelope) -> None:
        for host_id, resources in envelope.data.get("profiles", {}).items():
            try:
                self.model.update_profile(host_id, HostProfile.from_wire(resources))
            except ProfileError:
                self.log.warning("ignoring bad profile for host %s", host_id)
