"""Scheduling policies: execution-time estimation, ranking-based greedy
placement, and an NSGA-II multi-objective search.

A policy turns an application graph plus a set of candidate hosts into a
:class:`Decision` mapping each task to a host.  Estimation starts from a
capability formula and switches to observed history as real execution
durations accumulate.
"""
from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .appmodel import ApplicationSpec, task_work_units, topological_layers
from .profiling import HostProfile


class SchedulerError(Exception):
    pass


class SaturatedHostError(SchedulerError):
    """Host reports no spare CPU capacity; estimates are undefined."""


class SchedulerUnavailableError(SchedulerError):
    """The policy name is recognized but this build does not implement it."""


@dataclass(frozen=True)
class Decision:
    """A complete task-to-host placement, in ranking order."""

    application: str
    assignment: tuple
    scheduler: str = ""
    objectives: tuple = ()

    @property
    def mapping(self) -> dict:
        return dict(self.assignment)

    def host_for(self, task_name: str) -> str:
        return self.mapping[task_name]

    def hosts_used(self) -> frozenset:
        return frozenset(host for _, host in self.assignment)


class ExecTimeModel:
    """Estimates how long a task takes on a host.

    With no history the estimate is ``work / (cores * GHz * idle_fraction)``
    milliseconds.  Once real durations have been observed for a
    (task, host) pair, their mean replaces the formula.
    """

    def __init__(
        self,
        profiles: dict | None = None,
        default_work: float = 100.0,
        work: dict | None = None,
    ):
        self.profiles: dict = dict(profiles or {})
        self.default_work = default_work
        self.work: dict = dict(work or {})
        self._history: dict = {}

    def update_profile(self, host_id: str, profile: HostProfile) -> None:
        self.profiles[host_id] = profile

    def work_for(self, task_name: str) -> float:
        if task_name in self.work:
            return self.work[task_name]
        return task_work_units(task_name, default=self.default_work)

    def observe(self, task_name: str, host_id: str, duration_ms: float) -> None:
        if duration_ms < 0:
            raise ValueError("durations cannot be negative")
        self._history.setdefault((task_name, host_id), []).append(duration_ms)

    def observations(self, task_name: str, host_id: str) -> tuple:
        return tuple(self._history.get((task_name, host_id), ()))

    def estimate(self, task_name: str, host_id: str) -> float:
        history = self._history.get((task_name, host_id))
        if history:
            return statistics.fmean(history)
        try:
            profile = self.profiles[host_id]
        except KeyError:
            raise SchedulerError(f"no profile for host {host_id!r}") from None
        idle = 1.0 - profile.cpu_utilization
        if idle <= 0.0:
            raise SaturatedHostError(f"host {host_id} is fully utilized")
        ghz = profile.frequency_mhz / 1000.0
        return self.work_for(task_name) / (profile.cores * ghz * idle)

    def usable_hosts(self, hosts: Iterable[str]) -> list:
        """Hosts with a profile and spare capacity, in sorted order."""
        usable = []
        for host in sorted(hosts):
            profile = self.profiles.get(host)
            if profile is not None and profile.cpu_utilization < 1.0:
                usable.append(host)
        return usable


def rank_tasks(
    app: ApplicationSpec, model: ExecTimeModel, hosts: Sequence[str]
) -> list:
    """Order tasks for greedy placement.

    Dependency layers are kept intact; inside each layer the task with
    the largest mean estimated time across the candidate hosts goes
    first.  Ties break alphabetically, so the order is deterministic.
    """
    if not hosts:
        raise SchedulerError("no candidate hosts")
    ranked = []
    for layer in topological_layers(app):
        means = {
            name: statistics.fmean(model.estimate(name, host) for host in hosts)
            for name in layer
        }
        ranked.extend(sorted(layer, key=lambda name: (-means[name], name)))
    return ranked


def tasks_assignment(
    app: ApplicationSpec,
    model: ExecTimeModel,
    hosts: Sequence[str] | None = None,
) -> Decision:
    """Greedy list scheduling over the ranked task order.

    Each task goes to the host where it would finish earliest, given the
    host's accumulated busy time and the finish times of the task's
    parents.  Ties pick the lexicographically smallest host id.
    """
    candidates = model.usable_hosts(model.profiles if hosts is None else hosts)
    if not candidates:
        raise SaturatedHostError("no usable hosts to schedule onto")
    ranked = rank_tasks(app, model, candidates)
    busy = {host: 0.0 for host in candidates}
    finish: dict = {}
    assignment = []
    for name in ranked:
        ready = max(
            (finish[p] for p in app.tasks[name].task_parents), default=0.0
        )
        best_host = None
        best_completion = None
        for host in candidates:
            completion = max(busy[host], ready) + model.estimate(name, host)
            if best_completion is None or completion < best_completion:
                best_host, best_completion = host, completion
        assignment.append((name, best_host))
        busy[best_host] = best_completion
        finish[name] = best_completion
    return Decision(
        application=app.name,
        assignment=tuple(assignment),
        scheduler="RankingBased",
    )


LatencyFn = Callable[[str, str], float]


def _latency_fn(latency: LatencyFn | dict | None) -> LatencyFn:
    if latency is None:
        return lambda a, b: 0.0
    if callable(latency):
        return latency
    table = {(min(a, b), max(a, b)): ms for (a, b), ms in latency.items()}

    def lookup(a: str, b: str) -> float:
        return table.get((min(a, b), max(a, b)), 0.0)

    return lookup


def estimate_cost(
    decision: Decision,
    app: ApplicationSpec,
    model: ExecTimeModel,
    latency: LatencyFn | dict | None = None,
    user_host: str | None = None,
) -> float:
    """Estimated end-to-end response time of a placement, in ms.

    The cost is the longest Sensor-to-Actuator path: task execution
    estimates on their assigned hosts plus link latency along every edge,
    including the virtual edges to and from the user's host.
    """
    lat = _latency_fn(latency)
    placed = decision.mapping
    missing = set(app.tasks) - set(placed)
    if missing:
        raise SchedulerError(f"decision does not place {sorted(missing)}")

    def edge(a_host: str | None, b_host: str | None) -> float:
        if a_host is None or b_host is None:
            return 0.0
        return lat(a_host, b_host)

    arrival: dict = {}
    for layer in topological_layers(app):
        for name in layer:
            task = app.tasks[name]
            host = placed[name]
            start = 0.0
            if task.is_entry:
                start = edge(user_host, host)
            for parent in task.task_parents:
                start = max(start, arrival[parent] + edge(placed[parent], host))
            arrival[name] = start + model.estimate(name, host)
    cost = 0.0
    for name in app.exit_tasks:
        cost = max(cost, arrival[name] + edge(placed[name], user_host))
    return cost


# ---------------------------------------------------------------------------
# NSGA-II
# ---------------------------------------------------------------------------

def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True when ``a`` is at least as good everywhere and better somewhere
    (minimization)."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def non_dominated_sort(objectives: Sequence[Sequence[float]]) -> list:
    """Partition solution indices into fronts (Deb's fast sort).

    Front 0 holds the non-dominated solutions, front 1 those dominated
    only by front 0, and so on.
    """
    n = len(objectives)
    dominated_by: list = [[] for _ in range(n)]
    domination_count = [0] * n
    fronts: list = [[]]
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(objectives[i], objectives[j]):
                dominated_by[i].append(j)
                domination_count[j] += 1
            elif dominates(objectives[j], objectives[i]):
                dominated_by[j].append(i)
                domination_count[i] += 1
    for i in range(n):
        if domination_count[i] == 0:
            fronts[0].append(i)
    current = 0
    while fronts[current]:
        nxt = []
        for i in fronts[current]:
            for j in dominated_by[i]:
                domination_count[j] -= 1
                if domination_count[j] == 0:
                    nxt.append(j)
        current += 1
        fronts.append(sorted(nxt))
    fronts.pop()
    return fronts


def crowding_distance(objectives: Sequence[Sequence[float]]) -> list:
    """Crowding distance of each solution within one front.

    Boundary solutions get infinity; interior ones accumulate the
    normalized spread of their neighbours per objective.  Objectives with
    zero range contribute nothing.
    """
    n = len(objectives)
    if n == 0:
        return []
    m = len(objectives[0])
    distance = [0.0] * n
    for k in range(m):
        order = sorted(range(n), key=lambda i: objectives[i][k])
        low = objectives[order[0]][k]
        high = objectives[order[-1]][k]
        distance[order[0]] = distance[order[-1]] = float("inf")
        if high == low:
            continue
        for pos in range(1, n - 1):
            gap = objectives[order[pos + 1]][k] - objectives[order[pos - 1]][k]
            distance[order[pos]] += gap / (high - low)
    return distance


DEFAULT_GA_PARAMS = {
    "populationSize": 16,
    "generations": 30,
    "crossoverRate": 0.9,
    "mutationRate": 0.1,
    "seed": 0,
}


@dataclass
class _Evaluated:
    genome: tuple
    objectives: tuple


def genome_objectives(
    genome: Sequence[int],
    task_order: Sequence[str],
    hosts: Sequence[str],
    app: ApplicationSpec,
    model: ExecTimeModel,
    latency: LatencyFn | dict | None,
    user_host: str | None,
) -> tuple:
    """(estimated response time, load imbalance) for one genome.

    The genome assigns ``hosts[gene]`` to each task in ``task_order``.
    Imbalance is the busiest host's total estimated work minus the
    idlest candidate's (idle hosts count as zero).
    """
    assignment = tuple(
        (name, hosts[gene]) for name, gene in zip(task_order, genome)
    )
    decision = Decision(app.name, assignment)
    response = estimate_cost(decision, app, model, latency, user_host)
    load = {host: 0.0 for host in hosts}
    for name, host in assignment:
        load[host] += model.estimate(name, host)
    imbalance = max(load.values()) - min(load.values())
    return (response, imbalance)


def schedule_nsga2(
    app: ApplicationSpec,
    model: ExecTimeModel,
    hosts: Sequence[str] | None = None,
    params: dict | None = None,
    latency: LatencyFn | dict | None = None,
    user_host: str | None = None,
) -> Decision:
    """Search placements with NSGA-II and return the best response-time
    solution from the final first front.

    Genomes are host indices per task; variation is single-point
    crossover plus per-gene uniform reset.  Survivor selection keeps the
    best ``populationSize`` of parents plus offspring by front rank, then
    crowding distance.  The same seed always yields the same decision.
    """
    merged = {**DEFAULT_GA_PARAMS, **(params or {})}
    pop_size = int(merged["populationSize"])
    generations = int(merged["generations"])
    crossover_rate = float(merged["crossoverRate"])
    mutation_rate = float(merged["mutationRate"])
    rng = random.Random(merged["seed"])
    if pop_size < 2:
        raise SchedulerError("populationSize must be at least 2")

    candidates = model.usable_hosts(model.profiles if hosts is None else hosts)
    if not candidates:
        raise SaturatedHostError("no usable hosts to schedule onto")
    task_order = sorted(app.tasks)
    n_tasks = len(task_order)
    n_hosts = len(candidates)

    def evaluate(genome: tuple) -> _Evaluated:
        return _Evaluated(
            genome,
            genome_objectives(
                genome, task_order, candidates, app, model, latency, user_host
            ),
        )

    population = [
        evaluate(tuple(rng.randrange(n_hosts) for _ in range(n_tasks)))
        for _ in range(pop_size)
    ]

    def rank_population(evaluated: list) -> tuple:
        fronts = non_dominated_sort([e.objectives for e in evaluated])
        rank = {}
        crowd = {}
        for front_index, front in enumerate(fronts):
            distances = crowding_distance([evaluated[i].objectives for i in front])
            for idx, dist in zip(front, distances):
                rank[idx] = front_index
                crowd[idx] = dist
        return fronts, rank, crowd

    def tournament(rank: dict, crowd: dict) -> _Evaluated:
        i, j = rng.randrange(len(population)), rng.randrange(len(population))
        if rank[i] < rank[j] or (rank[i] == rank[j] and crowd[i] > crowd[j]):
            return population[i]
        return population[j]

    for _ in range(generations):
        _, rank, crowd = rank_population(population)
        offspring = []
        while len(offspring) < pop_size:
            mother = tournament(rank, crowd).genome
            father = tournament(rank, crowd).genome
            if n_tasks > 1 and rng.random() < crossover_rate:
                cut = rng.randrange(1, n_tasks)
                first = mother[:cut] + father[cut:]
                second = father[:cut] + mother[cut:]
            else:
                first, second = mother, father
            for child in (first, second):
                mutated = tuple(
                    rng.randrange(n_hosts) if rng.random() < mutation_rate else gene
                    for gene in child
                )
                offspring.append(evaluate(mutated))
                if len(offspring) == pop_size:
                    break
        combined = population + offspring
        fronts = non_dominated_sort([e.objectives for e in combined])
        survivors: list = []
        for front in fronts:
            if len(survivors) + len(front) <= pop_size:
                survivors.extend(front)
            else:
                distances = crowding_distance([combined[i].objectives for i in front])
                by_crowding = sorted(
                    zip(front, distances), key=lambda pair: (-pair[1], pair[0])
                )
                survivors.extend(i for i, _ in by_crowding[: pop_size - len(survivors)])
            if len(survivors) == pop_size:
                break
        population = [combined[i] for i in survivors]

    final_front = non_dominated_sort([e.objectives for e in population])[0]
    best = min(
        (population[i] for i in final_front),
        key=lambda e: (e.objectives, e.genome),
    )
    return Decision(
        application=app.name,
        assignment=tuple(
            (name, candidates[gene]) for name, gene in zip(task_order, best.genome)
        ),
        scheduler="NSGA2",
        objectives=best.objectives,
    )


def get_best_master(masters: Sequence, rng: random.Random | None = None):
    """Pick which known master a redirected user should try next.

    Uniform choice under the caller's policy RNG; an empty list yields
    ``None`` rather than an error.
    """
    pool = sorted(masters)
    if not pool:
        return None
    rng = rng or random.Random()
    return pool[rng.randrange(len(pool))]


# ---------------------------------------------------------------------------
# Policy registry
# ---------------------------------------------------------------------------

class RankingBasedScheduler:
    name = "RankingBased"
    available = True

    def __init__(self, params: dict | None = None):
        self.params = dict(params or {})

    def schedule(self, app, model, hosts=None, latency=None, user_host=None) -> Decision:
        return tasks_assignment(app, model, hosts)


class NSGA2Scheduler:
    name = "NSGA2"
    available = True

    def __init__(self, params: dict | None = None):
        self.params = {**DEFAULT_GA_PARAMS, **(params or {})}

    def schedule(self, app, model, hosts=None, latency=None, user_host=None) -> Decision:
        return schedule_nsga2(
            app, model, hosts, self.params, latency=latency, user_host=user_host
        )


class PlaceholderScheduler:
    """A recognized policy name whose algorithm is not in this build."""

    available = False

    def __init__(self, name: str, params: dict | None = None):
        self.name = name
        self.params = dict(params or {})

    def schedule(self, app, model, hosts=None, latency=None, user_host=None) -> Decision:
        raise SchedulerUnavailableError(
            f"scheduler {self.name!r} is recognized but not implemented"
        )


_PLACEHOLDER_NAMES = ("OHNSGA", "NSGA3")


def init_scheduler_by_name(name: str, params: dict | None = None):
    """Instantiate a policy by its public name.

    Unknown names are a value (``None``), letting callers fall back or
    report; recognized-but-unimplemented names yield an object whose
    ``available`` flag is False.
    """
    if name == "RankingBased":
        return RankingBasedScheduler(params)
    if name == "NSGA2":
        return NSGA2Scheduler(params)
    if name in _PLACEHOLDER_NAMES:
        return PlaceholderScheduler(name, params)
    return None


SCHEDULER_NAMES = ("RankingBased", "NSGA2") + _PLACEHOLDER_NAMES
