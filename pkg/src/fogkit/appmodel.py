"""Application model: dependency graphs of named tasks plus the built-in
task implementations.

An application is a DAG whose vertices are tasks and whose two virtual
endpoints, ``Sensor`` and ``Actuator``, stand for the user's input and
output sides.  Entry tasks list ``Sensor`` among their parents, exit
tasks list ``Actuator`` among their children, and every task must lie on
a Sensor-to-Actuator path.

Payloads flow through the graph as plain dicts.  Each task merges the
keys it produces into the payload it received, so downstream tasks (and
ultimately the user) always see the union of everything computed so far.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable

SENSOR = "Sensor"
ACTUATOR = "Actuator"
VIRTUAL_VERTICES = frozenset({SENSOR, ACTUATOR})


class AppModelError(ValueError):
    """The application graph is malformed."""


class TaskExecutionError(Exception):
    """Task logic failed on the given payload."""


@dataclass(frozen=True)
class TaskNode:
    """One vertex of an application graph."""

    name: str
    task_id: int
    parents: tuple
    children: tuple

    @property
    def is_entry(self) -> bool:
        return SENSOR in self.parents

    @property
    def is_exit(self) -> bool:
        return ACTUATOR in self.children

    @property
    def task_parents(self) -> tuple:
        return tuple(p for p in self.parents if p not in VIRTUAL_VERTICES)

    @property
    def task_children(self) -> tuple:
        return tuple(c for c in self.children if c not in VIRTUAL_VERTICES)


@dataclass(frozen=True)
class ApplicationSpec:
    """A validated application graph."""

    name: str
    tasks: dict
    label: str = ""

    def __post_init__(self):
        _validate_graph(self)

    @property
    def task_names(self) -> tuple:
        return tuple(self.tasks)

    @property
    def entry_tasks(self) -> tuple:
        return tuple(t.name for t in self.tasks.values() if t.is_entry)

    @property
    def exit_tasks(self) -> tuple:
        return tuple(t.name for t in self.tasks.values() if t.is_exit)


def _validate_graph(app: ApplicationSpec) -> None:
    if not app.tasks:
        raise AppModelError(f"application {app.name!r} has no tasks")
    names = set(app.tasks)
    for task in app.tasks.values():
        if task.name in VIRTUAL_VERTICES:
            raise AppModelError(f"{task.name!r} is reserved for the virtual vertices")
        for parent in task.task_parents:
            if parent not in names:
                raise AppModelError(f"{task.name}: unknown parent {parent!r}")
            if task.name not in app.tasks[parent].task_children:
                raise AppModelError(
                    f"edge {parent} -> {task.name} is not mirrored in "
                    f"{parent}'s children"
                )
        for child in task.task_children:
            if child not in names:
                raise AppModelError(f"{task.name}: unknown child {child!r}")
            if task.name not in app.tasks[child].task_parents:
                raise AppModelError(
                    f"edge {task.name} -> {child} is not mirrored in "
                    f"{child}'s parents"
                )
    if not any(t.is_entry for t in app.tasks.values()):
        raise AppModelError(f"application {app.name!r} has no entry task")
    if not any(t.is_exit for t in app.tasks.values()):
        raise AppModelError(f"application {app.name!r} has no exit task")
    layers = topological_layers(app)  # raises on cycles
    ordered = {name for layer in layers for name in layer}
    if ordered != names:
        raise AppModelError("not every task is reachable")
    # Every task must sit on some Sensor -> Actuator path.
    reaches_exit: set = set()
    for layer in reversed(layers):
        for name in layer:
            task = app.tasks[name]
            if task.is_exit or any(c in reaches_exit for c in task.task_children):
                reaches_exit.add(name)
    from_entry: set = set()
    for layer in layers:
        for name in layer:
            task = app.tasks[name]
            if task.is_entry or any(p in from_entry for p in task.task_parents):
                from_entry.add(name)
    stranded = names - (reaches_exit & from_entry)
    if stranded:
        raise AppModelError(
            f"tasks not on any Sensor->Actuator path: {sorted(stranded)}"
        )


def topological_layers(app: ApplicationSpec) -> list:
    """Group task names into dependency layers (Kahn's algorithm).

    Layer k holds every task whose longest chain of task parents has
    length k.  Raises :class:`AppModelError` on cycles.
    """
    indegree = {name: len(task.task_parents) for name, task in app.tasks.items()}
    current = sorted(name for name, deg in indegree.items() if deg == 0)
    layers = []
    seen = 0
    while current:
        layers.append(current)
        seen += len(current)
        following = []
        for name in current:
            for child in app.tasks[name].task_children:
                indegree[child] -= 1
                if indegree[child] == 0:
                    following.append(child)
        current = sorted(following)
    if seen != len(app.tasks):
        raise AppModelError("application graph has a cycle")
    return layers


def application_from_obj(obj: dict) -> ApplicationSpec:
    """Build an application from its JSON object form."""
    if not isinstance(obj, dict) or "name" not in obj or "tasks" not in obj:
        raise AppModelError("application object needs 'name' and 'tasks'")
    tasks = {}
    for entry in obj["tasks"]:
        try:
            node = TaskNode(
                name=str(entry["name"]),
                task_id=int(entry["taskID"]),
                parents=tuple(entry["parents"]),
                children=tuple(entry["children"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise AppModelError(f"malformed task entry: {exc!r}") from None
        if node.name in tasks:
            raise AppModelError(f"duplicate task name {node.name!r}")
        tasks[node.name] = node
    return ApplicationSpec(
        name=str(obj["name"]), tasks=tasks, label=str(obj.get("label", ""))
    )


def load_application(path: str) -> ApplicationSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return application_from_obj(json.load(fh))


# ---------------------------------------------------------------------------
# Task logic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskLogic:
    """An executable task: id, relative work units and the function."""

    name: str
    task_id: int
    work_units: float
    func: Callable[[dict], dict] = field(repr=False)


def _naive_formula_inputs(payload: dict) -> tuple:
    try:
        return float(payload["a"]), float(payload["b"]), float(payload["c"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TaskExecutionError(f"need numeric a, b, c: {exc!r}") from None


def _nf0(payload: dict) -> dict:
    a, b, c = _naive_formula_inputs(payload)
    return {"resultPart0": a + b + c}


def _nf1(payload: dict) -> dict:
    a, b, c = _naive_formula_inputs(payload)
    try:
        return {"resultPart1": a * a / (b * b + c * c)}
    except ZeroDivisionError:
        raise TaskExecutionError("b and c cannot both be zero") from None


def _nf2(payload: dict) -> dict:
    a, b, c = _naive_formula_inputs(payload)
    try:
        return {"resultPart2": 1 / a + 2 / b + 3 / c}
    except ZeroDivisionError:
        raise TaskExecutionError("a, b and c must all be nonzero") from None


def _nf3(payload: dict) -> dict:
    try:
        total = (
            float(payload["resultPart0"])
            + float(payload["resultPart1"])
            + float(payload["resultPart2"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TaskExecutionError(f"need resultPart0..2: {exc!r}") from None
    return {"finalResult": total}


GAME_OF_LIFE_COUNT = 63


def game_of_life_grid_size(index: int) -> int:
    return 8 + 4 * index


def seed_game_of_life_grid(index: int) -> list:
    """Deterministic starting grid for GameOfLife task ``index``."""
    rng = random.Random(112 + index)
    size = game_of_life_grid_size(index)
    return [[rng.getrandbits(1) for _ in range(size)] for _ in range(size)]


def step_game_of_life(grid: list) -> list:
    """One generation of Conway's rules on a bounded (non-wrapping) grid."""
    rows = len(grid)
    cols = len(grid[0]) if rows else 0
    out = [[0] * cols for _ in range(rows)]
    for r in range(rows):
        for c in range(cols):
            alive = 0
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols and grid[rr][cc]:
                        alive += 1
            if grid[r][c]:
                out[r][c] = 1 if alive in (2, 3) else 0
            else:
                out[r][c] = 1 if alive == 3 else 0
    return out


def _game_of_life_func(index: int) -> Callable[[dict], dict]:
    key = f"grid{index}"

    def run(payload: dict) -> dict:
        grid = payload.get(key)
        if grid is None:
            grid = seed_game_of_life_grid(index)
        if not (
            isinstance(grid, list)
            and grid
            and all(isinstance(row, list) and len(row) == len(grid[0]) for row in grid)
        ):
            raise TaskExecutionError(f"{key} is not a rectangular grid")
        return {key: step_game_of_life(grid)}

    return run


def _build_task_registry() -> dict:
    registry = {
        "NaiveFormula0": TaskLogic("NaiveFormula0", 108, 100.0, _nf0),
        "NaiveFormula1": TaskLogic("NaiveFormula1", 109, 100.0, _nf1),
        "NaiveFormula2": TaskLogic("NaiveFormula2", 110, 100.0, _nf2),
        "NaiveFormula3": TaskLogic("NaiveFormula3", 111, 100.0, _nf3),
    }
    for index in range(GAME_OF_LIFE_COUNT):
        name = f"GameOfLife{index}"
        size = game_of_life_grid_size(index)
        registry[name] = TaskLogic(
            name, 112 + index, float(size * size), _game_of_life_func(index)
        )
    return registry


TASK_REGISTRY: dict = _build_task_registry()


def run_task(name: str, payload: dict) -> dict:
    """Execute one task and return the payload with its outputs merged in."""
    logic = TASK_REGISTRY.get(name)
    if logic is None:
        raise TaskExecutionError(f"no logic registered for task {name!r}")
    produced = logic.func(payload)
    return {**payload, **produced}


def task_work_units(name: str, default: float = 100.0) -> float:
    logic = TASK_REGISTRY.get(name)
    return default if logic is None else logic.work_units


# ---------------------------------------------------------------------------
# Built-in applications
# ---------------------------------------------------------------------------

def _node(name: str, parents: list, children: list) -> TaskNode:
    return TaskNode(
        name=name,
        task_id=TASK_REGISTRY[name].task_id,
        parents=tuple(parents),
        children=tuple(children),
    )


def _naive_formula_parallelized(label: str, _count: int | None) -> ApplicationSpec:
    tasks = {
        f"NaiveFormula{i}": _node(f"NaiveFormula{i}", [SENSOR], [ACTUATOR])
        for i in range(3)
    }
    return ApplicationSpec("NaiveFormulaParallelized", tasks, label)


def _naive_formula_serialized(label: str, _count: int | None) -> ApplicationSpec:
    chain = [f"NaiveFormula{i}" for i in range(4)]
    tasks = {}
    for pos, name in enumerate(chain):
        parents = [SENSOR] if pos == 0 else [chain[pos - 1]]
        children = [ACTUATOR] if pos == len(chain) - 1 else [chain[pos + 1]]
        tasks[name] = _node(name, parents, children)
    return ApplicationSpec("NaiveFormulaSerialized", tasks, label)


def _check_game_of_life_count(count: int | None) -> int:
    count = 8 if count is None else count
    if not 1 <= count <= GAME_OF_LIFE_COUNT:
        raise AppModelError(
            f"GameOfLife task count must be in 1..{GAME_OF_LIFE_COUNT}, got {count}"
        )
    return count


def _game_of_life_serialized(label: str, count: int | None) -> ApplicationSpec:
    count = _check_game_of_life_count(count)
    chain = [f"GameOfLife{i}" for i in range(count)]
    tasks = {}
    for pos, name in enumerate(chain):
        parents = [SENSOR] if pos == 0 else [chain[pos - 1]]
        children = [ACTUATOR] if pos == len(chain) - 1 else [chain[pos + 1]]
        tasks[name] = _node(name, parents, children)
    return ApplicationSpec("GameOfLifeSerialized", tasks, label)


def _game_of_life_parallelized(label: str, count: int | None) -> ApplicationSpec:
    count = _check_game_of_life_count(count)
    tasks = {
        f"GameOfLife{i}": _node(f"GameOfLife{i}", [SENSOR], [ACTUATOR])
        for i in range(count)
    }
    return ApplicationSpec("GameOfLifeParallelized", tasks, label)


def _game_of_life_pyramid(label: str, count: int | None) -> ApplicationSpec:
    """Binary-heap-shaped reduction: tasks 2i+1 and 2i+2 feed task i,
    childless tasks are the entries, task 0 reports to the Actuator."""
    count = _check_game_of_life_count(count)
    tasks = {}
    for i in range(count):
        name = f"GameOfLife{i}"
        feeders = [f"GameOfLife{j}" for j in (2 * i + 1, 2 * i + 2) if j < count]
        parents = feeders if feeders else [SENSOR]
        children = [ACTUATOR] if i == 0 else [f"GameOfLife{(i - 1) // 2}"]
        tasks[name] = _node(name, parents, children)
    return ApplicationSpec("GameOfLifePyramid", tasks, label)


BUILTIN_APPLICATIONS: dict = {
    "NaiveFormulaParallelized": _naive_formula_parallelized,
    "NaiveFormulaSerialized": _naive_formula_serialized,
    "GameOfLifeSerialized": _game_of_life_serialized,
    "GameOfLifeParallelized": _game_of_life_parallelized,
    "GameOfLifePyramid": _game_of_life_pyramid,
}


def build_application(
    name: str, label: str = "", task_count: int | None = None
) -> ApplicationSpec:
    """Instantiate a built-in application by its public name."""
    factory = BUILTIN_APPLICATIONS.get(name)
    if factory is None:
        raise AppModelError(
            f"unknown application {name!r}; available: "
            f"{', '.join(sorted(BUILTIN_APPLICATIONS))}"
        )
    return factory(label, task_count)


def required_result_keys(app: ApplicationSpec) -> frozenset:
    """The payload keys whose presence marks one submission as complete."""
    if app.name == "NaiveFormulaParallelized":
        return frozenset({"resultPart0", "resultPart1", "resultPart2"})
    if app.name == "NaiveFormulaSerialized":
        return frozenset({"finalResult"})
    grid_keys = {
        f"grid{index}"
        for index in range(GAME_OF_LIFE_COUNT)
        if f"GameOfLife{index}" in app.tasks
    }
    if grid_keys:
        return frozenset(grid_keys)
    # Fallback for user-supplied graphs: one result per exit task.
    return frozenset(f"result:{name}" for name in app.exit_tasks)
