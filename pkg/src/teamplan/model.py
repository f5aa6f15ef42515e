"""Domain types: agents, collaborative tasks, missions and the task graph."""

from __future__ import annotations

import graphlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

Point = tuple[float, float]

TASK_KINDS = ("static_known", "static_unknown", "dynamic_known")
SUBTASK_STATES = ("undetected", "detected", "in_progress", "done")


class MalformedMission(ValueError):
    """A mission poset is cyclic, references unknown tasks or is empty."""


class InfeasibleTeam(ValueError):
    """A subtask was given fewer agents than it requires."""


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]`` in meters."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def centroid(self) -> Point:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def contains(self, p: Point, tol: float = 1e-9) -> bool:
        return (self.x0 - tol <= p[0] <= self.x1 + tol
                and self.y0 - tol <= p[1] <= self.y1 + tol)

    def within(self, other: "Rect") -> bool:
        return (other.x0 <= self.x0 and self.x1 <= other.x1
                and other.y0 <= self.y0 and self.y1 <= other.y1)

    def clamp(self, p: Point, margin: float = 0.0) -> Point:
        """Closest point to ``p`` inside the rectangle shrunk by ``margin``."""
        mx = min(margin, self.width / 2.0)
        my = min(margin, self.height / 2.0)
        return (min(max(p[0], self.x0 + mx), self.x1 - mx),
                min(max(p[1], self.y0 + my), self.y1 - my))

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class DurationParams:
    """Parameters of the saturating duration function.

    ``d0`` is the base duration per required agent and ``n_sat`` the team size
    beyond which extra agents bring no speed-up.
    """

    d0: float
    n_sat: int

    def __post_init__(self):
        if self.d0 <= 0 or self.n_sat < 1:
            raise ValueError(f"invalid duration params {self}")


def eta(n_required: int, action: str, team_size: int, params: DurationParams) -> float:
    """Duration of a subtask needing ``n_required`` agents when ``team_size`` work on it.

    ``d0 * n / min(team_size, n_sat)``: linear speed-up until ``n_sat`` agents,
    constant afterwards. ``action`` is accepted for interface symmetry; the
    duration model does not distinguish actions.
    """
    if team_size < n_required:
        raise InfeasibleTeam(
            f"{action!r} needs {n_required} agents, got {team_size}")
    return params.d0 * n_required / min(team_size, max(params.n_sat, n_required))


@dataclass
class Agent:
    id: int
    position: Point
    max_speed: float
    capabilities: frozenset[str]
    alive: bool = True
    busy_until: float = 0.0
    release_position: Point | None = None

    def __post_init__(self):
        if self.max_speed <= 0:
            raise ValueError("max_speed must be positive")
        if not self.capabilities:
            raise ValueError("agent needs at least one capability")
        self.capabilities = frozenset(self.capabilities)
        if self.release_position is None:
            self.release_position = self.position


@dataclass
class Subtask:
    id: int
    n: int
    action: str
    location: Point
    mobile: bool = False
    speed: float = 0.0
    initially_detected: bool = True
    state: str = "undetected"
    velocity: Point = (0.0, 0.0)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("subtask needs n >= 1")
        if self.state == "undetected" and self.initially_detected:
            self.state = "detected"


@dataclass
class CollabTask:
    id: int
    region: Rect
    subtasks: list[Subtask]
    duration: DurationParams
    kind: str = "static_known"
    state: str = "pending"
    mission: int | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if not self.subtasks:
            raise ValueError(f"task {self.id} has no subtasks")

    def requirements(self, only_open: bool = False) -> dict[str, int]:
        """Largest ``n`` per action over the task's subtasks."""
        req: dict[str, int] = {}
        for s in self.subtasks:
            if only_open and s.state == "done":
                continue
            req[s.action] = max(req.get(s.action, 0), s.n)
        return req

    @property
    def done(self) -> bool:
        return all(s.state == "done" for s in self.subtasks)


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


@dataclass
class Mission:
    id: int
    release_time: float
    tasks: tuple[CollabTask, ...]
    precedence: frozenset[tuple[int, int]] = frozenset()
    concurrence: frozenset[tuple[int, int]] = frozenset()
    finish_time: float | None = None

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        if not self.tasks:
            raise MalformedMission(f"mission {self.id} has no tasks")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise MalformedMission(f"mission {self.id} repeats task ids")
        known = set(ids)
        self.precedence = frozenset((int(a), int(b)) for a, b in self.precedence)
        conc = set()
        for a, b in self.concurrence:
            if a == b:
                raise MalformedMission(f"task {a} concurrent with itself")
            conc.add(_pair(int(a), int(b)))
        self.concurrence = frozenset(conc)
        for a, b in self.precedence | self.concurrence:
            if a not in known or b not in known:
                raise MalformedMission(
                    f"mission {self.id}: relation ({a}, {b}) names a task outside the mission")
        for t in self.tasks:
            t.mission = self.id
        _check_acyclic(known, self.precedence, self.concurrence)

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.tasks)


def _groups(nodes: Iterable[int], pairs: Iterable[tuple[int, int]]) -> list[frozenset[int]]:
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        if a in parent and b in parent:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    members: dict[int, set[int]] = {}
    for n in parent:
        members.setdefault(find(n), set()).add(n)
    return sorted((frozenset(m) for m in members.values() if len(m) > 1), key=min)


def _check_acyclic(nodes, precedence, concurrence) -> None:
    # Concurrent tasks start together, so precedence must be acyclic even after
    # contracting each concurrence group to a single node.
    rep = {n: n for n in nodes}
    for g in _groups(nodes, concurrence):
        r = min(g)
        for n in g:
            rep[n] = r
    ts = graphlib.TopologicalSorter()
    for n in nodes:
        ts.add(rep[n])
    for a, b in precedence:
        if rep[a] == rep[b]:
            raise MalformedMission(f"precedence ({a}, {b}) inside a concurrence group")
        ts.add(rep[b], rep[a])
    try:
        ts.prepare()
    except graphlib.CycleError as exc:
        raise MalformedMission(f"precedence cycle: {exc.args[1]}") from None


@dataclass(frozen=True)
class TaskGraph:
    nodes: frozenset[int]
    precedence_edges: frozenset[tuple[int, int]]
    concurrence_groups: tuple[frozenset[int], ...]
    _preds: Mapping[int, frozenset[int]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        preds: dict[int, set[int]] = {n: set() for n in self.nodes}
        for a, b in self.precedence_edges:
            preds[b].add(a)
        object.__setattr__(self, "_preds", {n: frozenset(p) for n, p in preds.items()})

    def predecessors(self, node: int) -> frozenset[int]:
        return self._preds.get(node, frozenset())

    def group_of(self, node: int) -> frozenset[int] | None:
        for g in self.concurrence_groups:
            if node in g:
                return g
        return None

    def topological_order(self) -> list[int]:
        ts = graphlib.TopologicalSorter({n: self._preds[n] for n in sorted(self.nodes)})
        return list(ts.static_order())


def build_task_graph(missions: Sequence[Mission], completed: Iterable[int] = ()) -> TaskGraph:
    """DAG over every unfinished task of the given missions."""
    completed = set(completed)
    nodes: set[int] = set()
    edges: set[tuple[int, int]] = set()
    conc: set[tuple[int, int]] = set()
    for m in missions:
        ids = set(m.task_ids)
        if ids & nodes:
            raise MalformedMission(f"mission {m.id} reuses task ids of another mission")
        nodes |= ids - completed
        edges |= {(a, b) for a, b in m.precedence if a not in completed and b not in completed}
        conc |= {(a, b) for a, b in m.concurrence if a not in completed and b not in completed}
    _check_acyclic(nodes, edges, conc)
    return TaskGraph(frozenset(nodes), frozenset(edges), tuple(_groups(nodes, conc)))


def eligible_tasks(graph: TaskGraph, executing: Iterable[int] = (),
                   free_slots: int | None = None,
                   assigned: Iterable[int] = ()) -> set[int]:
    """Tasks whose predecessors are all finished or being executed.

    A concurrence group is returned only as a whole, and only if it fits into
    ``free_slots`` distinct subteams (when given). Members of a group that are
    already executing are not counted against the slots.
    """
    executing = set(executing)
    taken = executing | set(assigned)
    ok = {n for n in graph.nodes - taken if graph.predecessors(n) <= taken}
    out = set()
    for n in ok:
        if graph.group_of(n) is None:
            out.add(n)
    for g in graph.concurrence_groups:
        pending = g - taken
        if not pending or not pending <= ok:
            continue
        if free_slots is not None and len(pending) > free_slots:
            continue
        out |= pending
    return out


# --- template missions -------------------------------------------------------

def expand_template_mission(mission_id: int, release_time: float,
                            delivery: Sequence[CollabTask] = (),
                            surveillance: Sequence[CollabTask] = (),
                            capture: Sequence[CollabTask] = (),
                            concurrence: Iterable[tuple[int, int]] = ()) -> Mission:
    """Poset induced by ``F(del & F surv) & (!cap U surv)``.

    Every delivery precedes every surveillance task, which in turn precede
    every capture task. With no surveillance task the capture tasks follow the
    deliveries directly.
    """
    tasks = [*delivery, *surveillance, *capture]
    if not tasks:
        raise MalformedMission("template mission needs at least one task")
    prec = {(d.id, s.id) for d in delivery for s in surveillance}
    before_capture = surveillance if surveillance else delivery
    prec |= {(s.id, c.id) for s in before_capture for c in capture}
    return Mission(mission_id, release_time, tuple(tasks), frozenset(prec), frozenset(concurrence))


# --- JSON ------------------------------------------------------------------

def subtask_to_dict(s: Subtask) -> dict:
    return {"id": s.id, "n": s.n, "action": s.action, "location": list(s.location),
            "mobile": s.mobile, "speed": s.speed, "initially_detected": s.initially_detected}


def task_to_dict(t: CollabTask) -> dict:
    return {"id": t.id, "kind": t.kind, "region": t.region.as_list(),
            "duration_params": {"d0": t.duration.d0, "n_sat": t.duration.n_sat},
            "subtasks": [subtask_to_dict(s) for s in t.subtasks]}


def mission_to_dict(m: Mission) -> dict:
    return {"id": m.id, "release_time": m.release_time,
            "tasks": [task_to_dict(t) for t in m.tasks],
            "precedence": [list(p) for p in sorted(m.precedence)],
            "concurrence": [list(p) for p in sorted(m.concurrence)]}


def mission_from_dict(d: Mapping, workspace: Rect | None = None) -> Mission:
    try:
        tasks = []
        for td in d["tasks"]:
            region = Rect(*map(float, td["region"]))
            if workspace is not None and not region.within(workspace):
                raise MalformedMission(f"task {td['id']} region leaves the workspace")
            kind = td.get("kind", "static_known")
            subs = []
            for i, sd in enumerate(td["subtasks"]):
                loc = (float(sd["location"][0]), float(sd["location"][1]))
                if not region.contains(loc):
                    raise MalformedMission(f"subtask {i} of task {td['id']} lies outside its region")
                subs.append(Subtask(
                    id=int(sd.get("id", i)), n=int(sd["n"]), action=str(sd["action"]),
                    location=loc, mobile=bool(sd.get("mobile", False)),
                    speed=float(sd.get("speed", 0.0)),
                    initially_detected=bool(sd.get("initially_detected", kind != "static_unknown"))))
            dp = td["duration_params"]
            tasks.append(CollabTask(int(td["id"]), region, subs,
                                    DurationParams(float(dp["d0"]), int(dp["n_sat"])), kind))
        return Mission(int(d["id"]), float(d["release_time"]), tuple(tasks),
                       frozenset(tuple(p) for p in d.get("precedence", [])),
                       frozenset(tuple(p) for p in d.get("concurrence", [])))
    except (KeyError, TypeError, IndexError) as exc:
        raise MalformedMission(f"bad mission record: {exc!r}") from exc


def load_mission(path: str | Path, workspace: Rect | None = None) -> Mission:
    return mission_from_dict(json.loads(Path(path).read_text()), workspace)


def fresh_copy(m: Mission) -> Mission:
    """Deep copy with all run-time state reset, for reuse across simulations."""
    return mission_from_dict(mission_to_dict(m))


__all__ = [
    "Agent", "CollabTask", "DurationParams", "InfeasibleTeam", "MalformedMission", "Mission",
    "Point", "Rect", "Subtask", "TaskGraph", "build_task_graph", "distance", "eligible_tasks",
    "eta", "expand_template_mission", "fresh_copy", "load_mission", "mission_from_dict",
    "mission_to_dict",
]
