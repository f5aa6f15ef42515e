"""Receding-horizon assignment of tasks to capacity-constrained subteam slots.

A slot is an ordered task sequence plus the number of agents it needs per
action. The planner searches, for every subteam count K, over ways to append
eligible tasks to K slots until the horizon is used up, scoring each partial
assignment by an unassigned-task penalty plus its estimated makespan, and
keeps the best K.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .model import Agent, CollabTask, Point, TaskGraph, distance, eta


class PrecedenceError(ValueError):
    """A task is scheduled before one of its predecessors can end."""


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 6
    unassigned_penalty: float = 1000.0
    redundancy: float = 0.0  # extra roster agents per action, see formation
    max_subteams: int | None = None  # upper end of the K range, defaults to horizon
    prune_symmetric: bool = True
    prune_dominated: bool = True
    node_budget: int | None = None
    nav_speed: float = 1.5
    max_slot_len: int | None = None  # 1 gives the one-task-per-subteam baseline

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.unassigned_penalty <= 0:
            raise ValueError("unassigned_penalty must be positive")
        if self.redundancy < 0:
            raise ValueError("redundancy must be >= 0")
        if self.nav_speed <= 0:
            raise ValueError("nav_speed must be positive")

    def k_range(self, n_locked: int = 0) -> range:
        top = self.max_subteams if self.max_subteams is not None else self.horizon
        lo = max(1, n_locked)
        return range(lo, max(top, lo) + 1)


@dataclass(frozen=True)
class SubteamSlot:
    """Task sequence of one subteam with its per-action agent requirement.

    ``base_capacity`` is what the slot needs before any of its tasks are counted
    (the roster already committed to a locked task). The first
    ``locked_prefix`` tasks are executing and end at ``anchor_time``; a slot
    with no locked task starts from ``anchor_pos`` at ``anchor_time``.
    ``speed`` is the travel speed of an existing roster (its slowest member);
    ``None`` means the planner's nominal speed.
    """

    tasks: tuple[int, ...] = ()
    capacity: dict[str, int] = field(default_factory=dict)
    locked_prefix: int = 0
    base_capacity: dict[str, int] = field(default_factory=dict)
    anchor_time: float = 0.0
    anchor_pos: Point = (0.0, 0.0)
    speed: float | None = None

    def __post_init__(self):
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError("slot repeats a task")
        if not 0 <= self.locked_prefix <= len(self.tasks):
            raise ValueError("locked prefix longer than the sequence")

    @property
    def new_tasks(self) -> tuple[int, ...]:
        return self.tasks[self.locked_prefix:]


@dataclass(frozen=True)
class Assignment:
    slots: tuple[SubteamSlot, ...]
    horizon_used: int = 0
    score: float = math.inf
    nodes: int = 0
    budget_exhausted: bool = False
    feasible: bool = True
    end_sum: float = math.inf  # tie-break between equal scores: sum of estimated task ends

    @property
    def K(self) -> int:
        return len(self.slots)

    def assigned(self) -> set[int]:
        return {t for s in self.slots for t in s.tasks}

    def key(self) -> tuple:
        return tuple(s.tasks for s in self.slots)


def merge_capacity(cap: Mapping[str, int], req: Mapping[str, int]) -> dict[str, int]:
    out = dict(cap)
    for a, n in req.items():
        if n > out.get(a, 0):
            out[a] = n
    return out


def update_capacity(slot: SubteamSlot, task: CollabTask) -> SubteamSlot:
    """Append ``task`` and raise each action's requirement to the task's largest ``n``."""
    if task.id in slot.tasks:
        raise ValueError(f"task {task.id} already in slot")
    return replace(slot, tasks=slot.tasks + (task.id,),
                   capacity=merge_capacity(slot.capacity, task.requirements(only_open=True)))


def fleet_capacity(fleet: Iterable[Agent]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for ag in fleet:
        if not ag.alive:
            continue
        for a in ag.capabilities:
            counts[a] = counts.get(a, 0) + 1
    return counts


def capacity_feasible(slots: Assignment | Sequence[SubteamSlot],
                      fleet: Iterable[Agent] | Mapping[str, int]) -> bool:
    """Summed per-action requirements fit within the alive agents able to act."""
    if isinstance(slots, Assignment):
        slots = slots.slots
    counts = fleet if isinstance(fleet, Mapping) else fleet_capacity(fleet)
    need: dict[str, int] = {}
    for s in slots:
        for a, n in s.capacity.items():
            need[a] = need.get(a, 0) + n
    return all(n <= counts.get(a, 0) for a, n in need.items())


def exec_estimate(task: CollabTask, capacity: Mapping[str, int]) -> float:
    """Expected working time of a subteam with ``capacity`` on ``task``.

    Sum of subtask durations divided by how many of the largest subtasks the
    team can staff at once.
    """
    open_subs = [s for s in task.subtasks if s.state != "done"]
    if not open_subs:
        return 0.0
    widest = max(s.n for s in open_subs)
    parallel = max(1, sum(capacity.values()) // widest)
    total = sum(eta(s.n, s.action, max(capacity.get(s.action, 0), s.n), task.duration)
                for s in open_subs)
    return total / parallel


def nav_time(a: Point, b: Point, speed: float) -> float:
    return distance(a, b) / speed


def _prefix_capacities(slot: SubteamSlot, tasks: Mapping[int, CollabTask]) -> list[dict[str, int]]:
    caps = []
    cap = dict(slot.base_capacity)
    for t in slot.tasks:
        cap = merge_capacity(cap, tasks[t].requirements(only_open=True))
        caps.append(cap)
    return caps


def estimated_end_time(slot: SubteamSlot, index: int, graph: TaskGraph,
                       tasks: Mapping[int, CollabTask], nav_speed: float,
                       known_end_times: Mapping[int, float] | None = None) -> float:
    """End time of ``slot.tasks[index]``.

    Each task starts after the previous task of the slot and all its graph
    predecessors have ended, plus the travel time between region centroids.
    Predecessors outside this slot must appear in ``known_end_times``.
    """
    if not 0 <= index < len(slot.tasks):
        raise IndexError(index)
    known = dict(known_end_times or {})
    caps = _prefix_capacities(slot, tasks)
    prev_end = slot.anchor_time
    prev_pos = slot.anchor_pos
    for i, t in enumerate(slot.tasks[:index + 1]):
        if i < slot.locked_prefix:
            known[t] = slot.anchor_time
            prev_end = slot.anchor_time
            prev_pos = tasks[t].region.centroid
            continue
        ready = prev_end
        for p in graph.predecessors(t):
            if p not in known:
                raise PrecedenceError(f"predecessor {p} of task {t} is not scheduled")
            ready = max(ready, known[p])
        here = tasks[t].region.centroid
        end = ready + nav_time(prev_pos, here, slot.speed or nav_speed) + exec_estimate(tasks[t], caps[i])
        known[t] = end
        prev_end, prev_pos = end, here
    return known[slot.tasks[index]]


def assignment_end_times(slots: Sequence[SubteamSlot], graph: TaskGraph,
                         tasks: Mapping[int, CollabTask], nav_speed: float) -> dict[int, float]:
    """Estimated end time of every task in the assignment.

    Tasks are resolved as soon as their slot predecessor and graph
    predecessors are known; members of a concurrence group start together at
    the latest of their ready times. Raises :class:`PrecedenceError` when some
    task can never be resolved.
    """
    K = len(slots)
    end: dict[int, float] = {}
    caps = [_prefix_capacities(s, tasks) for s in slots]
    ptr = [0] * K
    prev_end = [s.anchor_time for s in slots]
    prev_pos = [s.anchor_pos for s in slots]
    where: dict[int, tuple[int, int]] = {}
    for k, s in enumerate(slots):
        for i, t in enumerate(s.tasks):
            where[t] = (k, i)
        for t in s.tasks[:s.locked_prefix]:
            end[t] = s.anchor_time
        if s.locked_prefix:
            ptr[k] = s.locked_prefix
            prev_pos[k] = tasks[s.tasks[s.locked_prefix - 1]].region.centroid

    def ready_at(k: int) -> float | None:
        t = slots[k].tasks[ptr[k]]
        r = prev_end[k]
        for p in graph.predecessors(t):
            if p not in end:
                return None
            r = max(r, end[p])
        return r + nav_time(prev_pos[k], tasks[t].region.centroid, slots[k].speed or nav_speed)

    progress = True
    while progress:
        progress = False
        for k in range(K):
            if ptr[k] >= len(slots[k].tasks):
                continue
            t = slots[k].tasks[ptr[k]]
            group = graph.group_of(t)
            mates = sorted(group - {t} - end.keys()) if group else []
            members = [k]
            for m in mates:
                loc = where.get(m)
                if loc is None:
                    raise PrecedenceError(f"task {t} is concurrent with unassigned task {m}")
                if ptr[loc[0]] != loc[1]:
                    members = None
                    break
                members.append(loc[0])
            if members is None:
                continue
            readies = [ready_at(j) for j in members]
            if any(r is None for r in readies):
                continue
            start = max(readies)
            for j in members:
                tj = slots[j].tasks[ptr[j]]
                # readies already include travel; execution follows the joint start
                end[tj] = start + exec_estimate(tasks[tj], caps[j][ptr[j]])
                prev_end[j] = end[tj]
                prev_pos[j] = tasks[tj].region.centroid
                ptr[j] += 1
            progress = True
    for k in range(K):
        if ptr[k] < len(slots[k].tasks):
            raise PrecedenceError(
                f"task {slots[k].tasks[ptr[k]]} cannot be scheduled (precedence or concurrence deadlock)")
    return end


def evaluate_assignment(assignment: Assignment | Sequence[SubteamSlot], graph: TaskGraph,
                        tasks: Mapping[int, CollabTask], config: PlannerConfig,
                        executing: Iterable[int] = ()) -> float:
    """Penalty per unfinished task left out plus the latest estimated end time.

    Empty slots contribute their anchor time. Lower is better.
    """
    slots = assignment.slots if isinstance(assignment, Assignment) else tuple(assignment)
    end = assignment_end_times(slots, graph, tasks, config.nav_speed)
    makespan = max((end[s.tasks[-1]] if s.tasks else s.anchor_time for s in slots),
                   default=0.0)
    covered = set(end) | set(executing)
    unassigned = len(graph.nodes - covered)
    return config.unassigned_penalty * unassigned + makespan


# --- search ------------------------------------------------------------------

class _Node:
    __slots__ = ("seqs", "caps", "last_end", "last_pos", "end", "makespan", "used", "end_sum")

    def __init__(self, seqs, caps, last_end, last_pos, end, makespan, used, end_sum):
        self.seqs = seqs
        self.caps = caps
        self.last_end = last_end
        self.last_pos = last_pos
        self.end = end
        self.makespan = makespan
        self.used = used
        self.end_sum = end_sum


class _Search:
    def __init__(self, graph: TaskGraph, tasks: Mapping[int, CollabTask],
                 fleet_counts: Mapping[str, int], locked: Sequence[SubteamSlot],
                 K: int, config: PlannerConfig, anchor: tuple[float, Point]):
        self.graph = graph
        self.tasks = tasks
        self.counts = fleet_counts
        self.cfg = config
        locked = [replace(s, tasks=s.tasks[:s.locked_prefix],
                          capacity=merge_capacity(s.base_capacity, s.capacity))
                  for s in locked]
        self.n_locked = len(locked)
        fresh = [SubteamSlot(anchor_time=anchor[0], anchor_pos=anchor[1])
                 for _ in range(K - len(locked))]
        self.base_slots = tuple(locked) + tuple(fresh)
        self.executing = {t for s in locked for t in s.tasks[:s.locked_prefix]}
        self.req = {t: tasks[t].requirements(only_open=True) for t in graph.nodes}
        self.centroid = {t: tasks[t].region.centroid for t in graph.nodes}
        self.n_open = len(graph.nodes - self.executing)
        self.nodes = 0
        self.budget_hit = False

    def root(self) -> _Node:
        slots = self.base_slots
        seqs = tuple(s.tasks for s in slots)
        caps = tuple(merge_capacity(s.base_capacity, s.capacity) for s in slots)
        end = assignment_end_times(slots, self.graph, self.tasks, self.cfg.nav_speed)
        last_end, last_pos = [], []
        for s in slots:
            if s.tasks:
                last_end.append(end[s.tasks[-1]])
                last_pos.append(self.tasks[s.tasks[-1]].region.centroid)
            else:
                last_end.append(s.anchor_time)
                last_pos.append(s.anchor_pos)
        return _Node(seqs, caps, tuple(last_end), tuple(last_pos), end,
                     max(last_end, default=0.0), 0, sum(end.values()))

    def assigned(self, node: _Node) -> set[int]:
        return set(node.end)

    def units(self, node: _Node) -> list[tuple[int, ...]]:
        taken = set(node.end)
        ok = [t for t in sorted(self.graph.nodes - taken)
              if self.graph.predecessors(t) <= taken]
        okset = set(ok)
        out = []
        seen_groups = set()
        for t in ok:
            g = self.graph.group_of(t)
            if g is None:
                out.append((t,))
                continue
            if g in seen_groups:
                continue
            seen_groups.add(g)
            pending = tuple(sorted(g - taken))
            if set(pending) <= okset:
                out.append(pending)
        return out

    def score(self, node: _Node) -> float:
        unassigned = self.n_open - (len(node.end) - len(self.executing))
        return self.cfg.unassigned_penalty * unassigned + node.makespan

    def lower_bound(self, node: _Node) -> float:
        unassigned = self.n_open - (len(node.end) - len(self.executing))
        room = self.cfg.horizon - node.used
        return self.cfg.unassigned_penalty * max(0, unassigned - room) + node.makespan

    def candidate(self, node: _Node) -> bool:
        return all(node.seqs[k] for k in range(self.n_locked, len(node.seqs)))

    def key(self, node: _Node) -> tuple:
        fresh = sorted(node.seqs[self.n_locked:])
        return node.seqs[:self.n_locked] + tuple(fresh)

    def _fits(self, caps) -> bool:
        need: dict[str, int] = {}
        for c in caps:
            for a, n in c.items():
                need[a] = need.get(a, 0) + n
        return all(n <= self.counts.get(a, 0) for a, n in need.items())

    def children(self, node: _Node):
        cfg = self.cfg
        room = cfg.horizon - node.used
        if room <= 0:
            return
        K = len(node.seqs)
        open_slots = [k for k in range(K)
                      if cfg.max_slot_len is None or len(node.seqs[k]) < cfg.max_slot_len]
        first_empty = next((k for k in range(self.n_locked, K) if not node.seqs[k]), None)
        for unit in self.units(node):
            g = len(unit)
            if g > room:
                continue
            if g == 1:
                placements = []
                for k in open_slots:
                    if (cfg.prune_symmetric and k >= self.n_locked and not node.seqs[k]
                            and k != first_empty):
                        continue
                    placements.append((k,))
            else:
                placements = _distinct_placements(open_slots, g)
            for ks in placements:
                child = self._extend(node, unit, ks)
                if child is not None:
                    yield child

    def _extend(self, node: _Node, unit: tuple[int, ...], ks: tuple[int, ...]) -> _Node | None:
        caps = list(node.caps)
        for t, k in zip(unit, ks):
            caps[k] = merge_capacity(caps[k], self.req[t])
        if not self._fits(caps):
            return None
        end = dict(node.end)
        readies = []
        for t, k in zip(unit, ks):
            r = node.last_end[k]
            for p in self.graph.predecessors(t):
                r = max(r, end[p])
            speed = self.base_slots[k].speed or self.cfg.nav_speed
            readies.append(r + nav_time(node.last_pos[k], self.centroid[t], speed))
        start = max(readies) if len(unit) > 1 else readies[0]
        seqs = list(node.seqs)
        last_end = list(node.last_end)
        last_pos = list(node.last_pos)
        makespan = node.makespan
        end_sum = node.end_sum
        for t, k in zip(unit, ks):
            e = start + exec_estimate(self.tasks[t], caps[k])
            end[t] = e
            end_sum += e
            seqs[k] = seqs[k] + (t,)
            last_end[k] = e
            last_pos[k] = self.centroid[t]
            makespan = max(makespan, e)
        return _Node(tuple(seqs), tuple(caps), tuple(last_end), tuple(last_pos), end,
                     makespan, node.used + len(unit), end_sum)

    def to_assignment(self, node: _Node, score: float, feasible: bool = True) -> Assignment:
        slots = []
        for k, base in enumerate(self.base_slots):
            slots.append(replace(base, tasks=node.seqs[k], capacity=dict(node.caps[k])))
        return Assignment(tuple(slots), node.used, score, self.nodes, self.budget_hit, feasible,
                          node.end_sum)

    def run(self, budget: int | None) -> Assignment:
        # Candidates compare by (score, sum of task ends). Adding tasks never
        # lowers the sum, so (lower bound, node sum) bounds every descendant.
        cfg = self.cfg
        root = self.root()
        best_node, best = None, (math.inf, math.inf)
        if self.candidate(root):
            best_node, best = root, (self.score(root), root.end_sum)
        counter = 0
        heap = [(self.lower_bound(root), root.end_sum, counter, root)]
        seen = {self.key(root)}
        while heap:
            lb, lsum, _, node = heapq.heappop(heap)
            if cfg.prune_dominated and (lb, lsum) >= best:
                break
            if budget is not None and self.nodes >= budget:
                self.budget_hit = True
                break
            self.nodes += 1
            for child in self.children(node):
                if cfg.prune_symmetric:
                    key = self.key(child)
                    if key in seen:
                        continue
                    seen.add(key)
                if self.candidate(child):
                    s = (self.score(child), child.end_sum)
                    if s < best:
                        best_node, best = child, s
                clb = self.lower_bound(child)
                if cfg.prune_dominated and (clb, child.end_sum) >= best:
                    continue
                counter += 1
                heapq.heappush(heap, (clb, child.end_sum, counter, child))
        if best_node is None:
            return self.to_assignment(root, self.score(root), feasible=False)
        return self.to_assignment(best_node, best[0])


def _distinct_placements(slots: Sequence[int], g: int) -> list[tuple[int, ...]]:
    from itertools import permutations
    return list(permutations(slots, g))


def search_assignment_for_K(graph: TaskGraph, tasks: Mapping[int, CollabTask], K: int,
                            fleet: Iterable[Agent] | Mapping[str, int],
                            executing_slots: Sequence[SubteamSlot] = (),
                            config: PlannerConfig = PlannerConfig(),
                            anchor: tuple[float, Point] = (0.0, (0.0, 0.0)),
                            node_budget: int | None = None) -> Assignment:
    """Best assignment using exactly ``K`` subteams (every new subteam gets a task).

    Best-first search from the slots holding only executing tasks; each
    expansion appends one eligible task (or a whole concurrence group, to
    distinct slots). Returns the root with ``feasible=False`` if no assignment
    with ``K`` non-empty slots exists.
    """
    if K < len(executing_slots):
        raise ValueError("K smaller than the number of executing subteams")
    counts = fleet if isinstance(fleet, Mapping) else fleet_capacity(fleet)
    search = _Search(graph, tasks, counts, executing_slots, K, config, anchor)
    budget = node_budget if node_budget is not None else config.node_budget
    return search.run(budget)


def plan_round(graph: TaskGraph, tasks: Mapping[int, CollabTask],
               fleet: Iterable[Agent] | Mapping[str, int],
               executing_slots: Sequence[SubteamSlot] = (),
               config: PlannerConfig = PlannerConfig(),
               anchor: tuple[float, Point] | None = None) -> Assignment:
    """Run the per-K searches and return the best assignment.

    Equal scores are broken by the smaller sum of estimated task end times
    (so tasks are not queued behind others for free), then by the smaller K,
    then by the lexicographically smaller task sequences. If no K admits an
    assignment the executing slots are returned unchanged. A node budget is
    split evenly over the K values; ``nodes`` on the result counts expansions
    over all K and ``budget_exhausted`` reports whether the budget cut any
    search short.
    """
    fleet = list(fleet) if not isinstance(fleet, Mapping) else fleet
    counts = fleet if isinstance(fleet, Mapping) else fleet_capacity(fleet)
    if anchor is None:
        anchor = (0.0, _fleet_centroid(fleet))
    locked = tuple(executing_slots)
    ks = config.k_range(len(locked))
    share = None if config.node_budget is None else max(1, config.node_budget // len(ks))
    total_nodes = 0
    hit = False
    best: Assignment | None = None
    for K in ks:
        cand = search_assignment_for_K(graph, tasks, K, counts, locked, config, anchor,
                                       node_budget=share)
        total_nodes += cand.nodes
        hit = hit or cand.budget_exhausted
        if not cand.feasible:
            continue
        if best is None or ((cand.score, cand.end_sum, cand.K, cand.key())
                            < (best.score, best.end_sum, best.K, best.key())):
            best = cand
    if best is None:
        fallback = tuple(locked)
        score = evaluate_assignment(fallback, graph, tasks, config) if fallback else math.inf
        return Assignment(fallback, 0, score, total_nodes, hit, feasible=False)
    return replace(best, nodes=total_nodes, budget_exhausted=hit)


def _fleet_centroid(fleet) -> Point:
    if isinstance(fleet, Mapping):
        return (0.0, 0.0)
    pts = [a.release_position for a in fleet if a.alive]
    if not pts:
        return (0.0, 0.0)
    return (sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts))


def check_assignment(assignment: Assignment, graph: TaskGraph,
                     fleet: Iterable[Agent] | Mapping[str, int]) -> list[str]:
    """Violations of capacity, uniqueness, precedence and concurrence rules."""
    problems = []
    if not capacity_feasible(assignment, fleet):
        problems.append("capacity bound exceeded")
    seen: dict[int, int] = {}
    for k, s in enumerate(assignment.slots):
        for t in s.tasks:
            if t in seen:
                problems.append(f"task {t} in slots {seen[t]} and {k}")
            seen[t] = k
    for t in seen:
        for p in graph.predecessors(t):
            if p not in seen:
                problems.append(f"task {t} assigned before predecessor {p}")
        g = graph.group_of(t)
        if g:
            if not g <= seen.keys():
                problems.append(f"concurrence group {sorted(g)} partially assigned")
            elif len({seen[m] for m in g}) != len(g):
                problems.append(f"concurrence group {sorted(g)} shares a slot")
    return problems
