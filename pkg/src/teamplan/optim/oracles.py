"""Exhaustive reference solvers for small instances.

Each oracle enumerates the whole feasible set with its own evaluator and
shares no search code with the production solvers, so agreement between the
two is meaningful. Sizes are capped; larger inputs raise :class:`OracleTooLarge`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..assign import PlannerConfig, PrecedenceError, SubteamSlot, evaluate_assignment, merge_capacity
from ..model import CollabTask, DurationParams, Point, TaskGraph, distance, eta
from .bottleneck import BottleneckProblem


class OracleTooLarge(ValueError):
    pass


@dataclass
class AssignInstance:
    graph: TaskGraph
    tasks: Mapping[int, CollabTask]
    fleet_counts: Mapping[str, int]
    config: PlannerConfig
    anchor: tuple[float, Point] = (0.0, (0.0, 0.0))


@dataclass
class RoutingInstance:
    members: Sequence  # routing.Member
    jobs: Sequence  # routing.Job
    params: DurationParams
    overprovision: bool = True


@dataclass
class StabilityInstance:
    members: Sequence  # routing.Member
    targets: Sequence  # dcf.Target
    params: DurationParams
    scheme: Mapping[int, frozenset[int]] = field(default_factory=dict)
    k_stab: int = 2
    max_coalition: int | None = None


# --- assignment ---------------------------------------------------------------

def _sets_of_lists(items: Sequence[int], k: int):
    """Every way to arrange ``items`` into ``k`` non-empty sequences, up to slot order."""
    items = list(items)
    for labels in itertools.product(range(k), repeat=len(items)):
        # canonical labelling: slot j first appears before slot j+1
        seen = -1
        ok = True
        for lab in labels:
            if lab > seen + 1:
                ok = False
                break
            seen = max(seen, lab)
        if not ok or seen != k - 1:
            continue
        groups = [[it for it, lab in zip(items, labels) if lab == j] for j in range(k)]
        for orders in itertools.product(*(itertools.permutations(g) for g in groups)):
            yield orders


def assign_oracle(inst: AssignInstance) -> tuple[float, tuple]:
    """Lowest score over every assignment of at most ``horizon`` tasks to K fresh slots."""
    cfg = inst.config
    nodes = sorted(inst.graph.nodes)
    if len(nodes) > 7 or cfg.horizon > 7:
        raise OracleTooLarge("assignment oracle handles at most 7 tasks")
    best = (math.inf, None)
    for K in cfg.k_range(0):
        for size in range(K, min(cfg.horizon, len(nodes)) + 1):
            for subset in itertools.combinations(nodes, size):
                for seqs in _sets_of_lists(subset, K):
                    if cfg.max_slot_len is not None and any(len(s) > cfg.max_slot_len for s in seqs):
                        continue
                    slots = []
                    for s in seqs:
                        cap: dict[str, int] = {}
                        for t in s:
                            cap = merge_capacity(cap, inst.tasks[t].requirements(only_open=True))
                        slots.append(SubteamSlot(tuple(s), cap, anchor_time=inst.anchor[0],
                                                 anchor_pos=inst.anchor[1]))
                    if not _oracle_feasible(slots, inst):
                        continue
                    try:
                        score = evaluate_assignment(slots, inst.graph, inst.tasks, cfg)
                    except PrecedenceError:
                        continue
                    if score < best[0]:
                        best = (score, tuple(sorted(seqs)))
    return best


def _oracle_feasible(slots, inst: AssignInstance) -> bool:
    need: dict[str, int] = {}
    for s in slots:
        for a, n in s.capacity.items():
            need[a] = need.get(a, 0) + n
    if any(n > inst.fleet_counts.get(a, 0) for a, n in need.items()):
        return False
    where = {t: k for k, s in enumerate(slots) for t in s.tasks}
    for t in where:
        if any(p not in where for p in inst.graph.predecessors(t)):
            return False
        g = inst.graph.group_of(t)
        if g and (not g <= where.keys() or len({where[m] for m in g}) != len(g)):
            return False
    return True


# --- bottleneck assignment ----------------------------------------------------

def bottleneck_oracle(problem: BottleneckProblem) -> tuple[float, float] | None:
    """``(max cost, total cost)`` of the lexicographically best full cover, or ``None``."""
    n_rows, n_cols = problem.shape
    if n_rows > 9 or n_cols > 9:
        raise OracleTooLarge("bottleneck oracle handles at most 9 rows and columns")
    if n_cols == 0:
        return (0.0, 0.0)
    best = None
    for rows in itertools.permutations(range(n_rows), n_cols):
        if not all(problem.eligible[r, c] for c, r in enumerate(rows)):
            continue
        vals = [problem.costs[r, c] for c, r in enumerate(rows)]
        key = (max(vals), sum(sorted(vals)))
        if best is None or key[0] < best[0] or (key[0] == best[0] and key[1] < best[1] - 1e-9):
            best = key
    return best


# --- synchronized routing -----------------------------------------------------

def route_makespan(members, jobs, teams: Mapping[int, Sequence[int]],
                   routes: Mapping[int, Sequence[int]], params: DurationParams) -> float:
    """Makespan of explicit per-agent routes, by fixed-point relaxation.

    Returns ``inf`` when routes wait on each other in a cycle.
    """
    by_id = {m.id: m for m in members}
    jobs_by_id = {j.id: j for j in jobs}
    start = {j: -math.inf for j in teams}
    finish: dict[int, float] = {}
    for _ in range(len(teams) + 1):
        changed = False
        for jid in sorted(teams):
            job = jobs_by_id[jid]
            arrivals = []
            for a in teams[jid]:
                r = list(routes[a])
                k = r.index(jid)
                if k == 0:
                    arrivals.append(by_id[a].ready_time
                                    + distance(by_id[a].position, job.location) / by_id[a].speed)
                    continue
                prev = r[k - 1]
                if prev not in finish:
                    arrivals = None
                    break
                arrivals.append(finish[prev]
                                + distance(jobs_by_id[prev].location, job.location) / by_id[a].speed)
            if arrivals is None:
                continue
            s = max(arrivals)
            if s != start[jid]:
                start[jid] = s
                finish[jid] = s + eta(job.n, job.action, len(teams[jid]), params)
                changed = True
        if not changed:
            break
    if len(finish) < len(teams):
        return math.inf
    return max(finish.values(), default=0.0)


def routing_oracle(inst: RoutingInstance) -> float:
    """Best makespan over every service order and every team choice."""
    members, jobs, params = inst.members, inst.jobs, inst.params
    if len(jobs) > 5 or len(members) > 5:
        raise OracleTooLarge("routing oracle handles at most 5 subtasks and 5 agents")
    options = []
    for j in jobs:
        capable = [m.id for m in members if j.action in m.capabilities]
        top = min(len(capable), max(params.n_sat, j.n)) if inst.overprovision else j.n
        options.append([t for size in range(j.n, top + 1)
                        for t in itertools.combinations(capable, size)])
    best = math.inf
    for order in itertools.permutations(range(len(jobs))):
        for teams in itertools.product(*(options[i] for i in order)):
            team_of = {jobs[i].id: team for i, team in zip(order, teams)}
            routes = {m.id: [jobs[i].id for i in order if m.id in team_of[jobs[i].id]]
                      for m in members}
            best = min(best, route_makespan(members, jobs, team_of, routes, params))
    return best


# --- coalition stability ------------------------------------------------------

def _scheme_key(choice: Mapping[int, int | None], members, targets, params) -> tuple:
    by_id = {m.id: m for m in members}
    unserved, costs = 0, []
    for t in targets:
        group = [by_id[a] for a, c in sorted(choice.items()) if c == t.id]
        if len(group) < t.n:
            unserved += 1
            continue
        reach = max(distance(m.position, t.position) / m.speed for m in group)
        costs.append(reach + eta(t.n, t.action, len(group), params))
    return (unserved, tuple(sorted(costs, reverse=True)))


def improving_deviations(inst: StabilityInstance) -> list[tuple[tuple[int, ...], tuple]]:
    """Every deviation of at most ``k_stab`` agents that strictly improves the scheme."""
    members = sorted(inst.members, key=lambda m: m.id)
    if len(members) > 8:
        raise OracleTooLarge("stability oracle handles at most 8 agents")
    choice = {m.id: None for m in members}
    for t, group in inst.scheme.items():
        for a in group:
            choice[a] = t
    base = _scheme_key(choice, members, inst.targets, inst.params)
    found = []
    for size in range(1, inst.k_stab + 1):
        for group in itertools.combinations(members, size):
            opts = [[None] + [t.id for t in inst.targets if t.action in m.capabilities]
                    for m in group]
            for picks in itertools.product(*opts):
                trial = dict(choice)
                for m, p in zip(group, picks):
                    trial[m.id] = p
                if trial == choice:
                    continue
                if inst.max_coalition is not None:
                    sizes: dict[int, int] = {}
                    for p in trial.values():
                        if p is not None:
                            sizes[p] = sizes.get(p, 0) + 1
                    if any(v > inst.max_coalition for v in sizes.values()):
                        continue
                if _scheme_key(trial, members, inst.targets, inst.params) < base:
                    found.append((tuple(m.id for m in group), picks))
    return found


def brute_force_oracle(family: str, instance):
    """Dispatch to the exhaustive solver for ``family``.

    ``assign`` returns ``(score, slots)``; ``bottleneck`` returns
    ``(max, total)`` or ``None``; ``routing`` returns the best makespan;
    ``kss`` returns the list of improving deviations.
    """
    if family == "assign":
        return assign_oracle(instance)
    if family == "bottleneck":
        return bottleneck_oracle(instance)
    if family == "routing":
        return routing_oracle(instance)
    if family == "kss":
        return improving_deviations(instance)
    raise ValueError(f"unknown oracle family {family!r}")
