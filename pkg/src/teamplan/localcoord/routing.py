"""Synchronized team routing for tasks whose subtasks are known and static.

Every subtask must be served by at least ``n`` capable agents at once: service
starts when the last of them arrives and lasts ``eta(n, action, team size)``.
The objective is the time the last subtask finishes.

A schedule is encoded as a global service order plus a team per subtask;
each agent visits its subtasks in that order. Any feasible schedule can be
re-encoded this way with start times non-decreasing along the order, so the
exact search only enumerates such orders.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..model import DurationParams, Point, distance, eta
from ..optim.bnb import BnBProblem, NoFeasibleSolution, solve_bnb


class RoutingInfeasible(RuntimeError):
    def __init__(self, message: str, jobs: Sequence[int] = ()):
        super().__init__(message)
        self.jobs = tuple(jobs)


@dataclass(frozen=True)
class Member:
    """Snapshot of an agent as seen by a local coordinator."""

    id: int
    position: Point
    speed: float
    capabilities: frozenset[str]
    ready_time: float = 0.0


@dataclass(frozen=True)
class Job:
    """A subtask to serve: ``n`` agents performing ``action`` at ``location``."""

    id: int
    n: int
    action: str
    location: Point


@dataclass(frozen=True)
class ActionPlan:
    agent: int
    steps: tuple[tuple[float, Point, str], ...]
    jobs: tuple[int, ...] = ()


@dataclass(frozen=True)
class RoutingSolution:
    order: tuple[int, ...]
    teams: dict[int, tuple[int, ...]]
    start: dict[int, float]
    finish: dict[int, float]
    makespan: float
    plans: tuple[ActionPlan, ...] = ()
    exact: bool = True
    nodes: int = 0
    routes: dict[int, tuple[int, ...]] = field(default_factory=dict)


def _team_sizes(job: Job, capable: int, params: DurationParams, overprovision: bool) -> range:
    top = min(capable, max(params.n_sat, job.n)) if overprovision else job.n
    return range(job.n, max(top, job.n) + 1)


def _check_feasible(members: Sequence[Member], jobs: Sequence[Job]) -> None:
    bad = [j.id for j in jobs
           if sum(j.action in m.capabilities for m in members) < j.n]
    if bad:
        raise RoutingInfeasible(f"subtasks {bad} need more capable agents than available", bad)


class _State:
    __slots__ = ("order", "teams", "free", "pos", "start", "finish", "makespan", "last_start")

    def __init__(self, order, teams, free, pos, start, finish, makespan, last_start):
        self.order = order
        self.teams = teams
        self.free = free
        self.pos = pos
        self.start = start
        self.finish = finish
        self.makespan = makespan
        self.last_start = last_start


def _serve(state: _State, job: Job, team: tuple[int, ...], members: Sequence[Member],
           params: DurationParams) -> _State:
    start = max(state.free[i] + distance(state.pos[i], job.location) / members[i].speed
                for i in team)
    finish = start + eta(job.n, job.action, len(team), params)
    free = list(state.free)
    pos = list(state.pos)
    for i in team:
        free[i] = finish
        pos[i] = job.location
    return _State(state.order + (job.id,), {**state.teams, job.id: team}, tuple(free), tuple(pos),
                  {**state.start, job.id: start}, {**state.finish, job.id: finish},
                  max(state.makespan, finish), start)


def _root(members: Sequence[Member]) -> _State:
    return _State((), {}, tuple(m.ready_time for m in members), tuple(m.position for m in members),
                  {}, {}, 0.0, -math.inf)


def _greedy_team(state: _State, job: Job, members: Sequence[Member], params: DurationParams,
                 overprovision: bool) -> tuple[int, ...]:
    capable = [i for i, m in enumerate(members) if job.action in m.capabilities]
    arrival = sorted((state.free[i] + distance(state.pos[i], job.location) / members[i].speed, members[i].id, i)
                     for i in capable)
    best = None
    for size in _team_sizes(job, len(capable), params, overprovision):
        team = arrival[:size]
        fin = team[-1][0] + eta(job.n, job.action, size, params)
        if best is None or fin < best[0] - 1e-12:
            best = (fin, tuple(sorted(t[2] for t in team)))
    return best[1]


def _decode(order: Sequence[int], jobs_by_id, members, params, overprovision) -> _State:
    state = _root(members)
    for jid in order:
        job = jobs_by_id[jid]
        state = _serve(state, job, _greedy_team(state, job, members, params, overprovision),
                       members, params)
    return state


def _heuristic(jobs: Sequence[Job], members, params, overprovision, max_passes: int = 30) -> _State:
    """Earliest-finish insertion followed by pairwise-swap local search."""
    jobs_by_id = {j.id: j for j in jobs}
    state = _root(members)
    left = sorted(jobs_by_id)
    while left:
        scored = []
        for jid in left:
            job = jobs_by_id[jid]
            team = _greedy_team(state, job, members, params, overprovision)
            nxt = _serve(state, job, team, members, params)
            scored.append((nxt.finish[jid], jid, nxt))
        _, jid, state = min(scored, key=lambda s: (s[0], s[1]))
        left.remove(jid)

    def quality(s: _State):
        return (round(s.makespan, 9), round(sum(s.finish.values()), 9))

    order = list(state.order)
    best = state
    for _ in range(max_passes):
        improved = False
        for i, j in itertools.combinations(range(len(order)), 2):
            cand = order[:]
            cand[i], cand[j] = cand[j], cand[i]
            s = _decode(cand, jobs_by_id, members, params, overprovision)
            if quality(s) < quality(best):
                best, order, improved = s, cand, True
        if not improved:
            break
    return best


def _lower_bound(state: _State, remaining: Iterable[Job], members, params, overprovision) -> float:
    lb = state.makespan
    for job in remaining:
        arrivals = sorted(state.free[i] + distance(state.pos[i], job.location) / members[i].speed
                          for i, m in enumerate(members) if job.action in m.capabilities)
        sizes = _team_sizes(job, len(arrivals), params, overprovision)
        fastest = eta(job.n, job.action, sizes[-1], params)
        lb = max(lb, arrivals[job.n - 1] + fastest)
    return lb


def _exact(jobs: Sequence[Job], members, params, overprovision, incumbent: _State) -> tuple[_State, int]:
    jobs_by_id = {j.id: j for j in jobs}
    capable = {j.id: [i for i, m in enumerate(members) if j.action in m.capabilities] for j in jobs}
    teams = {j.id: [t for size in _team_sizes(j, len(capable[j.id]), params, overprovision)
                    for t in itertools.combinations(capable[j.id], size)] for j in jobs}

    def branch(state: _State):
        for jid in sorted(jobs_by_id):
            if jid in state.teams:
                continue
            for team in teams[jid]:
                child = _serve(state, jobs_by_id[jid], team, members, params)
                # canonical encoding: service starts never decrease along the order
                if child.last_start + 1e-9 < state.last_start:
                    continue
                yield child

    def bound(state: _State) -> float:
        rest = [j for j in jobs if j.id not in state.teams]
        return _lower_bound(state, rest, members, params, overprovision)

    problem = BnBProblem(_root(members), branch, bound,
                         lambda s: len(s.teams) == len(jobs), lambda s: s.makespan,
                         incumbent=(incumbent.makespan + 1e-9, incumbent))
    res = solve_bnb(problem)
    return res.state, res.nodes


def _to_solution(state: _State, members: Sequence[Member], jobs: Sequence[Job], exact: bool,
                 nodes: int) -> RoutingSolution:
    jobs_by_id = {j.id: j for j in jobs}
    routes: dict[int, list[int]] = {m.id: [] for m in members}
    teams = {}
    for jid in state.order:
        ids = tuple(sorted(members[i].id for i in state.teams[jid]))
        teams[jid] = ids
        for a in ids:
            routes[a].append(jid)
    plans = tuple(
        ActionPlan(a, tuple((state.start[j], jobs_by_id[j].location, jobs_by_id[j].action) for j in r),
                   tuple(r))
        for a, r in sorted(routes.items()) if r)
    return RoutingSolution(tuple(state.order), teams, dict(state.start), dict(state.finish),
                           state.makespan, plans, exact, nodes,
                           {a: tuple(r) for a, r in routes.items()})


def plan_static_known(members: Sequence[Member], jobs: Sequence[Job], params: DurationParams,
                      exact_limit: int = 16, overprovision: bool = True,
                      force_exact: bool | None = None) -> RoutingSolution:
    """Minimum-makespan synchronized routing of ``members`` over ``jobs``.

    Solved exactly by branch-and-bound when ``len(jobs) * len(members)`` is at
    most ``exact_limit``; otherwise by greedy insertion plus swap local search.
    Teams range from ``n`` up to ``n_sat`` agents when ``overprovision`` is set.
    """
    members = sorted(members, key=lambda m: m.id)
    jobs = sorted(jobs, key=lambda j: j.id)
    if not jobs:
        return RoutingSolution((), {}, {}, {}, 0.0)
    _check_feasible(members, jobs)
    heur = _heuristic(jobs, members, params, overprovision)
    use_exact = (len(jobs) * len(members) <= exact_limit) if force_exact is None else force_exact
    if not use_exact:
        return _to_solution(heur, members, jobs, exact=False, nodes=0)
    try:
        best, nodes = _exact(jobs, members, params, overprovision, heur)
    except NoFeasibleSolution:  # pragma: no cover - incumbent always feasible
        best, nodes = heur, 0
    return _to_solution(best, members, jobs, exact=True, nodes=nodes)
