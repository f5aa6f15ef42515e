"""Turn slot capacity requirements into disjoint rosters of named agents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .assign import PlannerConfig, SubteamSlot
from .model import Agent, CollabTask, Rect, distance
from .optim.bottleneck import BottleneckProblem, InfeasibleAssignment, solve_bottleneck


class FormationInfeasible(RuntimeError):
    def __init__(self, message: str, blocking=()):
        super().__init__(message)
        self.blocking = tuple(blocking)


@dataclass(frozen=True)
class CostMatrix:
    """Expected start time ``t[i, k]`` of agent ``i`` at the first task of slot ``k``.

    ``by_action[(k, a)]``, when present, is the column of expected start times
    at the first task of slot ``k`` that needs action ``a``; a member holding
    role ``a`` joins the slot there.
    """

    values: np.ndarray
    agent_ids: tuple[int, ...]
    slot_ids: tuple[int, ...]
    by_action: Mapping[tuple[int, str], np.ndarray] = field(default_factory=dict)

    def cost(self, agent_id: int, slot_id: int, action: str | None = None) -> float:
        i = self.agent_ids.index(agent_id)
        if action is not None and (slot_id, action) in self.by_action:
            return float(self.by_action[(slot_id, action)][i])
        return float(self.values[i, self.slot_ids.index(slot_id)])

    def unit_column(self, slot_id: int, action: str) -> np.ndarray:
        col = self.by_action.get((slot_id, action))
        return col if col is not None else self.values[:, self.slot_ids.index(slot_id)]


@dataclass(frozen=True)
class SubteamRoster:
    slot: int
    members: tuple[int, ...]
    roles: dict[int, str] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for a in self.roles.values():
            out[a] = out.get(a, 0) + 1
        return out


@dataclass(frozen=True)
class LocalTaskPlan:
    agent: int
    steps: tuple[tuple[Rect, int], ...]


def build_cost_matrix(fleet: Iterable[Agent], slots: Sequence[SubteamSlot],
                      tasks: Mapping[int, CollabTask],
                      nav_speed: float | None = None) -> CostMatrix:
    """``t_ik = busy_until_i + dist(release_position_i, first region of k) / speed``.

    The same formula against the first task of ``k`` needing each action
    fills ``by_action``. Dead agents and slots without tasks are left out.
    With ``nav_speed=None`` each agent's own maximum speed is used.
    """
    agents = [a for a in fleet if a.alive]
    cols = [k for k, s in enumerate(slots) if s.tasks]

    def column(target) -> np.ndarray:
        out = np.zeros(len(agents))
        for i, ag in enumerate(agents):
            speed = nav_speed if nav_speed is not None else ag.max_speed
            out[i] = ag.busy_until + distance(ag.release_position, target) / speed
        return out

    vals = np.zeros((len(agents), len(cols)))
    by_action: dict[tuple[int, str], np.ndarray] = {}
    for j, k in enumerate(cols):
        vals[:, j] = column(tasks[slots[k].tasks[0]].region.centroid)
        for t in slots[k].tasks:
            for a in sorted(tasks[t].requirements()):
                if (k, a) not in by_action:
                    by_action[(k, a)] = (vals[:, j] if t == slots[k].tasks[0]
                                         else column(tasks[t].region.centroid))
    return CostMatrix(vals, tuple(a.id for a in agents), tuple(cols), by_action)


def upper_bound(required: int, redundancy: float) -> int:
    return math.ceil(round((1.0 + redundancy) * required, 9))


def form_subteams(matrix: CostMatrix, slots: Sequence[SubteamSlot], fleet: Iterable[Agent],
                  config: PlannerConfig = PlannerConfig(),
                  fixed: Mapping[int, Mapping[int, str]] | None = None,
                  allow_partial: bool = False) -> list[SubteamRoster]:
    """Staff every slot's per-action requirement with distinct agents.

    ``fixed`` maps slot index to members already committed to it (agent id to
    role); only the shortfall is staffed. The latest expected start over all
    new memberships is minimised, then the sum of start times. A membership
    for action ``a`` is priced at the first task of the slot that needs
    ``a``. With a positive ``config.redundancy`` spare agents are then added
    greedily, cheapest first, up to ``ceil((1 + redundancy) * requirement)``
    per action.

    Raises :class:`FormationInfeasible` when the shortfall cannot be covered,
    unless ``allow_partial`` is set, in which case as much as possible is staffed.
    """
    fixed = {k: dict(v) for k, v in (fixed or {}).items()}
    by_id = {a.id: a for a in fleet}
    committed = {i for roster in fixed.values() for i in roster}
    free = [i for i in matrix.agent_ids if i not in committed and by_id[i].alive]

    units: list[tuple[int, str]] = []
    for k in matrix.slot_ids:
        have: dict[str, int] = {}
        for role in fixed.get(k, {}).values():
            have[role] = have.get(role, 0) + 1
        for a in sorted(slots[k].capacity):
            units.extend((k, a) for _ in range(max(0, slots[k].capacity[a] - have.get(a, 0))))

    row_idx = [matrix.agent_ids.index(i) for i in free]
    if units and free:
        costs = np.column_stack([matrix.unit_column(k, a)[row_idx] for k, a in units])
    else:
        costs = np.zeros((len(free), len(units)))
    elig = np.array([[a in by_id[i].capabilities for (_, a) in units] for i in free],
                    dtype=bool).reshape(len(free), len(units))
    problem = BottleneckProblem(costs, elig, tuple(free), tuple(units))
    try:
        sol = solve_bottleneck(problem, allow_partial=allow_partial)
    except InfeasibleAssignment as exc:
        raise FormationInfeasible(str(exc), exc.blocking) from None

    members: dict[int, dict[int, str]] = {k: dict(fixed.get(k, {})) for k in range(len(slots))}
    placed = set(committed)
    for agent, (k, a) in sol.labelled():
        members[k][agent] = a
        placed.add(agent)

    if config.redundancy > 0:
        _add_spares(matrix, slots, by_id, members, placed, config.redundancy)

    return [SubteamRoster(k, tuple(sorted(members[k])), dict(sorted(members[k].items())))
            for k in range(len(slots))]


def _add_spares(matrix, slots, by_id, members, placed, redundancy) -> None:
    cands = []
    for i, agent in enumerate(matrix.agent_ids):
        if agent in placed or not by_id[agent].alive:
            continue
        for j, k in enumerate(matrix.slot_ids):
            cands.append((float(matrix.values[i, j]), agent, k))
    cands.sort()
    for _, agent, k in cands:
        if agent in placed:
            continue
        counts: dict[str, int] = {}
        for role in members[k].values():
            counts[role] = counts.get(role, 0) + 1
        best = None
        for a in sorted(slots[k].capacity):
            if a not in by_id[agent].capabilities:
                continue
            room = upper_bound(slots[k].capacity[a], redundancy) - counts.get(a, 0)
            if room > 0 and (best is None or room > best[0]):
                best = (room, a)
        if best is not None:
            members[k][agent] = best[1]
            placed.add(agent)


def emit_local_plans(rosters: Sequence[SubteamRoster], slots: Sequence[SubteamSlot],
                     tasks: Mapping[int, CollabTask]) -> list[LocalTaskPlan]:
    """Every member of roster ``k`` receives the region/task sequence of slot ``k``."""
    plans = []
    for r in rosters:
        steps = tuple((tasks[t].region, t) for t in slots[r.slot].tasks)
        plans.extend(LocalTaskPlan(i, steps) for i in r.members)
    return plans


def check_rosters(rosters: Sequence[SubteamRoster], slots: Sequence[SubteamSlot],
                  fleet: Iterable[Agent], redundancy: float = 0.0) -> list[str]:
    """Violations of disjointness, capability and per-action bounds."""
    by_id = {a.id: a for a in fleet}
    problems = []
    owner: dict[int, int] = {}
    for r in rosters:
        for i in r.members:
            if i in owner:
                problems.append(f"agent {i} in rosters {owner[i]} and {r.slot}")
            owner[i] = r.slot
            if not by_id[i].alive:
                problems.append(f"dead agent {i} in roster {r.slot}")
            if r.roles[i] not in by_id[i].capabilities:
                problems.append(f"agent {i} cannot perform role {r.roles[i]}")
        if not slots[r.slot].tasks:
            continue
        counts = r.counts()
        for a, m in slots[r.slot].capacity.items():
            if counts.get(a, 0) < m:
                problems.append(f"roster {r.slot} has {counts.get(a, 0)} {a} agents, needs {m}")
        for a, c in counts.items():
            if a in slots[r.slot].capacity and c > upper_bound(slots[r.slot].capacity[a], redundancy):
                problems.append(f"roster {r.slot} exceeds the {a} upper bound")
    return problems
