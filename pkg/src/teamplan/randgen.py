"""Seeded random instances for tests, oracles and experiment scripts."""

from __future__ import annotations

import numpy as np

from .assign import PlannerConfig
from .localcoord.dcf import Target
from .localcoord.routing import Job, Member
from .model import CollabTask, DurationParams, Mission, Rect, Subtask, build_task_graph
from .optim.bottleneck import BottleneckProblem
from .optim.oracles import AssignInstance, RoutingInstance, StabilityInstance

ACTIONS = ("perceive", "deliver", "grasp")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_region(rng, extent=(30.0, 25.0), size=(2.0, 6.0)) -> Rect:
    w, h = rng.uniform(*size, 2)
    x0 = rng.uniform(0, extent[0] - w)
    y0 = rng.uniform(0, extent[1] - h)
    return Rect(round(x0, 3), round(y0, 3), round(x0 + w, 3), round(y0 + h, 3))


def random_task(rng, task_id: int, max_subtasks: int = 3, max_n: int = 3,
                kind: str = "static_known") -> CollabTask:
    region = random_region(rng)
    subs = []
    for i in range(int(rng.integers(1, max_subtasks + 1))):
        loc = (round(float(rng.uniform(region.x0, region.x1)), 3),
               round(float(rng.uniform(region.y0, region.y1)), 3))
        subs.append(Subtask(i, int(rng.integers(1, max_n + 1)), ACTIONS[int(rng.integers(3))], loc))
    d0 = round(float(rng.uniform(1.0, 5.0)), 2)
    return CollabTask(task_id, region, subs, DurationParams(d0, int(rng.integers(1, 4))), kind)


def random_assign_instance(seed, max_tasks: int = 6, max_edges: int = 2, max_horizon: int = 6,
                           max_slots: int = 3, concurrence: bool = True) -> AssignInstance:
    """Tasks with a few precedence edges (and maybe one concurrent pair) plus a fleet."""
    rng = _rng(seed)
    n = int(rng.integers(2, max_tasks + 1))
    tasks = [random_task(rng, t) for t in range(1, n + 1)]
    edges = set()
    for _ in range(int(rng.integers(0, max_edges + 1))):
        a, b = sorted(int(x) for x in rng.choice(np.arange(1, n + 1), 2, replace=False))
        edges.add((a, b))
    conc = set()
    if concurrence and n >= 3 and rng.random() < 0.3:
        free = [t for t in range(1, n + 1) if not any(t in e for e in edges)]
        if len(free) >= 2:
            a, b = sorted(int(x) for x in rng.choice(free, 2, replace=False))
            conc.add((a, b))
    mission = Mission(1, 0.0, tuple(tasks), frozenset(edges), frozenset(conc))
    graph = build_task_graph([mission])
    counts = {a: int(rng.integers(2, 8)) for a in ACTIONS}
    horizon = int(rng.integers(1, max_horizon + 1))
    penalty = float(rng.choice([5.0, 20.0, 1000.0]))
    config = PlannerConfig(horizon=horizon, unassigned_penalty=penalty,
                           max_subteams=min(max_slots, horizon))
    anchor = (0.0, (round(float(rng.uniform(0, 30)), 3), round(float(rng.uniform(0, 25)), 3)))
    return AssignInstance(graph, {t.id: t for t in tasks}, counts, config, anchor)


def random_bottleneck_instance(seed, max_agents: int = 8, max_slots: int = 3,
                               max_need: int = 2) -> tuple[BottleneckProblem, list[tuple[int, str]]]:
    """Agents with mixed capabilities against per-slot, per-action unit demands."""
    rng = _rng(seed)
    n_agents = int(rng.integers(2, max_agents + 1))
    caps = []
    for _ in range(n_agents):
        k = int(rng.integers(1, 3))
        caps.append(frozenset(ACTIONS[i] for i in rng.choice(3, k, replace=False)))
    units = []
    for s in range(int(rng.integers(1, max_slots + 1))):
        for a in ACTIONS:
            units.extend((s, a) for _ in range(int(rng.integers(0, max_need + 1))))
    units = units[:n_agents] or [(0, ACTIONS[0])]
    slot_cost = rng.uniform(0, 20, size=(n_agents, max_slots)).round(2)
    costs = np.array([[slot_cost[i, s] for s, _ in units] for i in range(n_agents)])
    elig = np.array([[a in caps[i] for _, a in units] for i in range(n_agents)], dtype=bool)
    return BottleneckProblem(costs, elig, tuple(range(n_agents)), tuple(units)), units


def random_members(rng, count: int, extent=(10.0, 10.0), actions=ACTIONS) -> list[Member]:
    out = []
    for i in range(count):
        k = int(rng.integers(1, len(actions) + 1))
        caps = frozenset(actions[j] for j in rng.choice(len(actions), k, replace=False))
        pos = (round(float(rng.uniform(0, extent[0])), 3), round(float(rng.uniform(0, extent[1])), 3))
        out.append(Member(i, pos, float(rng.choice([0.5, 1.0, 1.5])), caps))
    return out


def random_routing_instance(seed, max_jobs: int = 4, max_agents: int = 4) -> RoutingInstance:
    rng = _rng(seed)
    actions = ACTIONS[:2]
    members = random_members(rng, int(rng.integers(2, max_agents + 1)), actions=actions)
    jobs = []
    for j in range(int(rng.integers(1, max_jobs + 1))):
        a = actions[int(rng.integers(2))]
        capable = sum(a in m.capabilities for m in members)
        if capable == 0:
            continue
        n = int(rng.integers(1, min(2, capable) + 1))
        loc = (round(float(rng.uniform(0, 10)), 3), round(float(rng.uniform(0, 10)), 3))
        jobs.append(Job(j, n, a, loc))
    if not jobs:
        m = members[0]
        jobs.append(Job(0, 1, sorted(m.capabilities)[0], (5.0, 5.0)))
    params = DurationParams(round(float(rng.uniform(1, 4)), 2), int(rng.integers(1, 4)))
    return RoutingInstance(members, jobs, params, overprovision=bool(rng.random() < 0.7))


def random_stability_instance(seed, max_agents: int = 5, max_targets: int = 3,
                              k_stab: int = 2) -> StabilityInstance:
    rng = _rng(seed)
    members = random_members(rng, int(rng.integers(2, max_agents + 1)), actions=("grasp", "deliver"))
    targets = []
    for t in range(int(rng.integers(1, max_targets + 1))):
        a = "grasp" if rng.random() < 0.7 else "deliver"
        capable = sum(a in m.capabilities for m in members)
        if capable == 0:
            continue
        pos = (round(float(rng.uniform(0, 10)), 3), round(float(rng.uniform(0, 10)), 3))
        targets.append(Target(t, pos, int(rng.integers(1, min(2, capable) + 1)), a))
    if not targets:
        m = members[0]
        targets.append(Target(0, (5.0, 5.0), 1, sorted(m.capabilities)[0]))
    params = DurationParams(round(float(rng.uniform(1, 4)), 2), int(rng.integers(1, 4)))
    return StabilityInstance(members, targets, params, {}, k_stab)
