"""Deterministic discrete-time world in which a replanning fleet executes missions.

Each tick releases due missions, replans when a trigger is pending, starts
tasks whose subteams are on site, lets the local coordinators steer agents
and run subtasks, then moves agents and targets. Agent modes follow the
convention ``idle`` (no subteam), ``navigating`` (moved this tick),
``waiting`` (in a subteam but standing still) and ``executing`` (taking part
in a subtask that has its quorum).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .assign import (Assignment, PlannerConfig, SubteamSlot, assignment_end_times,
                     check_assignment, exec_estimate, merge_capacity, plan_round)
from .formation import (FormationInfeasible, build_cost_matrix, check_rosters, form_subteams)
from .localcoord.dcf import DCFInfeasible, Target, dcf_round
from .localcoord.routing import Job, Member, RoutingInfeasible, plan_static_known
from .localcoord.sec import ExplorationGrid, SubtaskPool, explore_step, frontier_waypoints, plan_sec_round
from .model import (Agent, CollabTask, Mission, Point, Rect, Subtask, TaskGraph, build_task_graph,
                    distance, eta)
from .scenario import LocalConfig, Scenario, SimConfig

MODES = ("idle", "navigating", "waiting", "executing")
METHODS = ("ours", "inf_h", "greedy")
_EPS = 1e-9


def planner_for(method: str, base: PlannerConfig, open_tasks: int, inf_h_budget: int) -> PlannerConfig:
    """Planner settings of each method.

    ``greedy`` gives each subteam at most one task; ``inf_h`` sets the horizon
    to every open task and caps the search with a node budget.
    """
    if method == "ours":
        return base
    if method == "greedy":
        return replace(base, max_slot_len=1)
    if method == "inf_h":
        top = base.max_subteams if base.max_subteams is not None else base.horizon
        return replace(base, horizon=max(1, open_tasks), max_subteams=top, node_budget=inf_h_budget)
    raise ValueError(f"unknown method {method!r}")


# --- runtime records -------------------------------------------------------------

@dataclass
class Body:
    agent: Agent
    mode: str = "idle"
    goal: Point | None = None
    slot: int | None = None
    role: str | None = None
    queue: list[int] = field(default_factory=list)
    working: int | None = None
    waypoint: Point | None = None


@dataclass
class SubRun:
    sub: Subtask
    remaining: float = 0.0
    team: tuple[int, ...] = ()


class _Exec:
    """Common bookkeeping of a started task's local coordinator."""

    def __init__(self, world: "WorldState", task: CollabTask, members: Iterable[int]):
        self.world = world
        self.task = task
        self.members: set[int] = set(members)
        self.subs = {s.id: SubRun(s) for s in task.subtasks}
        self.infeasible = False
        self.reported = False
        self.dirty = True

    @property
    def done(self) -> bool:
        return all(r.sub.state == "done" for r in self.subs.values())

    def add_member(self, aid: int) -> None:
        self.members.add(aid)
        self.dirty = True

    def remove_member(self, aid: int) -> None:
        self.members.discard(aid)
        self.dirty = True

    def bodies(self) -> list[Body]:
        return [self.world.bodies[a] for a in sorted(self.members)]

    def member_snapshot(self, body: Body) -> Member:
        ready = self.world.clock
        pos = body.agent.position
        if body.working is not None:
            run = self.subs[body.working]
            ready += run.remaining
            pos = run.sub.location
        return Member(body.agent.id, pos, body.agent.max_speed, body.agent.capabilities, ready)

    def _start(self, run: SubRun, team: Sequence[int]) -> None:
        run.team = tuple(sorted(team))
        run.remaining = eta(run.sub.n, run.sub.action, len(run.team), self.task.duration)
        run.sub.state = "in_progress"
        for a in run.team:
            self.world.bodies[a].working = run.sub.id
            self.world.bodies[a].goal = None
        self.world.emit("subtask_start", task=self.task.id, subtask=run.sub.id, team=list(run.team))

    def advance(self, dt: float) -> list[SubRun]:
        finished = []
        for sid in sorted(self.subs):
            run = self.subs[sid]
            if run.sub.state != "in_progress":
                continue
            run.remaining -= dt
            if run.remaining <= _EPS:
                run.remaining = 0.0
                run.sub.state = "done"
                finished.append(run)
                for a in run.team:
                    b = self.world.bodies[a]
                    b.working = None
                    if b.queue and b.queue[0] == sid:
                        b.queue.pop(0)
                self.dirty = True
        return finished

    def check_coverage(self) -> bool:
        """Every open subtask has enough capable members."""
        for run in self.subs.values():
            if run.sub.state in ("done", "in_progress"):
                continue
            capable = sum(run.sub.action in self.world.bodies[a].agent.capabilities for a in self.members)
            if capable < run.sub.n:
                return False
        return True

    def quorum_ok(self, body: Body) -> bool:
        run = self.subs[body.working]
        return len(run.team) >= run.sub.n and distance(body.agent.position, run.sub.location) <= self._reach() + 1e-6

    def _reach(self) -> float:
        return 1e-6


class _RouteFollower(_Exec):
    """Runs queued subtasks: a subtask starts once its whole team stands on it."""

    def __init__(self, world, task, members):
        super().__init__(world, task, members)
        self.teams: dict[int, tuple[int, ...]] = {}
        self.order: list[int] = []

    def _install(self, solution, candidates: Iterable[int]) -> None:
        for a in candidates:
            self.world.bodies[a].queue = []
        for jid in solution.order:
            self.teams[jid] = solution.teams[jid]
            if jid not in self.order:
                self.order.append(jid)
        for a, route in solution.routes.items():
            self.world.bodies[a].queue = list(route)

    def _start_ready(self) -> None:
        for jid in list(self.order):
            run = self.subs[jid]
            if run.sub.state != "detected":
                continue
            team = self.teams.get(jid, ())
            if not team:
                continue
            ok = True
            for a in team:
                b = self.world.bodies[a]
                if (a not in self.members or b.working is not None or not b.queue or b.queue[0] != jid
                        or distance(b.agent.position, run.sub.location) > 1e-6):
                    ok = False
                    break
            if ok:
                self._start(run, team)

    def _steer(self) -> None:
        for b in self.bodies():
            if b.working is not None:
                b.goal = None
            elif b.queue:
                b.goal = self.subs[b.queue[0]].sub.location
                b.waypoint = None
            elif b.waypoint is not None:
                b.goal = b.waypoint
            else:
                b.goal = None


class KnownExec(_RouteFollower):
    """Subtasks known in advance: one synchronized routing plan, redone on roster changes."""

    def step(self) -> None:
        if self.dirty:
            self.dirty = False
            self._plan()
        self._start_ready()
        self._steer()

    def _plan(self) -> None:
        jobs = [Job(r.sub.id, r.sub.n, r.sub.action, r.sub.location)
                for _, r in sorted(self.subs.items()) if r.sub.state == "detected"]
        if not jobs:
            return
        members = [self.member_snapshot(b) for b in self.bodies()]
        cfg = self.world.local
        try:
            sol = plan_static_known(members, jobs, self.task.duration,
                                    exact_limit=cfg.routing_exact_limit, overprovision=True)
        except RoutingInfeasible:
            self.infeasible = True
            for b in self.bodies():
                if b.working is None:
                    b.queue = []
            return
        self.infeasible = False
        self.order = [j for j in self.order if self.subs[j].sub.state != "detected"]
        self.teams = {j: t for j, t in self.teams.items() if self.subs[j].sub.state != "detected"}
        for b in self.bodies():
            keep = [b.working] if b.working is not None else []
            b.queue = keep
        self._install(sol, [])
        for b in self.bodies():
            if b.working is not None:
                b.queue = [b.working] + [j for j in b.queue if j != b.working]


class SecExec(_RouteFollower):
    """Subtasks found by exploring: frontier waypoints plus rolling batches of detected work."""

    def __init__(self, world, task, members):
        super().__init__(world, task, members)
        cfg = world.local
        self.grid = ExplorationGrid.create(task.region, cfg.cell_size)

    @property
    def done(self) -> bool:
        return self.grid.complete and super().done

    def sense(self) -> None:
        cfg = self.world.local
        upd = explore_step(self.grid, [b.agent.position for b in self.bodies()], cfg.sensor_radius,
                           [r.sub for r in self.subs.values()])
        for sid in upd.detected:
            self.subs[sid].sub.state = "detected"
            self.world.emit("subtask_detected", task=self.task.id, subtask=sid)
        if upd.detected:
            self.dirty = True

    def _scheduled(self) -> set[int]:
        out = set()
        for b in self.bodies():
            out.update(b.queue)
        return out

    def step(self) -> None:
        for b in self.bodies():
            if b.waypoint is not None and (self.grid.visited[self.grid.cell_of(b.waypoint)]
                                           or distance(b.agent.position, b.waypoint) <= 1e-6):
                b.waypoint = None
                self.dirty = True
        free = [b for b in self.bodies() if b.working is None and not b.queue]
        if free and any(b.waypoint is None for b in free):
            self.dirty = True
        if self.dirty:
            self.dirty = False
            self._plan(free)
        self._start_ready()
        self._steer()

    def _plan(self, free: list[Body]) -> None:
        scheduled = self._scheduled()
        open_ids = [sid for sid, r in sorted(self.subs.items())
                    if r.sub.state == "detected" and sid not in scheduled]
        waypoints = [] if self.grid.complete else frontier_waypoints(self.grid)
        if not free:
            return
        pool = SubtaskPool(waypoints, open_ids)
        members = [self.member_snapshot(b) for b in free]
        cfg = self.world.local
        rnd = plan_sec_round(members, pool, {sid: r.sub for sid, r in self.subs.items()},
                             self.task.duration, cfg.batch_size, cfg.routing_exact_limit)
        if rnd.routing is not None:
            self._install(rnd.routing, [m.id for m in members])
        for b in free:
            b.waypoint = rnd.explore.get(b.agent.id)
        self.infeasible = False
        if self.grid.complete and not any(r.sub.state == "in_progress" for r in self.subs.values()) \
                and not any(b.queue for b in self.bodies()):
            # open work nobody in the subteam can staff
            self.infeasible = not self.check_coverage()


class DcfExec(_Exec):
    """Mobile targets: coalitions pursue targets and capture once a quorum is close."""

    def __init__(self, world, task, members):
        super().__init__(world, task, members)
        self.scheme: dict[int, frozenset[int]] = {}
        self.last_round = -math.inf
        self.velocity: dict[int, Point] = {}
        for s in task.subtasks:
            rng = np.random.default_rng([world.seed, 2, task.id, s.id])
            ang = float(rng.uniform(0, 2 * math.pi))
            self.velocity[s.id] = (s.speed * math.cos(ang), s.speed * math.sin(ang))
            s.velocity = self.velocity[s.id]

    def _reach(self) -> float:
        return self.world.local.capture_radius

    def step(self) -> None:
        cfg = self.world.local
        clock = self.world.clock
        if self.dirty or clock - self.last_round >= cfg.dcf_period - _EPS:
            self.dirty = False
            self.last_round = clock
            self._round()
        for tid in sorted(self.scheme):
            run = self.subs[tid]
            if run.sub.state != "detected":
                continue
            group = sorted(self.scheme[tid])
            near = [a for a in group
                    if distance(self.world.bodies[a].agent.position, run.sub.location) <= cfg.capture_radius]
            if len(near) >= run.sub.n:
                self._start(run, near)
                self.scheme[tid] = frozenset()
                self.dirty = True
        for b in self.bodies():
            b.goal = None
        for tid in sorted(self.scheme):
            run = self.subs[tid]
            if run.sub.state != "detected":
                continue
            for a in sorted(self.scheme[tid]):
                self.world.bodies[a].goal = run.sub.location

    def _round(self) -> None:
        free = [self.member_snapshot(b) for b in self.bodies() if b.working is None]
        open_runs = [r for _, r in sorted(self.subs.items()) if r.sub.state == "detected"]
        staffable = [Target(r.sub.id, r.sub.location, r.sub.n, r.sub.action) for r in open_runs
                     if sum(r.sub.action in m.capabilities for m in free) >= r.sub.n]
        busy = any(r.sub.state == "in_progress" for r in self.subs.values())
        self.infeasible = len(staffable) < len(open_runs) and not busy and not self.check_coverage()
        if not staffable:
            self.scheme = {}
            return
        cfg = self.world.local
        try:
            self.scheme = dcf_round(free, staffable, self.task.duration, self.scheme or None,
                                    cfg.k_stab, cfg.max_coalition)
        except DCFInfeasible:  # pragma: no cover - targets were filtered above
            self.scheme = {}

    def move_targets(self, dt: float) -> None:
        reg = self.task.region
        for sid in sorted(self.subs):
            run = self.subs[sid]
            if run.sub.state != "detected" or not run.sub.mobile:
                continue
            vx, vy = self.velocity[sid]
            x, y = run.sub.location
            x, y = x + vx * dt, y + vy * dt
            if x < reg.x0 or x > reg.x1:
                vx = -vx
                x = min(max(x, reg.x0), reg.x1)
            if y < reg.y0 or y > reg.y1:
                vy = -vy
                y = min(max(y, reg.y0), reg.y1)
            self.velocity[sid] = (vx, vy)
            run.sub.velocity = (vx, vy)
            run.sub.location = (x, y)


_EXEC = {"static_known": KnownExec, "static_unknown": SecExec, "dynamic_known": DcfExec}


@dataclass
class SlotRun:
    id: int
    queue: list[int]
    roster: dict[int, str]
    exec: _Exec | None = None
    stalled: bool = False
    goals_set_for: int | None = None


# --- metrics -----------------------------------------------------------------

@dataclass
class MetricsLog:
    missions: dict[int, dict] = field(default_factory=dict)
    plan_times: list[float] = field(default_factory=list)
    plan_nodes: list[int] = field(default_factory=list)
    budget_hits: int = 0
    mode_ticks: dict[str, int] = field(default_factory=lambda: {m: 0 for m in MODES})
    mode_series: list[dict] = field(default_factory=list)
    ticks: int = 0
    tasks_done: int = 0
    subtasks_done: int = 0
    failures: int = 0
    replans: list[dict] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    success: bool = False
    end_time: float = 0.0
    method: str = "ours"
    seed: int = 0

    def avg_response(self) -> float | None:
        rows = [self.missions[k] for k in sorted(self.missions)]
        if not rows:
            return 0.0
        if any(r["finish_time"] is None for r in rows):
            return None
        return sum(r["finish_time"] - r["release_time"] for r in rows) / len(rows)

    def summary(self) -> dict:
        """Deterministic metrics document (wall-clock timings are kept elsewhere)."""
        ticks = max(1, self.ticks)
        reasons = {"I": 0, "II": 0, "III": 0}
        for r in self.replans:
            for k in r["reasons"]:
                reasons[k] += 1
        done = [self.missions[k] for k in sorted(self.missions) if self.missions[k]["finish_time"] is not None]
        return {
            "method": self.method,
            "seed": self.seed,
            "success": self.success,
            "success_rate": 1.0 if self.success else 0.0,
            "resp_time_s": self.avg_response(),
            "resp_time_completed_s": (sum(r["finish_time"] - r["release_time"] for r in done) / len(done)
                                      if done else None),
            "missions": [dict(self.missions[k], id=k) for k in sorted(self.missions)],
            "agents_T": self.mode_ticks["navigating"] / ticks,
            "agents_W": self.mode_ticks["waiting"] / ticks,
            "agents_X": self.mode_ticks["executing"] / ticks,
            "agents_idle": self.mode_ticks["idle"] / ticks,
            "plan_rounds": len(self.plan_nodes),
            "plan_nodes_avg": (sum(self.plan_nodes) / len(self.plan_nodes)) if self.plan_nodes else 0.0,
            "plan_nodes_max": max(self.plan_nodes, default=0),
            "plan_budget_hits": self.budget_hits,
            "replans": reasons,
            "tasks_done": self.tasks_done,
            "subtasks_done": self.subtasks_done,
            "failures": self.failures,
            "end_time_s": self.end_time,
            "invariant_violations": len(self.violations),
        }

    def timing(self) -> dict:
        return {"plan_time_avg_s": (sum(self.plan_times) / len(self.plan_times)) if self.plan_times else 0.0,
                "plan_time_max_s": max(self.plan_times, default=0.0),
                "plan_times_s": list(self.plan_times)}


def response_from_trace(events: Iterable[Mapping]) -> float | None:
    """Average response recomputed from ``mission_release`` / ``mission_done`` events."""
    release: dict[int, float] = {}
    finish: dict[int, float] = {}
    for e in events:
        if e["event"] == "mission_release":
            release[e["mission"]] = e["release_time"]
        elif e["event"] == "mission_done":
            finish[e["mission"]] = e["t"]
    if not release:
        return 0.0
    if set(finish) != set(release):
        return None
    ids = sorted(release)
    return sum(finish[m] - release[m] for m in ids) / len(ids)


# --- world -------------------------------------------------------------------

class WorldState:
    def __init__(self, agents: Sequence[Agent], missions: Sequence[Mission], planner: PlannerConfig,
                 local: LocalConfig = LocalConfig(), sim: SimConfig = SimConfig(), method: str = "ours",
                 inf_h_budget: int = 5_000_000):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        self.dt = sim.dt
        self.sim = sim
        self.seed = sim.seed
        self.local = local
        self.planner = planner
        self.method = method
        self.inf_h_budget = inf_h_budget
        self.tick_count = 0
        self.clock = 0.0
        self.bodies = {a.id: Body(a) for a in sorted(agents, key=lambda a: a.id)}
        self.pending = sorted(missions, key=lambda m: (m.release_time, m.id))
        self.released: list[Mission] = []
        self.tasks: dict[int, CollabTask] = {}
        self.task_mission: dict[int, int] = {}
        self.slots: dict[int, SlotRun] = {}
        self.next_slot = 0
        self.triggers: set[str] = set()
        self.completed_since = 0
        self.horizon_used = 0
        self.task_start: dict[int, float] = {}
        self.task_end: dict[int, float] = {}
        self.log = MetricsLog(method=method, seed=sim.seed)
        self.fail_rng = np.random.default_rng([sim.seed, 1])
        self.graph: TaskGraph | None = None
        self.idle_ticks = 0

    # -- events ---------------------------------------------------------------
    def emit(self, event: str, **data) -> None:
        rec = {"t": self.clock, "event": event}
        rec.update(data)
        self.log.events.append(rec)

    def violation(self, msg: str) -> None:
        self.log.violations.append(f"t={self.clock:.2f}: {msg}")

    # -- helpers --------------------------------------------------------------
    def alive(self) -> list[Agent]:
        return [b.agent for b in self.bodies.values() if b.agent.alive]

    def unfinished(self) -> list[int]:
        return sorted(t for t in self.tasks if self.tasks[t].state != "done")

    def finished(self) -> bool:
        return not self.pending and all(t.state == "done" for t in self.tasks.values())

    def slot_of_task(self, tid: int) -> SlotRun | None:
        for s in self.slots.values():
            if s.queue and s.queue[0] == tid:
                return s
        return None


def release_missions(state: WorldState) -> bool:
    released = False
    while state.pending and state.pending[0].release_time <= state.clock + _EPS:
        m = state.pending.pop(0)
        state.released.append(m)
        for t in m.tasks:
            state.tasks[t.id] = t
            state.task_mission[t.id] = m.id
        state.log.missions[m.id] = {"release_time": m.release_time, "finish_time": None}
        state.emit("mission_release", mission=m.id, release_time=m.release_time,
                   tasks=[t.id for t in m.tasks])
        released = True
    if released:
        state.triggers.add("II")
    return released


def check_replan_triggers(state: WorldState) -> set[str]:
    """Pending trigger reasons: I (more than half of the last horizon done), II, III."""
    out = set(state.triggers)
    if state.completed_since > state.horizon_used / 2.0:
        out.add("I")
    return out


def inject_failures(state: WorldState, participants: Sequence[int], alpha: float) -> list[int]:
    """Each participant dies with probability ``alpha``; one draw per participant."""
    dead = []
    for a in sorted(participants):
        if state.fail_rng.random() < alpha:
            dead.append(a)
    for a in dead:
        body = state.bodies[a]
        body.agent.alive = False
        body.goal = None
        body.queue = []
        body.working = None
        state.log.failures += 1
        state.emit("agent_failed", agent=a)
        if body.slot is not None and body.slot in state.slots:
            slot = state.slots[body.slot]
            slot.roster.pop(a, None)
            if slot.exec is not None:
                slot.exec.remove_member(a)
        body.slot = None
        body.role = None
    return dead


# -- planning -------------------------------------------------------------------

def _locked_slot(state: WorldState, slot: SlotRun) -> SubteamSlot:
    task = state.tasks[slot.queue[0]]
    base: dict[str, int] = {}
    for a, role in slot.roster.items():
        if state.bodies[a].agent.alive:
            base[role] = base.get(role, 0) + 1
    cap = merge_capacity(base, task.requirements(only_open=True))
    remaining = exec_estimate(task, cap)
    speeds = [state.bodies[a].agent.max_speed for a in slot.roster if state.bodies[a].agent.alive]
    return SubteamSlot((task.id,), cap, 1, base, state.clock + remaining, task.region.centroid,
                       min(speeds, default=None))


def _drop_closure(graph: TaskGraph, seed: int, assigned: set[int]) -> set[int]:
    out = {seed}
    changed = True
    while changed:
        changed = False
        for t in sorted(assigned - out):
            g = graph.group_of(t)
            if any(p in out for p in graph.predecessors(t)) or (g is not None and g & out):
                out.add(t)
                changed = True
        for t in sorted(out):
            g = graph.group_of(t)
            if g is not None and not g <= out:
                out |= (g & assigned)
                changed = True
    return out


def _shrink(assignment: Assignment, graph: TaskGraph, tasks, cfg: PlannerConfig, n_locked: int) -> Assignment | None:
    """Remove the new task that ends last (with its dependents and concurrence partners)."""
    slots = list(assignment.slots)
    new = [t for k, s in enumerate(slots) for t in s.new_tasks]
    if not new:
        return None
    end = assignment_end_times(slots, graph, tasks, cfg.nav_speed)
    worst = max(new, key=lambda t: (end[t], t))
    drop = _drop_closure(graph, worst, set(new))
    out = []
    for k, s in enumerate(slots):
        keep = tuple(t for t in s.tasks if t not in drop or t in s.tasks[:s.locked_prefix])
        if k >= n_locked and not keep:
            continue
        cap = dict(s.base_capacity)
        for t in keep:
            cap = merge_capacity(cap, tasks[t].requirements(only_open=True))
        out.append(replace(s, tasks=keep, capacity=cap))
    return replace(assignment, slots=tuple(out), horizon_used=assignment.horizon_used - len(drop))


def replan(state: WorldState, reasons: set[str]) -> None:
    tic = time.perf_counter()
    done = {t for t, task in state.tasks.items() if task.state == "done"}
    try:
        graph = build_task_graph(state.released, done)
        graph.topological_order()
    except Exception as exc:  # malformed relations are a hard error in the run
        state.violation(f"task graph is not a DAG: {exc}")
        raise
    state.graph = graph
    locked_runs = [s for _, s in sorted(state.slots.items()) if s.exec is not None]
    locked = [_locked_slot(state, s) for s in locked_runs]
    executing = {s.queue[0] for s in locked_runs}
    open_count = len(graph.nodes - executing)
    cfg = planner_for(state.method, state.planner, open_count, state.inf_h_budget)
    alive = state.alive()
    locked_members = {a for s in locked_runs for a in s.roster}
    free = [a for a in alive if a.id not in locked_members]
    pts = [a.position for a in (free or alive)]
    anchor_pos = (sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts)) if pts else (0.0, 0.0)
    assignment = plan_round(graph, state.tasks, alive, locked, cfg, anchor=(state.clock, anchor_pos))
    state.log.plan_nodes.append(assignment.nodes)
    if assignment.budget_exhausted:
        state.log.budget_hits += 1
    if not assignment.feasible:
        assignment = Assignment(tuple(locked), 0, assignment.score, assignment.nodes,
                                assignment.budget_exhausted, feasible=False)

    # expected release time/position for the cost matrix
    for a in alive:
        if a.id in locked_members:
            slot = next(s for s in locked_runs if a.id in s.roster)
            a.busy_until = locked[locked_runs.index(slot)].anchor_time
            a.release_position = state.tasks[slot.queue[0]].region.centroid
        else:
            a.busy_until = state.clock
            a.release_position = a.position
    fixed = {k: {a: r for a, r in s.roster.items() if state.bodies[a].agent.alive}
             for k, s in enumerate(locked_runs)}
    partial = False
    while True:
        slots = assignment.slots
        matrix = build_cost_matrix(alive, slots, state.tasks)
        try:
            rosters = form_subteams(matrix, slots, alive, cfg, fixed)
            break
        except FormationInfeasible:
            smaller = _shrink(assignment, graph, state.tasks, cfg, len(locked))
            if smaller is None:
                rosters = form_subteams(matrix, slots, alive, cfg, fixed, allow_partial=True)
                partial = True
                break
            assignment = smaller

    if state.sim.check_invariants:
        for msg in check_assignment(assignment, graph, alive):
            state.violation(f"assignment: {msg}")
        for msg in check_rosters(rosters, assignment.slots, alive, cfg.redundancy):
            if partial and "needs" in msg:
                continue
            state.violation(f"rosters: {msg}")
        for k, run in enumerate(locked_runs):
            before = {a for a in run.roster if state.bodies[a].agent.alive}
            if not before <= set(rosters[k].members):
                state.violation(f"executing task {run.queue[0]} lost members on replan")

    # apply
    new_slots: dict[int, SlotRun] = {}
    placed: set[int] = set()
    for k, s in enumerate(assignment.slots):
        roster = rosters[k]
        if k < len(locked_runs):
            run = locked_runs[k]
            run.queue = list(s.tasks)
            run.roster = dict(roster.roles)
        else:
            if not s.tasks:
                continue
            run = SlotRun(state.next_slot, list(s.tasks), dict(roster.roles))
            state.next_slot += 1
            for t in s.tasks:
                state.tasks[t].state = "assigned"
        new_slots[run.id] = run
        for a, role in run.roster.items():
            b = state.bodies[a]
            b.slot, b.role = run.id, role
            placed.add(a)
            if run.exec is None:
                b.queue, b.waypoint, b.goal = [], None, None
        run.goals_set_for = None
    for s in state.slots.values():
        if s.id not in new_slots:
            for t in s.queue:
                if state.tasks[t].state == "assigned":
                    state.tasks[t].state = "pending"
    for b in state.bodies.values():
        if b.agent.id not in placed:
            b.slot = b.role = None
            b.queue, b.waypoint, b.goal = [], None, None
    for s in new_slots.values():
        for t in s.queue[1 if s.exec is not None else 0:]:
            state.tasks[t].state = "assigned"
    state.slots = new_slots
    state.completed_since = 0
    state.horizon_used = assignment.horizon_used
    state.triggers.clear()
    state.log.plan_times.append(time.perf_counter() - tic)
    rec = {"reasons": sorted(reasons), "K": len(assignment.slots), "horizon_used": assignment.horizon_used,
           "nodes": assignment.nodes, "budget_exhausted": assignment.budget_exhausted,
           "slots": [list(s.tasks) for s in assignment.slots], "partial": partial}
    state.log.replans.append(dict(rec, t=state.clock))
    state.emit("replan", **rec,
               rosters={str(r.id): sorted(r.roster) for r in state.slots.values()})


# -- tick ---------------------------------------------------------------------

def _ready_to_start(state: WorldState, slot: SlotRun) -> bool:
    tid = slot.queue[0]
    task = state.tasks[tid]
    members = _participants(state, slot, tid)
    if not members:
        return False
    if state.graph is not None:
        if any(state.tasks[p].state != "done" for p in state.graph.predecessors(tid) if p in state.tasks):
            return False
    # the subteam must be able to staff every open subtask
    for s in task.subtasks:
        if s.state == "done":
            continue
        if sum(s.action in state.bodies[a].agent.capabilities for a in members) < s.n:
            if not slot.stalled:
                slot.stalled = True
                state.triggers.add("III")
                state.emit("infeasible", task=tid, slot=slot.id, reason="roster cannot staff subtasks")
            return False
    slot.stalled = False
    return True


def _participants(state: WorldState, slot: SlotRun, tid: int) -> list[int]:
    """Alive roster members that take part in task ``tid``."""
    return sorted(a for a in slot.roster if _useful(state, slot, a, tid) and state.bodies[a].agent.alive)


def _useful(state: WorldState, slot: SlotRun, aid: int, tid: int) -> bool:
    """A member helps with ``tid`` when its role is needed there, or when it is
    capable and no later task of the subteam needs its role."""
    role = slot.roster[aid]
    req = state.tasks[tid].requirements()
    if role in req:
        return True
    if not state.bodies[aid].agent.capabilities & req.keys():
        return False
    k = slot.queue.index(tid) if tid in slot.queue else 0
    return not any(role in state.tasks[t].requirements() for t in slot.queue[k + 1:])


def _set_goals(state: WorldState, slot: SlotRun) -> None:
    """Send members useful for the head task to its region; the rest hold position."""
    task = state.tasks[slot.queue[0]]
    margin = min(0.5, task.region.width / 4, task.region.height / 4)
    for a in sorted(slot.roster):
        if slot.exec is not None and a in slot.exec.members:
            continue
        b = state.bodies[a]
        b.goal = None
        if _useful(state, slot, a, task.id):
            b.goal = task.region.clamp(b.agent.position, margin)
    slot.goals_set_for = slot.queue[0]


def _dispatch_ahead(state: WorldState, slot: SlotRun) -> None:
    """Members held for the next task leave once the current one is about to end."""
    cur = state.tasks[slot.queue[0]]
    nxt = state.tasks[slot.queue[1]]
    cap: dict[str, int] = {}
    for a, role in slot.roster.items():
        if state.bodies[a].agent.alive:
            cap[role] = cap.get(role, 0) + 1
    remaining = exec_estimate(cur, cap)
    margin = min(0.5, nxt.region.width / 4, nxt.region.height / 4)
    for a in sorted(slot.roster):
        b = state.bodies[a]
        if a in slot.exec.members or b.goal is not None or not b.agent.alive:
            continue
        if _useful(state, slot, a, cur.id) or not _useful(state, slot, a, nxt.id):
            continue
        goal = nxt.region.clamp(b.agent.position, margin)
        if distance(b.agent.position, goal) / b.agent.max_speed >= remaining:
            b.goal = goal


def _start_tasks(state: WorldState) -> None:
    ready: dict[int, SlotRun] = {}
    for sid in sorted(state.slots):
        slot = state.slots[sid]
        if not slot.queue:
            continue
        if slot.goals_set_for != slot.queue[0]:
            _set_goals(state, slot)
        if slot.exec is not None:
            if len(slot.queue) > 1:
                _dispatch_ahead(state, slot)
            continue
        if _ready_to_start(state, slot):
            ready[slot.queue[0]] = slot
    started: set[int] = set()
    for tid in sorted(ready):
        if tid in started:
            continue
        group = state.graph.group_of(tid) if state.graph is not None else None
        members = sorted(group) if group else [tid]
        if any(m not in ready for m in members if state.tasks[m].state != "done"):
            continue
        for m in members:
            _start_task(state, ready[m])
            started.add(m)


def _start_task(state: WorldState, slot: SlotRun) -> None:
    tid = slot.queue[0]
    task = state.tasks[tid]
    task.state = "executing"
    participants = _participants(state, slot, tid)
    state.task_start[tid] = state.clock
    state.emit("task_start", task=tid, slot=slot.id, team=participants)
    dead = set(inject_failures(state, participants, state.sim.alpha))
    members = [a for a in participants if a not in dead]
    slot.exec = _EXEC[task.kind](state, task, members)
    for a in members:
        state.bodies[a].goal = None


def _join_arrivals(state: WorldState) -> None:
    """Roster members added to an executing task join its local coordination at once."""
    for sid in sorted(state.slots):
        slot = state.slots[sid]
        if slot.exec is None:
            continue
        for a in _participants(state, slot, slot.queue[0]):
            if a not in slot.exec.members:
                slot.exec.add_member(a)


def _finish_task(state: WorldState, slot: SlotRun) -> None:
    tid = slot.queue.pop(0)
    task = state.tasks[tid]
    task.state = "done"
    state.task_end[tid] = state.clock
    state.completed_since += 1
    state.log.tasks_done += 1
    state.emit("task_done", task=tid, slot=slot.id)
    for a in slot.exec.members:
        b = state.bodies[a]
        b.queue, b.waypoint, b.working, b.goal = [], None, None, None
    slot.exec = None
    slot.goals_set_for = None
    mid = state.task_mission[tid]
    mission = next(m for m in state.released if m.id == mid)
    if all(t.state == "done" for t in mission.tasks):
        mission.finish_time = state.clock
        state.log.missions[mid]["finish_time"] = state.clock
        state.emit("mission_done", mission=mid)
    if not slot.queue:
        for a in slot.roster:
            b = state.bodies[a]
            b.slot = b.role = None
            b.goal = None
        del state.slots[slot.id]


def tick(state: WorldState) -> WorldState:
    """Advance the world by one step of ``dt`` seconds."""
    dt = state.dt
    release_missions(state)
    reasons = check_replan_triggers(state)
    if reasons:
        replan(state, reasons)

    _start_tasks(state)
    _join_arrivals(state)
    execs = [state.slots[s].exec for s in sorted(state.slots) if state.slots[s].exec is not None]
    for ex in execs:
        if isinstance(ex, SecExec):
            ex.sense()
        ex.step()
        if ex.infeasible and not ex.reported:
            ex.reported = True
            state.triggers.add("III")
            state.emit("infeasible", task=ex.task.id, reason="local coordination infeasible")
        elif not ex.infeasible:
            ex.reported = False

    # execution progress
    finished_subs = 0
    for ex in execs:
        for run in ex.advance(dt):
            finished_subs += 1
            state.log.subtasks_done += 1
            state.emit("subtask_done", task=ex.task.id, subtask=run.sub.id,
                       t_end=round((state.tick_count + 1) * dt, 10))

    # movement
    moved = set()
    for aid, b in state.bodies.items():
        if not b.agent.alive or b.goal is None or b.working is not None:
            continue
        x, y = b.agent.position
        gx, gy = b.goal
        d = math.hypot(gx - x, gy - y)
        if d <= 0.0:
            continue
        step = b.agent.max_speed * dt
        if d <= step + 1e-12:
            new = (gx, gy)
        else:
            new = (x + (gx - x) * step / d, y + (gy - y) * step / d)
        if state.sim.check_invariants and distance(new, b.agent.position) > step + 1e-9:
            state.violation(f"agent {aid} moved faster than its maximum speed")
        b.agent.position = new
        moved.add(aid)
    for ex in execs:
        if isinstance(ex, DcfExec):
            ex.move_targets(dt)

    # modes
    counts = {m: 0 for m in MODES}
    for aid, b in state.bodies.items():
        if not b.agent.alive:
            b.mode = "idle"
            continue
        if b.working is not None:
            b.mode = "executing"
        elif aid in moved:
            b.mode = "navigating"
        elif b.slot is not None:
            b.mode = "waiting"
        else:
            b.mode = "idle"
        counts[b.mode] += 1
    for m in MODES:
        state.log.mode_ticks[m] += counts[m]
    if state.sim.check_invariants:
        _tick_invariants(state, execs)

    state.tick_count += 1
    state.clock = round(state.tick_count * dt, 10)
    state.log.ticks = state.tick_count

    for sid in sorted(list(state.slots)):
        slot = state.slots.get(sid)
        if slot is not None and slot.exec is not None and slot.exec.done:
            _finish_task(state, slot)
    if state.sim.trace_stride and state.tick_count % state.sim.trace_stride == 0:
        snap = {"modes": counts}
        state.log.mode_series.append({"t": state.clock, **counts})
        state.emit("snapshot", **snap,
                   positions={str(a): [round(b.agent.position[0], 3), round(b.agent.position[1], 3)]
                              for a, b in state.bodies.items() if b.agent.alive})
    active = bool(moved) or finished_subs > 0 or any(
        r.sub.state == "in_progress" for ex in execs for r in ex.subs.values())
    state.idle_ticks = 0 if active else state.idle_ticks + 1
    return state


def _tick_invariants(state: WorldState, execs) -> None:
    owner: dict[int, int] = {}
    for sid, slot in state.slots.items():
        for a in slot.roster:
            if a in owner:
                state.violation(f"agent {a} in rosters {owner[a]} and {sid}")
            owner[a] = sid
    for aid, b in state.bodies.items():
        if not b.agent.alive:
            continue
        if b.mode not in MODES:
            state.violation(f"agent {aid} has unknown mode {b.mode}")
        if b.mode == "idle" and aid in owner:
            state.violation(f"agent {aid} is idle while in roster {owner[aid]}")
        if b.mode == "executing":
            ex = next((e for e in execs if aid in e.members), None)
            if ex is None or not ex.quorum_ok(b):
                state.violation(f"agent {aid} executing without quorum at the subtask")


def final_checks(state: WorldState) -> None:
    """Whole-run checks: concurrence starts and precedence order of task starts."""
    dt = state.dt
    for m in state.released:
        for a, b in sorted(m.concurrence):
            if a in state.task_start and b in state.task_start:
                if abs(state.task_start[a] - state.task_start[b]) > dt + 1e-9:
                    state.violation(f"concurrent tasks {a} and {b} started apart")
            elif (a in state.task_start) != (b in state.task_start):
                state.violation(f"only one of concurrent tasks {a}, {b} started")
        for a, b in sorted(m.precedence):
            if b in state.task_start and (a not in state.task_end or state.task_start[b] < state.task_end[a] - 1e-9):
                state.violation(f"task {b} started before predecessor {a} finished")


def run_missions(agents: Sequence[Agent], missions: Sequence[Mission], planner: PlannerConfig,
                 local: LocalConfig = LocalConfig(), sim: SimConfig = SimConfig(), method: str = "ours",
                 inf_h_budget: int = 5_000_000, idle_limit: float = 120.0) -> MetricsLog:
    state = WorldState(agents, missions, planner, local, sim, method, inf_h_budget)
    limit_ticks = int(round(sim.max_time / sim.dt))
    idle_cap = int(round(idle_limit / sim.dt))
    while not state.finished() and state.tick_count < limit_ticks:
        tick(state)
        if state.idle_ticks > idle_cap and not state.triggers and not state.pending:
            state.emit("stalled")
            break
    state.log.success = state.finished()
    state.log.end_time = state.clock
    if sim.check_invariants:
        final_checks(state)
    state.emit("end", success=state.log.success)
    return state.log


def run_scenario(scenario: Scenario, method: str = "ours", seed: int | None = None) -> MetricsLog:
    """Build fleet and missions for ``seed`` and simulate until done or out of time."""
    seed = scenario.sim.seed if seed is None else seed
    sim = replace(scenario.sim, seed=seed)
    return run_missions(scenario.fleet.build(), scenario.build_missions(seed), scenario.planner,
                        scenario.local, sim, method, scenario.inf_h_budget)


def write_outputs(log: MetricsLog, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = log.summary()
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps(log.timing(), indent=2, sort_keys=True) + "\n")
    with open(out / "trace.jsonl", "w") as fh:
        for e in log.events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    if log.violations:
        (out / "violations.txt").write_text("\n".join(log.violations) + "\n")
    return metrics
