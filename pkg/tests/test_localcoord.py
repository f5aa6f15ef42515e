import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teamplan.localcoord.dcf import (DCFInfeasible, Target, dcf_round, improving_deviation, initial_scheme,
                                     is_k_stable, on_subtask_complete, scheme_cost)
from teamplan.localcoord.routing import Job, Member, RoutingInfeasible, plan_static_known
from teamplan.localcoord.sec import ExplorationGrid, SubtaskPool, explore_step, frontier_waypoints, plan_sec_round
from teamplan.model import DurationParams, Rect, Subtask, distance, eta
from teamplan.optim.oracles import RoutingInstance, StabilityInstance, improving_deviations, routing_oracle
from teamplan.randgen import random_routing_instance, random_stability_instance

DEL = frozenset({"deliver"})


# --- routing --------------------------------------------------------------------------------

def test_two_agents_meet_then_serve():
    ms = [Member(0, (0.0, 0.0), 1.5, DEL), Member(1, (18.0, 0.0), 1.5, DEL)]
    sol = plan_static_known(ms, [Job(0, 2, "deliver", (9.0, 0.0))], DurationParams(6.0, 2))
    assert sol.start[0] == pytest.approx(6.0)
    assert sol.makespan == pytest.approx(12.0)
    assert sol.teams[0] == (0, 1)


def test_symmetric_jobs_split():
    ms = [Member(0, (0.0, 0.0), 1.0, DEL), Member(1, (10.0, 0.0), 1.0, DEL)]
    jobs = [Job(0, 1, "deliver", (0.0, 3.0)), Job(1, 1, "deliver", (10.0, 3.0))]
    sol = plan_static_known(ms, jobs, DurationParams(2.0, 1))
    assert sol.teams == {0: (0,), 1: (1,)}
    assert sol.makespan == pytest.approx(3.0 + 2.0)


def test_three_jobs_two_agents_match_enumeration():
    ms = [Member(0, (0.0, 0.0), 1.0, DEL), Member(1, (6.0, 6.0), 1.5, DEL)]
    jobs = [Job(0, 1, "deliver", (2.0, 1.0)), Job(1, 2, "deliver", (5.0, 2.0)), Job(2, 1, "deliver", (1.0, 6.0))]
    params = DurationParams(2.0, 2)
    want = routing_oracle(RoutingInstance(ms, jobs, params))
    assert plan_static_known(ms, jobs, params).makespan == want


def test_uncoverable_job_is_infeasible():
    ms = [Member(0, (0.0, 0.0), 1.0, DEL)]
    with pytest.raises(RoutingInfeasible):
        plan_static_known(ms, [Job(0, 2, "deliver", (1.0, 1.0))], DurationParams(1.0, 2))


def _check_schedule(sol, members, jobs, params):
    by_id = {m.id: m for m in members}
    jobs_by_id = {j.id: j for j in jobs}
    for j in jobs:
        team = sol.teams[j.id]
        assert len(team) >= j.n
        assert all(j.action in by_id[a].capabilities for a in team)
        assert sol.finish[j.id] == pytest.approx(sol.start[j.id] + eta(j.n, j.action, len(team), params))
    # every member reaches each of its jobs no later than the service start
    for a, route in sol.routes.items():
        t, pos = by_id[a].ready_time, by_id[a].position
        for jid in route:
            job = jobs_by_id[jid]
            t = t + distance(pos, job.location) / by_id[a].speed
            assert t <= sol.start[jid] + 1e-9
            t, pos = sol.finish[jid], job.location
    for p in sol.plans:
        times = [s[0] for s in p.steps]
        assert times == sorted(times)
        assert all(s[2] in by_id[p.agent].capabilities for s in p.steps)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_exact_routing_matches_enumeration(seed):
    inst = random_routing_instance(seed)
    sol = plan_static_known(inst.members, inst.jobs, inst.params, overprovision=inst.overprovision)
    assert sol.exact
    assert sol.makespan == routing_oracle(inst)
    _check_schedule(sol, inst.members, inst.jobs, inst.params)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_heuristic_routing_is_feasible_and_no_better_than_exact(seed):
    inst = random_routing_instance(seed)
    heur = plan_static_known(inst.members, inst.jobs, inst.params, overprovision=inst.overprovision,
                             force_exact=False)
    exact = plan_static_known(inst.members, inst.jobs, inst.params, overprovision=inst.overprovision)
    _check_schedule(heur, inst.members, inst.jobs, inst.params)
    assert heur.makespan >= exact.makespan - 1e-9


# --- exploration ------------------------------------------------------------------------------

def test_full_sensor_detects_everything():
    r = Rect(0, 0, 4, 4)
    grid = ExplorationGrid.create(r)
    subs = [Subtask(i, 1, "perceive", loc, initially_detected=False) for i, loc in enumerate([(0.5, 0.5), (3.5, 3.2)])]
    up = explore_step(grid, [r.centroid], 10.0, subs)
    assert up.detected == (0, 1)
    assert up.pool.exploration == [] and grid.complete


def test_half_sensor_leaves_far_side():
    r = Rect(0, 0, 10, 2)
    grid = ExplorationGrid.create(r)
    subs = [Subtask(0, 1, "perceive", (1.0, 1.0), initially_detected=False),
            Subtask(1, 1, "perceive", (9.0, 1.0), initially_detected=False)]
    up = explore_step(grid, [(0.0, 1.0)], 4.0, subs)
    assert up.detected == (0,)
    assert up.pool.collaborative == [0]


def _frontier_by_definition(visited):
    ny, nx = visited.shape
    out = set()
    for y in range(ny):
        for x in range(nx):
            if visited[y, x]:
                continue
            if any(0 <= y + dy < ny and 0 <= x + dx < nx and visited[y + dy, x + dx]
                   for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1))):
                out.add((y, x))
    return out


def test_corner_frontier_is_disk_boundary():
    grid = ExplorationGrid.create(Rect(0, 0, 10, 10), 1.0)
    grid.sense((0.5, 0.5), 2.0)
    front = {tuple(c) for c in np.argwhere(grid.frontier()).tolist()}
    assert front == _frontier_by_definition(grid.visited)
    assert front == {(0, 3), (1, 2), (2, 1), (3, 0)}
    assert int(grid.visited.sum()) == 6


def test_sec_exploration_only_round():
    ms = [Member(0, (0.0, 0.0), 1.0, frozenset({"perceive"})), Member(1, (10.0, 10.0), 1.0, frozenset({"perceive"}))]
    pool = SubtaskPool([(1.0, 1.0), (9.0, 9.0), (1.0, 9.0), (9.0, 1.0)], [])
    rnd = plan_sec_round(ms, pool, {}, DurationParams(1.0, 2))
    assert rnd.routing is None
    assert rnd.explore == {0: (1.0, 1.0), 1: (9.0, 9.0)}


def test_sec_prefers_detected_subtasks():
    caps = frozenset({"perceive"})
    ms = [Member(i, (float(i), 0.0), 1.0, caps) for i in range(3)]
    sub = Subtask(7, 2, "perceive", (1.0, 3.0))
    pool = SubtaskPool([(8.0, 8.0)], [7])
    rnd = plan_sec_round(ms, pool, {7: sub}, DurationParams(1.0, 4))
    team = rnd.routing.teams[7]
    assert len(team) == 2
    left = set(range(3)) - set(team)
    assert set(rnd.explore) == left and all(w == (8.0, 8.0) for w in rnd.explore.values())
    # the two nearest agents by arrival time take the subtask
    assert set(team) == {0, 1} or set(team) == {1, 2}


def test_sec_done_when_pool_empty():
    assert plan_sec_round([], SubtaskPool([], []), {}, DurationParams(1.0, 1)).complete


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(2, 7), st.floats(0.5, 3.0), st.floats(0, 1), st.floats(0, 1),
       st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), max_size=5))
def test_exploration_terminates_and_finds_everything(w, h, radius, fx, fy, spots):
    r = Rect(0, 0, float(w), float(h))
    grid = ExplorationGrid.create(r)
    subs = [Subtask(i, 1, "perceive", (sx * w, sy * h), initially_detected=False) for i, (sx, sy) in enumerate(spots)]
    agent = Member(0, (fx * w, fy * h), 1.0, frozenset({"perceive"}))
    seen = 0
    for _ in range(w * h + 2):
        up = explore_step(grid, [agent.position], radius, subs)
        for sid in up.detected:
            subs[sid].state = "done"
        now = int(grid.visited.sum())
        assert now >= seen
        if up.pool.exploration:
            assert now > seen or seen == 0
        seen = now
        rnd = plan_sec_round([agent], SubtaskPool(up.pool.exploration, []), {}, DurationParams(1.0, 1))
        if rnd.complete:
            break
        agent = Member(0, rnd.explore[0], 1.0, agent.capabilities)
    assert grid.complete
    assert all(s.state == "done" for s in subs)


def test_waypoints_start_at_centre():
    grid = ExplorationGrid.create(Rect(0, 0, 6, 4))
    assert frontier_waypoints(grid) == [(3.0, 2.0)]


# --- coalition formation ---------------------------------------------------------------------------

GR = frozenset({"grasp"})


def test_dcf_uncrosses():
    ms = [Member(0, (0.0, 0.0), 1.0, GR), Member(1, (7.0, 0.0), 1.0, GR)]
    ts = [Target(0, (1.0, 0.0), 1, "grasp"), Target(1, (6.0, 0.0), 1, "grasp")]
    p = DurationParams(3.0, 1)
    crossed = {0: frozenset({1}), 1: frozenset({0})}
    assert scheme_cost(crossed, ms, ts, p) == (0, (9.0, 9.0))
    out = dcf_round(ms, ts, p, crossed)
    assert out == {0: frozenset({0}), 1: frozenset({1})}
    assert scheme_cost(out, ms, ts, p) == (0, (4.0, 4.0))


def test_single_agent_moves_cannot_improve_after_k1():
    inst = random_stability_instance(17, max_agents=3, max_targets=2, k_stab=1)
    out = dcf_round(inst.members, inst.targets, inst.params, k_stab=1)
    assert improving_deviations(StabilityInstance(inst.members, inst.targets, inst.params, out, 1)) == []


def test_dcf_empty_targets():
    ms = [Member(0, (0.0, 0.0), 1.0, GR)]
    assert dcf_round(ms, [], DurationParams(1.0, 1)) == {}


def test_dcf_infeasible():
    ms = [Member(0, (0.0, 0.0), 1.0, GR)]
    with pytest.raises(DCFInfeasible):
        dcf_round(ms, [Target(0, (1.0, 1.0), 2, "grasp")], DurationParams(1.0, 2))


def test_completion_frees_coalition():
    ms = [Member(i, (float(i), 0.0), 1.0, GR) for i in range(3)]
    ts = [Target(j, (float(2 * j), 2.0), 1, "grasp") for j in range(3)]
    p = DurationParams(2.0, 2)
    scheme = dcf_round(ms, ts, p)
    new, done = on_subtask_complete(ms, ts, p, scheme, completed=1)
    assert not done and set(new) == {0, 2}
    assert new == dcf_round(ms, [ts[0], ts[2]], p, {t: g for t, g in scheme.items() if t != 1})
    last, done = on_subtask_complete(ms, ts[:1], p, {0: frozenset({0})}, completed=0)
    assert done and last == {}


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 2))
def test_converged_scheme_is_stable(seed, k):
    inst = random_stability_instance(seed, k_stab=k)
    try:
        out = dcf_round(inst.members, inst.targets, inst.params, k_stab=k)
    except DCFInfeasible:
        return
    groups = [g for g in out.values()]
    for a, b in itertools.combinations(groups, 2):
        assert not a & b
    assert is_k_stable(out, inst.members, inst.targets, inst.params, k)
    assert improving_deviations(StabilityInstance(inst.members, inst.targets, inst.params, out, k)) == []


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_accepted_deviations_strictly_improve(seed):
    inst = random_stability_instance(seed)
    try:
        scheme = initial_scheme(inst.members, inst.targets, inst.params)
    except DCFInfeasible:
        return
    cost = scheme_cost(scheme, inst.members, inst.targets, inst.params)
    for _ in range(50):
        dev = improving_deviation(scheme, inst.members, inst.targets, inst.params)
        if dev is None:
            break
        scheme = dev[2]
        new = scheme_cost(scheme, inst.members, inst.targets, inst.params)
        assert new < cost
        cost = new
