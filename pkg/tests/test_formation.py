import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teamplan.assign import PlannerConfig, SubteamSlot
from teamplan.formation import (CostMatrix, FormationInfeasible, SubteamRoster, build_cost_matrix,
                                check_rosters, emit_local_plans, form_subteams, upper_bound)
from teamplan.model import Agent, CollabTask, DurationParams, Rect, Subtask

ACTIONS = ("perceive", "deliver", "grasp")


def region_at(x, y):
    return Rect(x - 1, y - 1, x + 1, y + 1)


def task(tid, x, y, req):
    r = region_at(x, y)
    return CollabTask(tid, r, [Subtask(i, n, a, r.centroid) for i, (a, n) in enumerate(sorted(req.items()))],
                      DurationParams(2.0, 4))


def plain_matrix(values, agent_ids, slot_ids):
    return CostMatrix(np.asarray(values, dtype=float), tuple(agent_ids), tuple(slot_ids))


# --- cost matrix -----------------------------------------------------------------------

def test_idle_agent_cost_is_travel_time():
    t = task(1, 15.0, 0.0, {"deliver": 1})
    ag = Agent(0, (0.0, 0.0), 1.5, frozenset({"deliver"}), busy_until=3.0)
    m = build_cost_matrix([ag], [SubteamSlot((1,), {"deliver": 1})], {1: t}, nav_speed=1.5)
    assert m.values[0, 0] == pytest.approx(3.0 + 10.0)


def test_busy_colocated_agent_cost_is_release_time():
    t = task(1, 5.0, 5.0, {"deliver": 1})
    ag = Agent(0, (0.0, 0.0), 1.5, frozenset({"deliver"}), busy_until=8.0, release_position=(5.0, 5.0))
    m = build_cost_matrix([ag], [SubteamSlot((1,), {"deliver": 1})], {1: t}, nav_speed=1.5)
    assert m.values[0, 0] == 8.0


def test_matrix_entries_follow_formula():
    tasks = {1: task(1, 4.0, 3.0, {"deliver": 1}), 2: task(2, 10.0, 10.0, {"grasp": 1})}
    fleet = [Agent(0, (0.0, 0.0), 1.5, frozenset({"deliver"})),
             Agent(1, (4.0, 0.0), 0.5, frozenset({"grasp"}), busy_until=2.0),
             Agent(2, (10.0, 4.0), 1.5, frozenset({"grasp", "deliver"}))]
    slots = [SubteamSlot((1,), {"deliver": 1}), SubteamSlot((2,), {"grasp": 1})]
    m = build_cost_matrix(fleet, slots, tasks, nav_speed=1.5)
    assert m.values.shape == (3, 2)
    for i, ag in enumerate(fleet):
        for k, s in enumerate(slots):
            c = tasks[s.tasks[0]].region.centroid
            want = ag.busy_until + np.hypot(c[0] - ag.position[0], c[1] - ag.position[1]) / 1.5
            assert m.values[i, k] == pytest.approx(want)
    # frozen values
    np.testing.assert_allclose(m.values, [[5 / 1.5, np.hypot(10, 10) / 1.5],
                                          [2 + 3 / 1.5, 2 + np.hypot(6, 10) / 1.5],
                                          [np.hypot(6, 1) / 1.5, 6 / 1.5]])


def test_dead_agents_and_empty_slots_left_out():
    tasks = {1: task(1, 1.0, 1.0, {"deliver": 1})}
    fleet = [Agent(0, (0.0, 0.0), 1.5, frozenset({"deliver"}), alive=False),
             Agent(1, (0.0, 0.0), 1.5, frozenset({"deliver"}))]
    m = build_cost_matrix(fleet, [SubteamSlot(), SubteamSlot((1,), {"deliver": 1})], tasks)
    assert m.agent_ids == (1,) and m.slot_ids == (1,)


# --- rosters ---------------------------------------------------------------------------

def test_diagonal_pairing():
    fleet = [Agent(i, (0.0, 0.0), 1.0, frozenset({"deliver"})) for i in range(2)]
    slots = [SubteamSlot((1,), {"deliver": 1}), SubteamSlot((2,), {"deliver": 1})]
    rosters = form_subteams(plain_matrix([[1, 9], [9, 1]], (0, 1), (0, 1)), slots, fleet)
    assert [r.members for r in rosters] == [(0,), (1,)]


def test_capability_forces_choice():
    fleet = [Agent(0, (0.0, 0.0), 1.0, frozenset({"deliver"})),
             Agent(1, (0.0, 0.0), 1.0, frozenset({"grasp"})),
             Agent(2, (0.0, 0.0), 1.0, frozenset({"deliver"}))]
    slots = [SubteamSlot((1,), {"deliver": 2})]
    rosters = form_subteams(plain_matrix([[5], [0], [7]], (0, 1, 2), (0,)), slots, fleet)
    assert rosters[0].members == (0, 2)


def test_infeasible_formation_raises():
    fleet = [Agent(0, (0.0, 0.0), 1.0, frozenset({"deliver"}))]
    slots = [SubteamSlot((1,), {"grasp": 1})]
    with pytest.raises(FormationInfeasible):
        form_subteams(plain_matrix([[1]], (0,), (0,)), slots, fleet)


def test_redundancy_adds_spares_within_bound():
    fleet = [Agent(i, (0.0, 0.0), 1.0, frozenset({"deliver"})) for i in range(5)]
    slots = [SubteamSlot((1,), {"deliver": 2})]
    m = plain_matrix([[i] for i in range(5)], range(5), (0,))
    rosters = form_subteams(m, slots, fleet, PlannerConfig(redundancy=0.5))
    assert upper_bound(2, 0.5) == 3
    assert rosters[0].members == (0, 1, 2)
    assert check_rosters(rosters, slots, fleet, 0.5) == []


def test_fixed_members_are_kept():
    fleet = [Agent(i, (0.0, 0.0), 1.0, frozenset({"deliver"})) for i in range(3)]
    slots = [SubteamSlot((1,), {"deliver": 2})]
    rosters = form_subteams(plain_matrix([[9], [1], [2]], range(3), (0,)), slots, fleet, fixed={0: {0: "deliver"}})
    assert rosters[0].members == (0, 1)


def test_local_plans_copy_the_sequence():
    tasks = {1: task(1, 2, 2, {"deliver": 1}), 2: task(2, 6, 6, {"deliver": 1})}
    slots = [SubteamSlot((1, 2), {"deliver": 1}), SubteamSlot((), {})]
    rosters = [SubteamRoster(0, (3, 7), {3: "deliver", 7: "deliver"}), SubteamRoster(1, (), {})]
    plans = emit_local_plans(rosters, slots, tasks)
    assert [p.agent for p in plans] == [3, 7]
    assert plans[0].steps == ((tasks[1].region, 1), (tasks[2].region, 2)) == plans[1].steps


# --- oracle comparison ------------------------------------------------------------------------

def _random_formation(seed, n_agents=6, n_slots=2):
    rng = np.random.default_rng(seed)
    fleet = []
    for i in range(n_agents):
        caps = frozenset(ACTIONS[j] for j in rng.choice(3, int(rng.integers(1, 3)), replace=False))
        fleet.append(Agent(i, (float(rng.uniform(0, 20)), float(rng.uniform(0, 20))),
                           float(rng.choice([0.5, 1.5])), caps, busy_until=float(rng.choice([0.0, 3.0]))))
    tasks, slots = {}, []
    for k in range(n_slots):
        req = {a: int(rng.integers(1, 3)) for a in rng.choice(ACTIONS, int(rng.integers(1, 3)), replace=False)}
        tasks[k + 1] = task(k + 1, float(rng.uniform(2, 18)), float(rng.uniform(2, 18)), req)
        slots.append(SubteamSlot((k + 1,), req))
    return fleet, slots, tasks


def _oracle_bottleneck(matrix, slots, fleet):
    """Smallest max start time over every way to hand each agent at most one (slot, role)."""
    options = []
    for ag in fleet:
        opts = [None] + [(k, a) for k, s in enumerate(slots) for a in s.capacity if a in ag.capabilities]
        options.append(opts)
    best = None
    for pick in itertools.product(*options):
        counts = {}
        for p in pick:
            if p is not None:
                counts[p] = counts.get(p, 0) + 1
        if any(counts.get((k, a), 0) != n for k, s in enumerate(slots) for a, n in s.capacity.items()):
            continue
        worst = max(matrix.cost(ag.id, k, a) for ag, p in zip(fleet, pick) if p is not None for k, a in [p])
        best = worst if best is None else min(best, worst)
    return best


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 50_000))
def test_roster_bottleneck_matches_enumeration(seed):
    fleet, slots, tasks = _random_formation(seed)
    m = build_cost_matrix(fleet, slots, tasks)
    want = _oracle_bottleneck(m, slots, fleet)
    if want is None:
        with pytest.raises(FormationInfeasible):
            form_subteams(m, slots, fleet)
        return
    rosters = form_subteams(m, slots, fleet)
    assert check_rosters(rosters, slots, fleet) == []
    got = max(m.cost(i, r.slot, r.roles[i]) for r in rosters for i in r.members)
    assert got == want


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 50_000))
def test_more_agents_never_raise_the_bottleneck(seed):
    fleet, slots, tasks = _random_formation(seed, n_agents=5)
    m = build_cost_matrix(fleet, slots, tasks)
    try:
        small = form_subteams(m, slots, fleet)
    except FormationInfeasible:
        return
    extra = fleet + [Agent(99, (10.0, 10.0), 1.5, frozenset(ACTIONS))]
    m2 = build_cost_matrix(extra, slots, tasks)
    big = form_subteams(m2, slots, extra)

    def value(matrix, rosters):
        return max(matrix.cost(i, r.slot, r.roles[i]) for r in rosters for i in r.members)

    assert value(m2, big) <= value(m, small)
    assert form_subteams(m2, slots, extra) == big
