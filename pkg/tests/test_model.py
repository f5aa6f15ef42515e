import itertools

import pytest
from hypothesis import given, settings, strategies as st

from teamplan.model import (CollabTask, DurationParams, InfeasibleTeam, MalformedMission, Mission, Rect,
                            Subtask, build_task_graph, eligible_tasks, eta, expand_template_mission,
                            mission_from_dict, mission_to_dict)


def task(tid, n=1, action="deliver", region=Rect(0, 0, 4, 4)):
    return CollabTask(tid, region, [Subtask(0, n, action, region.centroid)], DurationParams(2.0, 4))


# --- duration -------------------------------------------------------------------

@pytest.mark.parametrize("team,expected", [(2, 10.0), (4, 5.0), (8, 5.0)])
def test_eta_examples(team, expected):
    assert eta(2, "deliver", team, DurationParams(10.0, 4)) == expected


def test_eta_rejects_short_team():
    with pytest.raises(InfeasibleTeam):
        eta(3, "grasp", 2, DurationParams(1.0, 4))


@given(st.integers(1, 5), st.integers(1, 6), st.floats(0.1, 50), st.integers(0, 10))
def test_eta_non_increasing_and_saturates(n, n_sat, d0, extra):
    p = DurationParams(d0, n_sat)
    sizes = range(n, n + extra + 2)
    vals = [eta(n, "a", k, p) for k in sizes]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    top = max(n_sat, n)
    assert eta(n, "a", top + extra, p) == pytest.approx(d0 * n / top)


# --- task graph -------------------------------------------------------------------

def test_graph_chain_and_completion():
    m = Mission(1, 0.0, (task(1), task(2)), frozenset({(1, 2)}))
    g = build_task_graph([m])
    assert g.nodes == {1, 2} and g.precedence_edges == {(1, 2)}
    g = build_task_graph([m], completed={1})
    assert g.nodes == {2} and not g.precedence_edges


def test_graph_of_eight_task_mission():
    # eight tasks, eight ordered pairs and one simultaneous pair
    prec = {(1, 3), (2, 3), (1, 4), (2, 4), (3, 5), (4, 6), (5, 7), (6, 8)}
    m = Mission(1, 0.0, tuple(task(i) for i in range(1, 9)), frozenset(prec), frozenset({(1, 2)}))
    g = build_task_graph([m])
    assert len(g.nodes) == 8
    assert len(g.precedence_edges) == 8
    assert [len(c) for c in g.concurrence_groups] == [2]


def test_cycle_rejected():
    with pytest.raises(MalformedMission):
        build_task_graph([Mission(1, 0.0, (task(1), task(2)), frozenset({(1, 2), (2, 1)}))])


def test_relation_pairs_stay_inside_their_mission():
    a = Mission(1, 0.0, (task(1),))
    with pytest.raises(MalformedMission):
        Mission(2, 0.0, (task(2),), frozenset({(1, 2)}))
    assert build_task_graph([a]).nodes == {1}


def test_eligible_chain():
    m = Mission(1, 0.0, (task(1), task(2), task(3)), frozenset({(1, 2), (2, 3)}))
    g = build_task_graph([m])
    assert eligible_tasks(g) == {1}
    assert eligible_tasks(g, executing={1}) == {2}


def test_eligible_concurrent_pair_needs_two_slots():
    m = Mission(1, 0.0, (task(1), task(2)), concurrence=frozenset({(1, 2)}))
    g = build_task_graph([m])
    assert eligible_tasks(g, free_slots=1) == set()
    assert eligible_tasks(g, free_slots=2) == {1, 2}


@st.composite
def dags(draw):
    n = draw(st.integers(2, 7))
    pairs = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]
    edges = draw(st.sets(st.sampled_from(pairs), max_size=6))
    return n, edges


@given(dags())
def test_graph_acyclic_and_eligibility_monotone(data):
    n, edges = data
    m = Mission(1, 0.0, tuple(task(i) for i in range(1, n + 1)), frozenset(edges))
    g = build_task_graph([m])
    order = g.topological_order()
    pos = {t: i for i, t in enumerate(order)}
    assert all(pos[a] < pos[b] for a, b in g.precedence_edges)
    # completing one more eligible task never removes another task from the eligible set
    before = eligible_tasks(g)
    for t in sorted(before):
        after = eligible_tasks(build_task_graph([m], completed={t}))
        assert before - {t} <= after


# --- template missions --------------------------------------------------------------

def _satisfies_template(order, kinds):
    """Completion order against: eventually (all deliveries, then eventually all surveys),
    and no capture before the surveys hold."""
    done = set()
    surv_ids = {t for t, k in kinds.items() if k == "surv"}
    del_ids = {t for t, k in kinds.items() if k == "del"}
    del_time = surv_time = None
    for i, t in enumerate(order):
        if kinds[t] == "cap" and surv_ids and not surv_ids <= done:
            return False
        done.add(t)
        if del_time is None and del_ids <= done:
            del_time = i
        if surv_time is None and surv_ids <= done:
            surv_time = i
    if not del_ids:
        return True
    if not surv_ids:
        return del_time is not None
    return del_time is not None and surv_time is not None and del_time < surv_time


def _induced_order(kinds):
    ids = sorted(kinds)
    ok = [o for o in itertools.permutations(ids) if _satisfies_template(o, kinds)]
    always = {(a, b) for a in ids for b in ids if a != b
              and all(o.index(a) < o.index(b) for o in ok)}
    # transitive reduction
    return {(a, b) for a, b in always
            if not any((a, c) in always and (c, b) in always for c in ids)}


@pytest.mark.parametrize("counts", [(1, 1, 1), (1, 1, 0), (2, 1, 0)])
def test_template_poset_matches_trace_enumeration(counts):
    nd, ns, nc = counts
    ids = iter(range(1, 10))
    dels = [task(next(ids)) for _ in range(nd)]
    survs = [task(next(ids)) for _ in range(ns)]
    caps = [task(next(ids)) for _ in range(nc)]
    m = expand_template_mission(1, 0.0, dels, survs, caps)
    kinds = {**{t.id: "del" for t in dels}, **{t.id: "surv" for t in survs}, **{t.id: "cap" for t in caps}}
    g = build_task_graph([m])
    assert set(g.precedence_edges) == _induced_order(kinds)


def test_template_frozen_edges():
    m = expand_template_mission(1, 0.0, [task(1)], [task(2)], [task(3)])
    assert m.precedence == {(1, 2), (2, 3)}
    m = expand_template_mission(1, 0.0, [task(1), task(2)], [task(3)])
    assert m.precedence == {(1, 3), (2, 3)}


def test_template_needs_tasks():
    with pytest.raises(MalformedMission):
        expand_template_mission(1, 0.0)


def test_mission_json_round_trip():
    m = expand_template_mission(4, 12.5, [task(1, 2)], [task(2, 1, "perceive")], [task(3, 2, "grasp")],
                                concurrence=())
    d = mission_to_dict(m)
    assert mission_to_dict(mission_from_dict(d)) == d


def test_subtask_outside_region_rejected():
    d = mission_to_dict(Mission(1, 0.0, (task(1),)))
    d["tasks"][0]["subtasks"][0]["location"] = [9.0, 9.0]
    with pytest.raises(MalformedMission):
        mission_from_dict(d)


@settings(max_examples=50)
@given(st.floats(-5, 10), st.floats(-5, 10), st.floats(0, 3))
def test_rect_clamp_stays_inside(x, y, margin):
    r = Rect(0, 0, 4, 3)
    assert r.contains(r.clamp((x, y), margin))
