"""Coalition formation for capturing moving targets.

Each free agent joins at most one coalition, one coalition per target.
A coalition serves its target when it has at least ``n`` members; its cost is
the slowest member's intercept time plus the capture duration for that team
size. Schemes are compared lexicographically: fewest unserved targets first,
then the vector of coalition costs sorted from largest to smallest (so the
largest cost is minimised first).

A scheme is K-serial stable when no group of at most K agents can change
their choices (including leaving to idle) and obtain a strictly better
scheme. :func:`dcf_round` reaches such a scheme by deterministic
first-improvement deviations, which terminate because every accepted move
strictly decreases the comparison key.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..model import DurationParams, Point, distance, eta
from .routing import Member

CoalitionScheme = dict[int, frozenset[int]]


class DCFInfeasible(RuntimeError):
    def __init__(self, message: str, targets: Sequence[int] = ()):
        super().__init__(message)
        self.targets = tuple(targets)


@dataclass(frozen=True)
class Target:
    id: int
    position: Point
    n: int
    action: str


def _coalition_cost(members: Sequence[Member], target: Target, params: DurationParams) -> float:
    reach = max(distance(m.position, target.position) / m.speed for m in members)
    return reach + eta(target.n, target.action, len(members), params)


def scheme_cost(scheme: Mapping[int, frozenset[int]], members: Sequence[Member],
                targets: Sequence[Target], params: DurationParams) -> tuple:
    """Comparison key ``(unserved, sorted coalition costs, largest first)``."""
    by_id = {m.id: m for m in members}
    unserved = 0
    costs = []
    for t in targets:
        group = scheme.get(t.id, frozenset())
        if len(group) < t.n:
            unserved += 1
        else:
            costs.append(_coalition_cost([by_id[i] for i in sorted(group)], t, params))
    return (unserved, tuple(sorted(costs, reverse=True)))


def _options(member: Member, targets: Sequence[Target]) -> list[int | None]:
    return [None] + [t.id for t in targets if t.action in member.capabilities]


def improving_deviation(scheme: Mapping[int, frozenset[int]], members: Sequence[Member],
                        targets: Sequence[Target], params: DurationParams, k_stab: int = 2,
                        max_coalition: int | None = None):
    """First group deviation of size at most ``k_stab`` that strictly improves the scheme.

    Returns ``(group, new_choices, new_scheme)`` or ``None`` when the scheme is stable.
    """
    for group, picks, new, _ in _deviations(scheme, members, targets, params, k_stab, max_coalition):
        return group, picks, new
    return None


def _deviations(scheme, members, targets, params, k_stab, max_coalition, start=0):
    members = sorted(members, key=lambda m: m.id)
    targets = sorted(targets, key=lambda t: t.id)
    by_id = {m.id: m for m in members}
    by_t = {t.id: t for t in targets}
    choice = {m.id: None for m in members}
    for t, group in scheme.items():
        for a in group:
            if a in choice:
                choice[a] = t
    groups_now = {t.id: frozenset(a for a, c in choice.items() if c == t.id) for t in targets}
    cache: dict[tuple[int, frozenset], float | None] = {}

    def cost(tid: int, group: frozenset) -> float | None:
        key = (tid, group)
        if key not in cache:
            t = by_t[tid]
            cache[key] = (None if len(group) < t.n
                          else _coalition_cost([by_id[i] for i in sorted(group)], t, params))
        return cache[key]

    current = {tid: cost(tid, g) for tid, g in groups_now.items()}

    def key_of(costs: Mapping[int, float | None]) -> tuple:
        served = [c for c in costs.values() if c is not None]
        return (len(costs) - len(served), tuple(sorted(served, reverse=True)))

    base = key_of(current)
    opts = {m.id: _options(m, targets) for m in members}
    ids = [m.id for m in members]
    groups = [g for size in range(1, k_stab + 1) for g in itertools.combinations(ids, size)]
    if not groups:
        return
    n = len(groups)
    for step in range(n):
        idx = (start + step) % n
        group = groups[idx]
        for picks in itertools.product(*(opts[a] for a in group)):
            if all(choice[a] == p for a, p in zip(group, picks)):
                continue
            touched = {choice[a] for a in group} | set(picks)
            touched.discard(None)
            moved = set(group)
            new_groups = {}
            for tid in touched:
                g = {a for a in groups_now[tid] if a not in moved}
                g.update(a for a, p in zip(group, picks) if p == tid)
                new_groups[tid] = frozenset(g)
            if max_coalition is not None and any(len(g) > max_coalition for g in new_groups.values()):
                continue
            trial = dict(current)
            for tid, g in new_groups.items():
                trial[tid] = cost(tid, g)
            if key_of(trial) < base:
                out = dict(groups_now)
                out.update(new_groups)
                yield group, dict(zip(group, picks)), out, idx


def check_feasible(members: Sequence[Member], targets: Sequence[Target]) -> None:
    bad = [t.id for t in targets if sum(t.action in m.capabilities for m in members) < t.n]
    if bad:
        raise DCFInfeasible(f"targets {bad} need more capable agents than the subteam has", bad)


def initial_scheme(members: Sequence[Member], targets: Sequence[Target],
                   params: DurationParams) -> CoalitionScheme:
    """Greedy seed: targets by id take their nearest unassigned capable agents."""
    free = {m.id: m for m in members}
    out: dict[int, set[int]] = {}
    for t in sorted(targets, key=lambda t: t.id):
        cands = sorted((distance(m.position, t.position) / m.speed, m.id)
                       for m in free.values() if t.action in m.capabilities)
        if len(cands) >= t.n:
            chosen = [i for _, i in cands[:t.n]]
            out[t.id] = set(chosen)
            for i in chosen:
                del free[i]
    return {t.id: frozenset(out.get(t.id, ())) for t in targets}


def dcf_round(members: Sequence[Member], targets: Sequence[Target], params: DurationParams,
              scheme: Mapping[int, frozenset[int]] | None = None, k_stab: int = 2,
              max_coalition: int | None = None, max_moves: int = 10_000) -> CoalitionScheme:
    """Improve ``scheme`` (or a greedy seed) until it is ``k_stab``-serial stable.

    Members of the current scheme that are no longer listed are dropped;
    targets no longer listed lose their coalition.
    """
    check_feasible(members, targets)
    ids = {m.id for m in members}
    tids = {t.id for t in targets}
    if scheme is None:
        current = initial_scheme(members, targets, params)
    else:
        current = {t: frozenset(a for a in scheme.get(t, ()) if a in ids) for t in sorted(tids)}
    start = 0
    for _ in range(max_moves):
        dev = next(_deviations(current, members, targets, params, k_stab, max_coalition, start), None)
        if dev is None:
            break
        _, _, current, start = dev
    return current


def on_subtask_complete(members: Sequence[Member], targets: Sequence[Target], params: DurationParams,
                        scheme: Mapping[int, frozenset[int]], completed: int,
                        k_stab: int = 2, max_coalition: int | None = None) -> tuple[CoalitionScheme, bool]:
    """Release the coalition of ``completed`` and re-stabilise over the rest.

    Returns the new scheme and whether the task has no targets left.
    """
    rest = [t for t in targets if t.id != completed]
    if not rest:
        return {}, True
    pruned = {t: g for t, g in scheme.items() if t != completed}
    return dcf_round(members, rest, params, pruned, k_stab, max_coalition), False


def is_k_stable(scheme: Mapping[int, frozenset[int]], members: Sequence[Member],
                targets: Sequence[Target], params: DurationParams, k_stab: int = 2,
                max_coalition: int | None = None) -> bool:
    return improving_deviation(scheme, members, targets, params, k_stab, max_coalition) is None
