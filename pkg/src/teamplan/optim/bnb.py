"""Depth-first branch-and-bound over finite decision trees."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence


class NoFeasibleSolution(RuntimeError):
    pass


@dataclass
class BnBProblem:
    """A finite search tree.

    ``branch`` yields the feasible children of a state, ``bound`` must never
    exceed the cost of any complete descendant, and ``cost`` scores complete
    states. An optional ``incumbent`` ``(cost, state)`` seeds pruning.
    """

    root: Any
    branch: Callable[[Any], Iterable[Any]]
    bound: Callable[[Any], float]
    is_complete: Callable[[Any], bool]
    cost: Callable[[Any], float]
    incumbent: tuple[float, Any] | None = None

    @classmethod
    def from_slots(cls, domains: Sequence[Sequence[Any]],
                   feasible: Callable[[tuple], bool] = lambda partial: True,
                   lower_bound: Callable[[tuple], float] | None = None,
                   cost: Callable[[tuple], float] | None = None) -> "BnBProblem":
        """Fill decision slot ``i`` from ``domains[i]`` in order.

        States are tuples of chosen options; ``feasible`` filters partial tuples.
        """
        depth = len(domains)
        if cost is None:
            raise ValueError("cost function required")
        lb = lower_bound or (lambda partial: -math.inf)

        def branch(state):
            if len(state) >= depth:
                return
            for opt in domains[len(state)]:
                child = state + (opt,)
                if feasible(child):
                    yield child

        return cls((), branch, lb, lambda s: len(s) == depth, cost)


@dataclass
class BnBResult:
    cost: float
    state: Any
    nodes: int


def solve_bnb(problem: BnBProblem, node_limit: int | None = None) -> BnBResult:
    """Exact minimisation; children are explored in increasing bound order."""
    best_cost, best_state = (problem.incumbent if problem.incumbent is not None
                             else (math.inf, None))
    nodes = 0
    stack = [problem.root]
    while stack:
        state = stack.pop()
        nodes += 1
        if node_limit is not None and nodes > node_limit:
            break
        if problem.is_complete(state):
            c = problem.cost(state)
            if c < best_cost:
                best_cost, best_state = c, state
            continue
        kids = []
        for child in problem.branch(state):
            b = problem.bound(child)
            if b < best_cost:
                kids.append((b, len(kids), child))
        # Stack is LIFO: push worst first so the most promising child is expanded next.
        kids.sort(key=lambda k: (k[0], k[1]), reverse=True)
        stack.extend(k[2] for k in kids)
    if best_state is None:
        raise NoFeasibleSolution("no complete state satisfies the constraints")
    return BnBResult(best_cost, best_state, nodes)


def enumerate_complete(problem: BnBProblem) -> Iterable[Any]:
    """Every complete state reachable from the root (no pruning)."""
    stack = [problem.root]
    while stack:
        state = stack.pop()
        if problem.is_complete(state):
            yield state
            continue
        stack.extend(problem.branch(state))
