"""Min-max (bottleneck) assignment of rows to demand columns.

Rows are agents, columns are unit demands (one column per required agent of a
given action in a given subteam). Each row fills at most one column. The
primary objective is the largest selected cost; among bottleneck-optimal
solutions the total cost is minimised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


class InfeasibleAssignment(ValueError):
    """No assignment covers every column; ``blocking`` names a Hall violator."""

    def __init__(self, message: str, blocking: Sequence[Hashable] = ()):
        super().__init__(message)
        self.blocking = tuple(blocking)


@dataclass(frozen=True)
class BottleneckProblem:
    costs: np.ndarray
    eligible: np.ndarray
    row_labels: tuple = ()
    col_labels: tuple = ()

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float)
        if costs.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        elig = np.asarray(self.eligible, dtype=bool).reshape(costs.shape)
        if np.any(~np.isfinite(costs[elig])):
            raise ValueError("eligible cells must have finite cost")
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "eligible", elig)
        if not self.row_labels:
            object.__setattr__(self, "row_labels", tuple(range(costs.shape[0])))
        if not self.col_labels:
            object.__setattr__(self, "col_labels", tuple(range(costs.shape[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape


@dataclass(frozen=True)
class BottleneckSolution:
    pairs: tuple[tuple[int, int], ...]
    value: float
    total: float
    problem: BottleneckProblem = field(repr=False)

    @property
    def matched(self) -> int:
        return len(self.pairs)

    def labelled(self) -> list[tuple[Hashable, Hashable]]:
        return [(self.problem.row_labels[r], self.problem.col_labels[c]) for r, c in self.pairs]


def max_matching(allowed: np.ndarray) -> list[int]:
    """Maximum bipartite matching by augmenting paths.

    Returns ``row_of[col]`` (-1 when unmatched). Columns are processed in
    index order and rows tried in index order, so the result is deterministic.
    """
    n_rows, n_cols = allowed.shape
    adj = [np.flatnonzero(allowed[:, c]).tolist() for c in range(n_cols)]
    row_of = [-1] * n_cols
    col_of = [-1] * n_rows

    def augment(c: int, seen: list[bool]) -> bool:
        for r in adj[c]:
            if seen[r]:
                continue
            seen[r] = True
            if col_of[r] == -1 or augment(col_of[r], seen):
                col_of[r] = c
                row_of[c] = r
                return True
        return False

    for c in range(n_cols):
        augment(c, [False] * n_rows)
    return row_of


def _hall_violator(allowed: np.ndarray, row_of: list[int]) -> list[int]:
    """Columns reachable by alternating paths from unmatched columns."""
    n_rows, n_cols = allowed.shape
    col_of = {r: c for c, r in enumerate(row_of) if r >= 0}
    frontier = [c for c in range(n_cols) if row_of[c] == -1]
    seen_cols = set(frontier)
    seen_rows: set[int] = set()
    while frontier:
        c = frontier.pop()
        for r in np.flatnonzero(allowed[:, c]):
            r = int(r)
            if r in seen_rows:
                continue
            seen_rows.add(r)
            nxt = col_of.get(r)
            if nxt is not None and nxt not in seen_cols:
                seen_cols.add(nxt)
                frontier.append(nxt)
    return sorted(seen_cols)


def solve_bottleneck(problem: BottleneckProblem, allow_partial: bool = False) -> BottleneckSolution:
    """Exact bottleneck assignment via threshold search over distinct costs.

    With ``allow_partial`` the number of covered columns is maximised first and
    the bottleneck is optimised among maximum-cardinality assignments.
    """
    costs, elig = problem.costs, problem.eligible
    n_rows, n_cols = costs.shape
    if n_cols == 0:
        return BottleneckSolution((), 0.0, 0.0, problem)
    row_of = max_matching(elig)
    target = sum(r >= 0 for r in row_of)
    if target < n_cols and not allow_partial:
        blocking = [problem.col_labels[c] for c in _hall_violator(elig, row_of)]
        raise InfeasibleAssignment(
            f"only {target} of {n_cols} demands can be covered", blocking)
    if target == 0:
        return BottleneckSolution((), 0.0, 0.0, problem)

    thresholds = np.unique(costs[elig])
    lo, hi = 0, len(thresholds) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        size = sum(r >= 0 for r in max_matching(elig & (costs <= thresholds[mid])))
        if size >= target:
            hi = mid
        else:
            lo = mid + 1
    theta = float(thresholds[lo])

    allowed = elig & (costs <= theta)
    finite = costs[allowed]
    big = float(np.abs(finite).sum() + 1.0) * (n_cols + 1)
    work = np.where(allowed, costs, big)
    rows, cols = linear_sum_assignment(work)
    pairs = tuple(sorted((int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]))
    if len(pairs) != target:
        raise AssertionError("min-sum refinement lost cardinality")
    total = float(sum(costs[r, c] for r, c in pairs))
    return BottleneckSolution(pairs, theta, total, problem)
