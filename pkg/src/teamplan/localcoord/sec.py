"""Search-and-execute coordination for tasks whose subtasks are found by exploring.

The task region is covered by an occupancy grid. Cells within sensor range of
any agent become visited; undetected subtasks in visited cells become
detected. Frontier cells (unvisited, 4-adjacent to a visited cell) are
grouped into connected clusters and each cluster yields one waypoint. Idle
agents are sent to detected collaborative subtasks first, the rest explore.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from ..model import DurationParams, Point, Rect, Subtask, distance
from .routing import Job, Member, RoutingSolution, plan_static_known

_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class ExplorationGrid:
    region: Rect
    cell_size: float
    visited: np.ndarray

    @classmethod
    def create(cls, region: Rect, cell_size: float = 1.0) -> "ExplorationGrid":
        nx = max(1, math.ceil(round(region.width / cell_size, 9)))
        ny = max(1, math.ceil(round(region.height / cell_size, 9)))
        return cls(region, cell_size, np.zeros((ny, nx), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.visited.shape

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.shape
        xs = self.region.x0 + (np.arange(nx) + 0.5) * (self.region.width / nx)
        ys = self.region.y0 + (np.arange(ny) + 0.5) * (self.region.height / ny)
        return np.meshgrid(xs, ys)

    def center(self, iy: int, ix: int) -> Point:
        ny, nx = self.shape
        return (self.region.x0 + (ix + 0.5) * (self.region.width / nx),
                self.region.y0 + (iy + 0.5) * (self.region.height / ny))

    def cell_of(self, p: Point) -> tuple[int, int]:
        ny, nx = self.shape
        ix = int((p[0] - self.region.x0) / (self.region.width / nx))
        iy = int((p[1] - self.region.y0) / (self.region.height / ny))
        return min(max(iy, 0), ny - 1), min(max(ix, 0), nx - 1)

    def sense(self, position: Point, radius: float) -> int:
        """Mark the cell under ``position`` and every cell whose centre lies within
        ``radius``; returns how many were new."""
        cx, cy = self.centers()
        hit = (cx - position[0]) ** 2 + (cy - position[1]) ** 2 <= radius * radius + 1e-12
        if self.region.contains(position):
            hit[self.cell_of(position)] = True
        new = int(np.count_nonzero(hit & ~self.visited))
        self.visited |= hit
        return new

    def frontier(self) -> np.ndarray:
        grown = ndimage.binary_dilation(self.visited, structure=_FOUR)
        return grown & ~self.visited

    @property
    def complete(self) -> bool:
        return bool(self.visited.all())

    def coverage(self) -> float:
        return float(self.visited.mean())


def frontier_waypoints(grid: ExplorationGrid) -> list[Point]:
    """One waypoint per 4-connected frontier cluster, largest clusters first.

    The waypoint is the cluster cell closest to the cluster's mean cell
    position. With nothing visited yet the region centre is returned.
    """
    if not grid.visited.any():
        return [] if grid.complete else [grid.region.centroid]
    labels, count = ndimage.label(grid.frontier(), structure=_FOUR)
    out = []
    for lab in range(1, count + 1):
        cells = np.argwhere(labels == lab)
        mean = cells.mean(axis=0)
        d = ((cells - mean) ** 2).sum(axis=1)
        iy, ix = cells[int(np.argmin(d))]
        out.append((len(cells), int(iy), int(ix)))
    out.sort(key=lambda c: (-c[0], c[1], c[2]))
    return [grid.center(iy, ix) for _, iy, ix in out]


@dataclass
class SubtaskPool:
    exploration: list[Point] = field(default_factory=list)
    collaborative: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class ExploreUpdate:
    newly_visited: int
    detected: tuple[int, ...]
    pool: SubtaskPool


def explore_step(grid: ExplorationGrid, positions: Iterable[Point], sensor_radius: float,
                 subtasks: Iterable[Subtask]) -> ExploreUpdate:
    """Sense from every position, then report newly detected subtasks.

    Subtask states are not modified; the caller marks the returned ids as
    detected. The pool lists frontier waypoints and every detected subtask
    not yet done or in progress.
    """
    new = 0
    for p in positions:
        new += grid.sense(p, sensor_radius)
    detected = []
    open_ids = []
    for s in sorted(subtasks, key=lambda s: s.id):
        if s.state == "undetected" and grid.visited[grid.cell_of(s.location)]:
            detected.append(s.id)
            open_ids.append(s.id)
        elif s.state == "detected":
            open_ids.append(s.id)
    return ExploreUpdate(new, tuple(detected), SubtaskPool(frontier_waypoints(grid), open_ids))


@dataclass(frozen=True)
class SecRound:
    routing: RoutingSolution | None
    explore: dict[int, Point]
    complete: bool = False


def plan_sec_round(idle: Sequence[Member], pool: SubtaskPool, subtasks: Mapping[int, Subtask],
                   params: DurationParams, batch_size: int = 4,
                   exact_limit: int = 16) -> SecRound:
    """Send idle agents to detected subtasks, then the remainder to waypoints.

    Up to ``batch_size`` detected subtasks that the idle agents can staff are
    routed with minimum teams, nearest first. Agents left without a subtask
    are matched to waypoints by travel time.
    """
    idle = sorted(idle, key=lambda m: m.id)
    if not pool.collaborative and not pool.exploration:
        return SecRound(None, {}, complete=True)
    if idle:
        cx = sum(m.position[0] for m in idle) / len(idle)
        cy = sum(m.position[1] for m in idle) / len(idle)
    else:
        cx = cy = 0.0
    jobs = []
    for sid in pool.collaborative:
        s = subtasks[sid]
        if sum(s.action in m.capabilities for m in idle) >= s.n:
            jobs.append(Job(s.id, s.n, s.action, s.location))
    jobs.sort(key=lambda j: (distance((cx, cy), j.location), j.id))
    jobs = jobs[:batch_size]
    routing = None
    busy: set[int] = set()
    if jobs:
        routing = plan_static_known(idle, jobs, params, exact_limit=exact_limit, overprovision=False)
        busy = {a for team in routing.teams.values() for a in team}
    explore: dict[int, Point] = {}
    free = [m for m in idle if m.id not in busy]
    waypoints = list(pool.exploration)
    if waypoints:
        # Spread agents over distinct waypoints first, reusing them only when needed.
        pairs = sorted((distance(m.position, w) / m.speed, m.id, k) for m in free for k, w in enumerate(waypoints))
        taken_w: set[int] = set()
        for d, aid, k in pairs:
            if aid in explore or k in taken_w:
                continue
            explore[aid] = waypoints[k]
            taken_w.add(k)
        for m in free:
            if m.id not in explore:
                k = min(range(len(waypoints)), key=lambda k: (distance(m.position, waypoints[k]), k))
                explore[m.id] = waypoints[k]
    return SecRound(routing, explore, complete=False)
