"""Scenario files: fleet, missions (explicit or generated) and every knob of a run."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .assign import PlannerConfig
from .model import (Agent, CollabTask, DurationParams, MalformedMission, Mission, Point, Rect,
                    Subtask, expand_template_mission, mission_from_dict, mission_to_dict)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AgentType:
    name: str
    capabilities: tuple[str, ...]
    count: int
    speed: float


@dataclass(frozen=True)
class FleetSpec:
    types: tuple[AgentType, ...]
    bases: tuple[Point, ...] = ((1.0, 1.0),)
    spacing: float = 0.6

    def build(self) -> list[Agent]:
        """Agents numbered by type order, spread on a small grid around the bases."""
        agents = []
        i = 0
        per_base: dict[int, int] = {}
        for t in self.types:
            for _ in range(t.count):
                b = i % len(self.bases)
                slot = per_base.get(b, 0)
                per_base[b] = slot + 1
                bx, by = self.bases[b]
                pos = (bx + (slot % 5) * self.spacing, by + (slot // 5) * self.spacing)
                agents.append(Agent(i, pos, t.speed, frozenset(t.capabilities)))
                i += 1
        return agents

    @property
    def size(self) -> int:
        return sum(t.count for t in self.types)


@dataclass(frozen=True)
class GeneratorSpec:
    """Random missions following the delivery, surveillance, capture template."""

    count: int = 2
    mu: float = 30.0
    sigma: float = 10.0
    first_release: float = 0.0
    delivery: int = 2
    surveillance: int = 1
    capture: int = 1
    concurrent_deliveries: bool = True
    delivery_subtasks: tuple[int, int] = (6, 9)
    surveillance_subtasks: tuple[int, int] = (6, 9)
    capture_targets: tuple[int, int] = (4, 7)
    delivery_size: float = 4.0
    search_size: float = 6.0
    max_n: int = 3
    d0: tuple[float, float] = (1.5, 3.0)
    n_sat: int = 4
    target_speed: float = 0.3


@dataclass(frozen=True)
class LocalConfig:
    batch_size: int = 4
    sensor_radius: float = 3.0
    cell_size: float = 1.0
    k_stab: int = 2
    max_coalition: int | None = None
    capture_radius: float = 1.0
    routing_exact_limit: int = 16
    dcf_period: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    alpha: float = 0.0
    seed: int = 0
    max_time: float = 2000.0
    trace_stride: int = 10
    check_invariants: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class Scenario:
    name: str
    workspace: Rect
    fleet: FleetSpec
    missions: tuple[dict, ...] = ()
    generator: GeneratorSpec | None = None
    planner: PlannerConfig = PlannerConfig()
    local: LocalConfig = LocalConfig()
    sim: SimConfig = SimConfig()
    inf_h_budget: int = 5_000_000

    def __post_init__(self):
        if self.planner.horizon < 1:
            raise ScenarioError("horizon must be at least 1")
        caps = {a for t in self.fleet.types for a in t.capabilities}
        for md in self.missions:
            for td in md.get("tasks", []):
                for sd in td.get("subtasks", []):
                    if sd["action"] not in caps:
                        raise ScenarioError(f"action {sd['action']!r} of task {td['id']} has no capable agent type")

    def build_missions(self, seed: int | None = None) -> list[Mission]:
        """Explicit missions, or generated ones when a generator is configured."""
        seed = self.sim.seed if seed is None else seed
        out = [mission_from_dict(m, self.workspace) for m in self.missions]
        if self.generator is not None:
            start = max((m.id for m in out), default=0) + 1
            out.extend(generate_missions(self.generator, self.workspace, seed, first_id=start))
        return sorted(out, key=lambda m: (m.release_time, m.id))

    def with_overrides(self, **paths: Any) -> "Scenario":
        """Copy with dotted-path fields replaced, e.g. ``{"sim.alpha": 0.1}``."""
        d = scenario_to_dict(self)
        for path, value in paths.items():
            node = d
            keys = path.split(".")
            for k in keys[:-1]:
                node = node[k]
            if keys[-1] not in node:
                raise ScenarioError(f"unknown scenario field {path!r}")
            node[keys[-1]] = value
        return scenario_from_dict(d)

    def digest(self) -> str:
        blob = json.dumps(scenario_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --- generation --------------------------------------------------------------

def _region(rng, workspace: Rect, size: float) -> Rect:
    w = min(size, workspace.width)
    h = min(size, workspace.height)
    x0 = round(float(rng.uniform(workspace.x0, workspace.x1 - w)), 2)
    y0 = round(float(rng.uniform(workspace.y0, workspace.y1 - h)), 2)
    return Rect(x0, y0, x0 + w, y0 + h)


def _point_in(rng, r: Rect, margin: float = 0.3) -> Point:
    return (round(float(rng.uniform(r.x0 + margin, r.x1 - margin)), 2),
            round(float(rng.uniform(r.y0 + margin, r.y1 - margin)), 2))


def _subtasks(rng, region: Rect, count: int, actions: tuple[str, ...], max_n: int,
              detected: bool, mobile: bool = False, speed: float = 0.0) -> list[Subtask]:
    out = []
    for i in range(count):
        out.append(Subtask(i, int(rng.integers(1, max_n + 1)), actions[int(rng.integers(len(actions)))],
                           _point_in(rng, region), mobile=mobile, speed=speed,
                           initially_detected=detected))
    return out


def generate_missions(gen: GeneratorSpec, workspace: Rect, seed: int, first_id: int = 1) -> list[Mission]:
    """Template missions with Gaussian inter-release gaps (clipped at zero)."""
    rng = np.random.default_rng([seed, 7919])
    missions = []
    t = gen.first_release
    for k in range(gen.count):
        mid = first_id + k
        if k > 0:
            t += max(0.0, float(rng.normal(gen.mu, gen.sigma)))
        base = mid * 100
        tid = iter(range(base + 1, base + 100))

        def duration():
            return DurationParams(round(float(rng.uniform(*gen.d0)), 2), gen.n_sat)

        def count(bounds):
            return int(rng.integers(bounds[0], bounds[1] + 1))

        deliveries = []
        for _ in range(gen.delivery):
            r = _region(rng, workspace, gen.delivery_size)
            deliveries.append(CollabTask(next(tid), r, _subtasks(
                rng, r, count(gen.delivery_subtasks), ("deliver", "perceive"), gen.max_n, True),
                duration(), "static_known"))
        surveys = []
        for _ in range(gen.surveillance):
            r = _region(rng, workspace, gen.search_size)
            surveys.append(CollabTask(next(tid), r, _subtasks(
                rng, r, count(gen.surveillance_subtasks), ("perceive",), min(2, gen.max_n), False),
                duration(), "static_unknown"))
        captures = []
        for _ in range(gen.capture):
            r = _region(rng, workspace, gen.search_size)
            captures.append(CollabTask(next(tid), r, _subtasks(
                rng, r, count(gen.capture_targets), ("grasp",), min(2, gen.max_n), True,
                mobile=True, speed=gen.target_speed), duration(), "dynamic_known"))
        conc = ()
        if gen.concurrent_deliveries and len(deliveries) >= 2:
            conc = ((deliveries[0].id, deliveries[1].id),)
        missions.append(expand_template_mission(mid, round(t, 3), deliveries, surveys, captures, conc))
    return missions


# --- JSON --------------------------------------------------------------------

def _dc_from(cls, d: Mapping | None, tuple_fields: tuple[str, ...] = ()):
    if d is None:
        return cls()
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ScenarioError(f"unknown {cls.__name__} fields: {sorted(extra)}")
    kw = dict(d)
    for k in tuple_fields:
        if k in kw and kw[k] is not None:
            kw[k] = tuple(kw[k])
    return cls(**kw)


def scenario_to_dict(s: Scenario) -> dict:
    fleet = {"types": [{"name": t.name, "capabilities": list(t.capabilities), "count": t.count,
                        "speed": t.speed} for t in s.fleet.types],
             "bases": [list(b) for b in s.fleet.bases], "spacing": s.fleet.spacing}
    gen = None
    if s.generator is not None:
        gen = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(s.generator).items()}
    return {
        "name": s.name,
        "workspace": s.workspace.as_list(),
        "fleet": fleet,
        "missions": copy.deepcopy(list(s.missions)),
        "generator": gen,
        "planner": asdict(s.planner),
        "local": asdict(s.local),
        "sim": asdict(s.sim),
        "inf_h_budget": s.inf_h_budget,
    }


def scenario_from_dict(d: Mapping) -> Scenario:
    try:
        ws = Rect(*map(float, d["workspace"]))
        fd = d["fleet"]
        types = tuple(AgentType(str(t["name"]), tuple(t["capabilities"]), int(t["count"]),
                                float(t["speed"])) for t in fd["types"])
        fleet = FleetSpec(types, tuple(tuple(map(float, b)) for b in fd.get("bases", [[1.0, 1.0]])),
                          float(fd.get("spacing", 0.6)))
        missions = tuple(copy.deepcopy(list(d.get("missions", []))))
        for m in missions:
            mission_from_dict(m, ws)  # validate early
        gen = d.get("generator")
        gen = _dc_from(GeneratorSpec, gen, ("delivery_subtasks", "surveillance_subtasks",
                                            "capture_targets", "d0")) if gen is not None else None
        return Scenario(str(d.get("name", "scenario")), ws, fleet, missions, gen,
                        _dc_from(PlannerConfig, d.get("planner")), _dc_from(LocalConfig, d.get("local")),
                        _dc_from(SimConfig, d.get("sim")), int(d.get("inf_h_budget", 5_000_000)))
    except MalformedMission as exc:
        raise ScenarioError(str(exc)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"bad scenario: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return scenario_from_dict(d)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def missions_as_dicts(missions) -> list[dict]:
    return [mission_to_dict(m) for m in missions]


__all__ = [
    "AgentType", "FleetSpec", "GeneratorSpec", "LocalConfig", "Scenario", "ScenarioError", "SimConfig",
    "generate_missions", "load_scenario", "missions_as_dicts", "save_scenario",
    "scenario_from_dict", "scenario_to_dict",
]
