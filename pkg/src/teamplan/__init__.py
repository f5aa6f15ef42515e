"""Receding-horizon subteam planning for missions released over time."""

from .assign import (Assignment, PlannerConfig, PrecedenceError, SubteamSlot, capacity_feasible,
                     evaluate_assignment, plan_round)
from .formation import FormationInfeasible, SubteamRoster, build_cost_matrix, form_subteams
from .model import (Agent, CollabTask, DurationParams, Mission, Rect, Subtask, TaskGraph,
                    build_task_graph, eta)
from .scenario import Scenario, ScenarioError, load_scenario
from .sim import MetricsLog, response_from_trace, run_missions, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Agent", "Assignment", "CollabTask", "DurationParams", "FormationInfeasible", "MetricsLog", "Mission",
    "PlannerConfig", "PrecedenceError", "Rect", "Scenario", "ScenarioError", "Subtask", "SubteamRoster",
    "SubteamSlot", "TaskGraph", "build_cost_matrix", "build_task_graph", "capacity_feasible", "eta",
    "evaluate_assignment", "form_subteams", "load_scenario", "plan_round", "response_from_trace",
    "run_missions", "run_scenario",
]
