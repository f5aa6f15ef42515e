from .dcf import (CoalitionScheme, DCFInfeasible, Target, dcf_round, improving_deviation,
                  is_k_stable, on_subtask_complete, scheme_cost)
from .routing import (ActionPlan, Job, Member, RoutingInfeasible, RoutingSolution,
                      plan_static_known)
from .sec import (ExplorationGrid, ExploreUpdate, SecRound, SubtaskPool, explore_step,
                  frontier_waypoints, plan_sec_round)

__all__ = [
    "ActionPlan", "CoalitionScheme", "DCFInfeasible", "ExplorationGrid", "ExploreUpdate", "Job",
    "Member", "RoutingInfeasible", "RoutingSolution", "SecRound", "SubtaskPool", "Target",
    "dcf_round", "explore_step", "frontier_waypoints", "improving_deviation", "is_k_stable",
    "on_subtask_complete", "plan_sec_round", "plan_static_known", "scheme_cost",
]
