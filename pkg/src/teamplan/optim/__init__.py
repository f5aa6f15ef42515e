from .bnb import BnBProblem, BnBResult, NoFeasibleSolution, enumerate_complete, solve_bnb
from .bottleneck import (BottleneckProblem, BottleneckSolution, InfeasibleAssignment,
                         max_matching, solve_bottleneck)

__all__ = [
    "BnBProblem", "BnBResult", "BottleneckProblem", "BottleneckSolution", "InfeasibleAssignment",
    "NoFeasibleSolution", "enumerate_complete", "max_matching", "solve_bnb", "solve_bottleneck",
]
