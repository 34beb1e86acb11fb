"""LLM-guided Q-learning for capacitated vehicle routing with time windows
and path breaks."""
from .instance import AugmentConfig, Instance, Node, augment, parse_vrp, synthetic_instance
from .milp import CostWeights, GENERALIZED, RoutePlan, Verdict, evaluate, exact_solve, gap

__all__ = [
    "AugmentConfig", "Instance", "Node", "augment", "parse_vrp", "synthetic_instance",
    "CostWeights", "GENERALIZED", "RoutePlan", "Verdict", "evaluate", "exact_solve", "gap",
]
__version__ = "0.1.0"
