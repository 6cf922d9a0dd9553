"""Adaptive averaging planner, group all-reduce and collaboration simulator."""
from .core import CollaborationSpec, PeerSpec, StrategyAssignment, validate
from .groups import build_plan, expected_iterations, optimal_group_size, run_plan
from .lp import LinearProgram, solve
from .netsim import ChurnTrace, TrainingConfig, compare_strategies, simulate_averaging, simulate_training
from .strategy import build_lp, solve_strategy

__all__ = [
    "ChurnTrace",
    "CollaborationSpec",
    "LinearProgram",
    "PeerSpec",
    "StrategyAssignment",
    "TrainingConfig",
    "build_lp",
    "build_plan",
    "compare_strategies",
    "expected_iterations",
    "optimal_group_size",
    "run_plan",
    "simulate_averaging",
    "simulate_training",
    "solve",
    "solve_strategy",
    "validate",
]
