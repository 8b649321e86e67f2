"""Predictive safety filters with a stability constraint."""

from .costs import StabilityCost, matching_objective_G, stability_cost_J, stage_cost, terminal_cost
from .filter import FilterConfig, FilterState, FilterStepResult, Mode, StabilityFilter
from .model import BoxConstraints, LinearDynamics, ReferenceTrajectory, ReferenceWindow
from .sim import RolloutLog, Scenario, run_closed_loop, verify_rollout
from .terminal import TerminalIngredients, certify_assumption5, solve_riccati, synthesize

__all__ = [
    "BoxConstraints",
    "FilterConfig",
    "FilterState",
    "FilterStepResult",
    "LinearDynamics",
    "Mode",
    "ReferenceTrajectory",
    "ReferenceWindow",
    "RolloutLog",
    "Scenario",
    "StabilityCost",
    "StabilityFilter",
    "TerminalIngredients",
    "certify_assumption5",
    "matching_objective_G",
    "run_closed_loop",
    "solve_riccati",
    "stability_cost_J",
    "stage_cost",
    "synthesize",
    "terminal_cost",
    "verify_rollout",
]
