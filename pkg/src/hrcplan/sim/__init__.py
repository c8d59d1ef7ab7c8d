"""Closed-loop scenario simulation."""

from .engine import (
    Modules,
    ReplanEvent,
    SimState,
    TrialMetrics,
    TrialResult,
    build_modules,
    nominal_schedule,
    run_trial,
    tick,
    true_clearance,
)
from .scenario import Scenario, make_scenario, scripted_pose

__all__ = [
    "Modules", "ReplanEvent", "Scenario", "SimState", "TrialMetrics", "TrialResult", "build_modules",
    "make_scenario", "nominal_schedule", "run_trial", "scripted_pose", "tick", "true_clearance",
]
