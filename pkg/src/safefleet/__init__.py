"""safefleet: a deterministic multi-drone delivery simulator whose planner
proposals pass through a constraint-checked override layer, plus the
constrained actor-critic that learns alongside it."""

__version__ = "0.1.0"

from .actions import Action, Sector
from .energy import AircraftParams, BatteryModel, Soc
from .harness import ExperimentConfig, desk_preset, run_comparison, run_experiment
from .planner import FaultConfig, MockPlanner
from .safety import ConstraintConfig, filter_action
from .world import GridConfig, World

__all__ = [
    "Action",
    "AircraftParams",
    "BatteryModel",
    "ConstraintConfig",
    "ExperimentConfig",
    "FaultConfig",
    "GridConfig",
    "MockPlanner",
    "Sector",
    "Soc",
    "World",
    "desk_preset",
    "filter_action",
    "run_comparison",
    "run_experiment",
    "__version__",
]
