"""Density-based multi-robot wildfire suppression sandbox.

The package splits into field-level numerics (grid, fire, density), control
synthesis (tasks, solver, control), coordination support (knowledge,
planner), and the closed-loop harness (sim, cli, export).
"""

from .grid import GridSpec, ScalarField, VectorField
from .fire import FireParams, FireState, RegionThresholds, fire_area, fire_step, ignite
from .density import DensityParams, RobotDensity, WaterState, rasterize_density, target_density
from .solver import ConvexProgram, LinRow, QuadRow, Solution, solve_cone
from .control import (
    CollisionSettings,
    ControlCommand,
    ControllerGains,
    ControlLimits,
    RobotView,
    centralized_step,
    decentralized_step,
)
from .planner import ChargePath, ChargerRegion, path_advance, rrt_plan
from .knowledge import LocalMap, broadcast_unsafe, neighbor_graph
from .sim import MonteCarloResult, RunResult, SimConfig, load_config, monte_carlo, run

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "FireParams",
    "FireState",
    "RegionThresholds",
    "fire_area",
    "fire_step",
    "ignite",
    "DensityParams",
    "RobotDensity",
    "WaterState",
    "rasterize_density",
    "target_density",
    "ConvexProgram",
    "LinRow",
    "QuadRow",
    "Solution",
    "solve_cone",
    "CollisionSettings",
    "ControlCommand",
    "ControllerGains",
    "ControlLimits",
    "RobotView",
    "centralized_step",
    "decentralized_step",
    "ChargePath",
    "ChargerRegion",
    "path_advance",
    "rrt_plan",
    "LocalMap",
    "broadcast_unsafe",
    "neighbor_graph",
    "SimConfig",
    "load_config",
    "run",
    "monte_carlo",
    "RunResult",
    "MonteCarloResult",
    "__version__",
]
