"""Kinodynamic speed-profile planning and windowed execution of MAPF plans."""

from ktpg.kinodynamics import KinematicState, RobotModel, plan_speed_profile
from ktpg.plan_model import GridMap, MapfPlan, TimedPath, parse_map, parse_plan, parse_scenario
from ktpg.tpg import Tpg, build_tpg
from ktpg.core import UncertaintyModel, run_ktpg
from ktpg.window import WindowConfig, run_execution_loop

__all__ = [
    "GridMap",
    "KinematicState",
    "MapfPlan",
    "RobotModel",
    "TimedPath",
    "Tpg",
    "UncertaintyModel",
    "WindowConfig",
    "build_tpg",
    "parse_map",
    "parse_plan",
    "parse_scenario",
    "plan_speed_profile",
    "run_execution_loop",
    "run_ktpg",
]

__version__ = "0.1.0"
