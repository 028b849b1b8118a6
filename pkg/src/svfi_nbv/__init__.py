"""Chance-constrained vector-field inequalities in a whole-body QP controller,
driven by a coverage-first next-best-view planner, on a simulated mobile
manipulator inspecting pipes in a voxelised cube."""
from .config import ExperimentConfig, load_config
from .controller import Controller, ControllerParams
from .kinematics import RobotModel, TaskVector, default_robot_model
from .planner import Viewpoint, score_candidates, select_next
from .sim import RunLog, run_chance_validation, run_episode
from .svfi import ChanceParams, PlaneBelief, surrogate_row
from .worldmap import VoxelGrid

__version__ = "0.1.0"

__all__ = [
    "ChanceParams",
    "Controller",
    "ControllerParams",
    "ExperimentConfig",
    "PlaneBelief",
    "RobotModel",
    "RunLog",
    "TaskVector",
    "Viewpoint",
    "VoxelGrid",
    "default_robot_model",
    "load_config",
    "run_chance_validation",
    "run_episode",
    "score_candidates",
    "select_next",
    "surrogate_row",
]
