"""Signal-level multi-object tracking with a network of MIMO radars."""
from .config import DEFAULT_CONFIG, ModelConfig
from .evaluation import OspaConfig, monte_carlo, ospa, simulate_run
from .scenario import (RcsModel, Scene, make_crossing_scene, make_empty_scene, make_handover_scene,
                       make_parallel_scene)
from .signal import RadarNode, Snapshot, steering_vector
from .tracker import StepResult, VMPTracker
from .updates import SmootherMode

__version__ = "0.1.0"

__all__ = ["DEFAULT_CONFIG", "ModelConfig", "OspaConfig", "monte_carlo", "ospa", "simulate_run",
           "RcsModel", "Scene", "make_crossing_scene", "make_empty_scene", "make_handover_scene",
           "make_parallel_scene", "RadarNode", "Snapshot", "steering_vector", "StepResult",
           "VMPTracker", "SmootherMode"]
