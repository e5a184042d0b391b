"""Desk-scale simulated bench for feedback-enabled autonomous tissue
dissection: XPBD thin-shell world, keypoint connectivity estimation,
exposure-maximizing retraction control, and greedy recovery planning."""

__version__ = "0.1.0"

from .config import default_config, load_config, save_config, validate_config
from .geometry import Camera, DissectionGoal, TriMesh
from .pipeline import EpisodeLog, EpisodeRunner, run_feedback_loop
from .scene import Scene, build_scene
from .world import WorldState, cut_world

__all__ = [
    "Camera", "DissectionGoal", "TriMesh", "Scene", "WorldState",
    "EpisodeLog", "EpisodeRunner", "build_scene", "cut_world",
    "default_config", "load_config", "save_config", "validate_config",
    "run_feedback_loop", "__version__",
]
