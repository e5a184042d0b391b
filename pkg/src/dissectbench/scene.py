"""Scene construction: tissue mesh + camera + world + goal from config."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import (
    Camera,
    DissectionGoal,
    TriMesh,
    load_obj,
    make_grid_mesh,
    make_overhead_camera,
)
from .sim import build_sim
from .world import WorldState


@dataclass
class Scene:
    world: WorldState
    camera: Camera
    goal: DissectionGoal
    grasp_px: np.ndarray
    scale_mm_per_px: float
    pinned: np.ndarray


def _pin_indices(mode, rows, cols):
    if mode == "none":
        return np.zeros(0, dtype=np.int64)
    if mode == "borders_y":
        # Both border rows across the goal (static side + flap far edge).
        return np.concatenate([np.arange(cols),
                               np.arange((rows - 1) * cols, rows * cols)])
    if mode == "top":
        return np.arange((rows - 1) * cols, rows * cols)
    raise ConfigError([f"unknown pin mode {mode!r}"])


def _rest_plane(mesh, gravity):
    """Best-fit plane of the rest vertices, acting as the desk substrate.

    Normal points against gravity so the clamp keeps tissue above the desk.
    """
    v = mesh.vertices
    c = v.mean(axis=0)
    _, _, vt = np.linalg.svd(v - c, full_matrices=False)
    n = vt[2]
    g = np.asarray(gravity, dtype=np.float64)
    if np.linalg.norm(g) > 0 and n @ g > 0:
        n = -n
    return c, n


def build_scene(cfg) -> Scene:
    """World + camera + goal from a validated config tree."""
    sc = cfg["scene"]
    mesh_cfg = sc["mesh"]
    if mesh_cfg["kind"] == "grid":
        mesh = make_grid_mesh(mesh_cfg["rows"], mesh_cfg["cols"],
                              mesh_cfg["spacing"], mesh_cfg["slope_deg"])
        pinned = _pin_indices(sc["pin_mode"], mesh_cfg["rows"], mesh_cfg["cols"])
    else:
        mesh = load_obj(mesh_cfg["path"])
        pinned = np.zeros(0, dtype=np.int64)

    cam_cfg = sc["camera"]
    camera = make_overhead_camera(
        distance=cam_cfg["distance"], fx=cam_cfg["fx"], fy=cam_cfg["fy"],
        width=cam_cfg["width"], height=cam_cfg["height"],
        tilt_deg=cam_cfg["tilt_deg"])

    mat = cfg["material"]
    sim = build_sim(
        mesh,
        distance_compliance=mat["distance_compliance"],
        bending_compliance=mat["bending_compliance"],
        gravity=mat["gravity"], dt=mat["dt"], substeps=mat["substeps"],
        iterations=mat["iterations"], damping=mat["damping"],
        mass=mat["mass_per_particle"], pinned=pinned,
        floor=_rest_plane(mesh, mat["gravity"]))

    goal = DissectionGoal(np.asarray(sc["goal_points"], dtype=np.int64),
                          max_turn_deg=sc["goal_max_turn_deg"])
    return Scene(world=WorldState(mesh=mesh, sim=sim), camera=camera,
                 goal=goal, grasp_px=np.asarray(sc["grasp_px"], dtype=np.float64),
                 scale_mm_per_px=cfg["scale_mm_per_px"], pinned=pinned)
