"""Sampling-based exposure-maximization controller (MPPI) and the exposure
phase runner that drives the true world with the executed controls."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .connectivity import sample_keypoint_grid
from .errors import PlanningError, SolverStalledError
from .exposure import (
    GOAL_FRAME_M,
    GOAL_FRAME_N,
    ExposureObjective,
    deformation_expanding_loss,
    deformation_gradient,
)
from .geometry import Camera, eval_barycentric_batch, raycast_pixel, raycast_pixels
from .sim import GraspControl, SimModel, attach_grasp, clone, step_batch
from .tracking import ikt_track_synthetic
from .world import WorldState


@dataclass
class MPPIParams:
    samples: int = 128
    horizon: int = 8
    noise_std: float = 1.5e-3      # m, per axis
    temperature: float = 0.5
    steps: int = 35                # executed control steps
    retraction_step: float = 5e-4  # m per executed step (shared budget)
    lift: float = 0.5              # expert-mode camera-ward component
    strain_stop: float = 1.3       # expert stops pulling once this taut

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("MPPI needs at least 2 samples")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class ControlPlan:
    controls: np.ndarray         # (T, 3) executed gripper positions
    horizon: int
    per_step_cost: list = field(default_factory=list)
    feasible: bool = True
    fallback_steps: int = 0


def mppi_update(nominal, cost_fn, noise_std, temperature, samples, rng):
    """One MPPI nominal update.

    cost_fn maps sampled control sequences (S, h, d) to (costs, feasible)
    arrays. Sample 0 carries zero noise so the nominal is always in the
    pool. Returns (new_nominal, info dict); infeasible-only rounds freeze
    the nominal (info["all_infeasible"] = True).
    """
    noise = rng.normal(size=(samples,) + nominal.shape) * noise_std
    noise[0] = 0.0
    controls = nominal[None] + noise
    costs, feasible = cost_fn(controls)
    info = {"all_infeasible": False, "n_feasible": int(feasible.sum())}
    if not feasible.any():
        info["all_infeasible"] = True
        return nominal, info
    c = costs[feasible]
    w = np.exp(-(c - c.min()) / max(temperature, 1e-12))
    w /= w.sum()
    delta = np.einsum("s,s...->...", w, noise[feasible])
    info["best_cost"] = float(c.min())
    info["expected_cost"] = float((w * c).sum())
    return nominal + delta, info


def _project_batch(camera: Camera, pts):
    """(uv, z) for (..., 3) world points, no exceptions."""
    r = camera.model_view[:3, :3]
    t = camera.model_view[:3, 3]
    cam = pts @ r.T + t
    z = cam[..., 2]
    safe = np.where(z > 0, z, 1.0)
    uv = np.stack([camera.fx * cam[..., 0] / safe + camera.cx,
                   camera.fy * cam[..., 1] / safe + camera.cy], axis=-1)
    return uv, z


def _clamp_steps(controls, start, max_step):
    """Clamp consecutive displacements (including from the start anchor)."""
    out = np.array(controls, dtype=np.float64)
    prev = np.broadcast_to(start, out[:, 0].shape).copy()
    for t in range(out.shape[1]):
        d = out[:, t] - prev
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.minimum(1.0, max_step / np.maximum(n, 1e-12))
        out[:, t] = prev + d * scale
        prev = out[:, t]
    return out


class ExposureRollout:
    """Shared rollout machinery: anchors, losses, and batched stepping."""

    def __init__(self, model: SimModel, grasp: GraspControl,
                 objective: ExposureObjective, camera: Camera):
        self.model = model
        self.grasp = grasp
        self.objective = objective
        self.camera = camera
        faces, bary, _ = raycast_pixels(camera, model.mesh, model.positions,
                                        objective.pixels)
        self.anchor_ok = faces >= 0
        self.faces = np.where(self.anchor_ok, faces, 0)
        self.bary = bary
        tri = model.mesh.faces[self.faces]
        self.tri = tri
        p0_world = eval_barycentric_batch(model.mesh.faces, model.positions,
                                          self.faces, bary)
        self.p0_px, _ = _project_batch(camera, p0_world)
        if objective.grid_shape is None:
            raise ValueError("exposure objective needs a grid_shape for the "
                             "deformation loss")

    def step_cost(self, pos):
        """Per-sample cost and visibility violation for states (S, N, 3)."""
        obj = self.objective
        pts = eval_barycentric_batch(self.model.mesh.faces, pos,
                                     self.faces, self.bary)   # (S, P, 3)
        uv, z = _project_batch(self.camera, pts)
        inside = ((uv[..., 0] >= 0) & (uv[..., 0] < self.camera.width)
                  & (uv[..., 1] >= 0) & (uv[..., 1] < self.camera.height))
        violated = (self.anchor_ok[None] & ((z <= 0) | ~inside)).any(axis=-1)

        # Camera-facing: anchored face normals against the view direction.
        a = pos[:, self.tri[:, 1]] - pos[:, self.tri[:, 0]]
        b = pos[:, self.tri[:, 2]] - pos[:, self.tri[:, 0]]
        n = np.cross(a, b)
        n /= np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)
        # Orient outward (toward the camera side at rest).
        n *= self.normal_sign[None, :, None]
        l_cam = np.einsum("spi,i->s", n * self.anchor_ok[None, :, None],
                          obj.camera_forward)

        disp = uv - self.p0_px[None]
        f, okf = deformation_gradient(obj.pixels, disp, GOAL_FRAME_N,
                                      GOAL_FRAME_M, obj.grid_shape,
                                      valid=self.anchor_ok)
        l_def = deformation_expanding_loss(f, GOAL_FRAME_N, GOAL_FRAME_M,
                                           w_n=obj.w_n, w_s=obj.w_s, mask=okf)
        return obj.lam_c * l_cam + obj.lam_d * l_def, violated

    @property
    def normal_sign(self):
        if not hasattr(self, "_normal_sign"):
            a = self.model.positions[self.tri[:, 1]] - self.model.positions[self.tri[:, 0]]
            b = self.model.positions[self.tri[:, 2]] - self.model.positions[self.tri[:, 0]]
            n = np.cross(a, b)
            toward = -self.objective.camera_forward
            s = np.sign(np.einsum("pi,i->p", n, toward))
            self._normal_sign = np.where(s == 0, 1.0, s)
        return self._normal_sign

    def rollout_costs(self, pos0, vel0, controls):
        """Total cost over the horizon per sampled control sequence."""
        S, h, _ = controls.shape
        pos = np.repeat(pos0[None], S, axis=0)
        vel = np.repeat(vel0[None], S, axis=0)
        costs = np.zeros(S)
        infeasible = np.zeros(S, dtype=bool)
        for t in range(h):
            pos, vel = step_batch(self.model, pos, vel, self.grasp,
                                  targets=controls[:, t])
            c, bad = self.step_cost(pos)
            costs += c
            infeasible |= bad
        return costs, ~infeasible


def mppi_solve(model: SimModel, grasp: GraspControl,
               objective: ExposureObjective, camera: Camera,
               params: MPPIParams, seed=0, on_execute=None) -> ControlPlan:
    """Receding-horizon MPPI over cloned XPBD rollouts.

    Samples Gaussian perturbations of the nominal control sequence, rolls
    each out on the internal model with model-based tracking of the
    objective pixels, discards visibility violators, exponentially weights
    the survivors, executes the first nominal action, and repeats.
    ``on_execute(u)`` is called with each executed gripper position.
    """
    rng = np.random.default_rng(seed)
    model = clone(model)
    roll = ExposureRollout(model, grasp, objective, camera)
    pos = model.positions.copy()
    vel = model.velocities.copy()
    anchor = pos[grasp.particles].mean(axis=0) - grasp.offsets.mean(axis=0)
    nominal = np.repeat(anchor[None], params.horizon, axis=0)
    max_step = params.retraction_step

    executed = []
    cost_trace = []
    fallback = 0
    consecutive_fallback = 0
    for _ in range(params.steps):
        def cost_fn(controls, _pos=pos, _vel=vel, _anchor=anchor):
            clamped = _clamp_steps(controls, _anchor, max_step)
            return roll.rollout_costs(_pos, _vel, clamped)

        nominal, info = mppi_update(nominal, cost_fn, params.noise_std,
                                    params.temperature, params.samples, rng)
        if info["all_infeasible"]:
            fallback += 1
            consecutive_fallback += 1
            if consecutive_fallback >= 3:
                raise SolverStalledError(
                    "no feasible MPPI samples for 3 consecutive steps")
        else:
            consecutive_fallback = 0
        nominal = _clamp_steps(nominal[None], anchor, max_step)[0]
        u = nominal[0]
        mdl_pos, mdl_vel = step_batch(model, pos[None], vel[None],
                                      replace_target(grasp, u))
        pos, vel = mdl_pos[0], mdl_vel[0]
        anchor = pos[grasp.particles].mean(axis=0) - grasp.offsets.mean(axis=0)
        c, bad = roll.step_cost(pos[None])
        cost_trace.append(float(c[0]))
        executed.append(u.copy())
        if on_execute is not None:
            on_execute(u)
        nominal = np.concatenate([nominal[1:], nominal[-1:]])

    plan = ControlPlan(controls=np.asarray(executed), horizon=params.horizon,
                       per_step_cost=cost_trace, feasible=fallback == 0,
                       fallback_steps=fallback)
    return plan


def replace_target(grasp: GraspControl, target) -> GraspControl:
    return grasp.with_target(target)


# ---------------------------------------------------------------------------
# Exposure phase: controller + true world in lockstep
# ---------------------------------------------------------------------------

@dataclass
class ExposureResult:
    world: WorldState
    frames: list                  # [(mesh, positions)] true-world snapshots
    plan: ControlPlan
    grid: object
    tracked: object               # IKT result over the frames
    visible_area: list            # [(step, pixel count)]
    grasp_point: np.ndarray
    went_taut: bool = False       # expert retraction arrested by tension


def _surface_direction(world, camera, pixel_from, pixel_to):
    """3D unit direction on the tissue surface matching an image direction."""
    from .geometry import raycast_pixel_near
    h0, _ = raycast_pixel_near(camera, world.mesh, world.sim.positions,
                               pixel_from, radius=10, step=5)
    h1, _ = raycast_pixel_near(camera, world.mesh, world.sim.positions,
                               pixel_to, radius=10, step=5)
    if h0 is None or h1 is None:
        raise PlanningError("direction probe missed the tissue surface")
    from .geometry import eval_barycentric
    a = eval_barycentric(world.mesh, world.sim.positions, h0)
    b = eval_barycentric(world.mesh, world.sim.positions, h1)
    d = b - a
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise PlanningError("degenerate surface direction probe")
    return d / n


def visible_area_pixels(world: WorldState, camera: Camera, positions,
                        bbox) -> int:
    """Pixels in bbox whose nearest raycast hit is a cut-exposed face."""
    if len(world.cut_exposed_faces) == 0:
        return 0
    u0, v0, u1, v1 = bbox
    u0 = max(0, int(np.floor(u0)))
    v0 = max(0, int(np.floor(v0)))
    u1 = min(camera.width - 1, int(np.ceil(u1)))
    v1 = min(camera.height - 1, int(np.ceil(v1)))
    if u1 < u0 or v1 < v0:
        return 0
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=1)

    # Prune faces whose projection cannot overlap the bbox (also correct for
    # occluders: anything hitting a bbox pixel must project into the bbox).
    uv, ok = camera.project_with_validity(positions)
    f = world.mesh.faces
    fu = uv[f, 0]
    fv = uv[f, 1]
    fok = ok[f].all(axis=1)
    overlap = (fok & (fu.max(axis=1) >= u0) & (fu.min(axis=1) <= u1)
               & (fv.max(axis=1) >= v0) & (fv.min(axis=1) <= v1))
    subset = np.nonzero(overlap)[0]
    if len(subset) == 0:
        return 0
    face_idx, _, _ = raycast_pixels(camera, world.mesh, positions, pixels,
                                    face_subset=subset)
    exposed = np.zeros(world.mesh.n_faces, dtype=bool)
    exposed[world.cut_exposed_faces] = True
    hit = face_idx >= 0
    return int(exposed[face_idx[hit]].sum())


def run_exposure_phase(world: WorldState, camera: Camera, goal, grasp_px,
                       params: MPPIParams, mode="mppi", grid=None,
                       internal_model: SimModel | None = None, seed=0,
                       ikt_noise_std=1.0, visible_stride=1,
                       estimator_spacing=8.0, estimator_extent=24.0,
                       loss_weights=None) -> ExposureResult:
    """Run the exposure phase: grasp, retract (MPPI / naive-normal /
    scripted expert), record true-world frames, IKT-track the keypoint grid,
    and trace the visible-area pixel count of the cut-exposed region."""
    from .geometry import raycast_pixel_near
    hit, _ = raycast_pixel_near(camera, world.mesh, world.sim.positions,
                                grasp_px)
    if hit is None:
        raise PlanningError(f"grasp pixel {tuple(grasp_px)} misses the tissue")
    from .geometry import eval_barycentric
    grasp_point = eval_barycentric(world.mesh, world.sim.positions, hit)
    went_taut = False

    if grid is None:
        grid = sample_keypoint_grid(goal, camera, spacing=estimator_spacing,
                                    extent=estimator_extent)

    world_sim = clone(world.sim)
    world_sim.max_grasp_step = params.retraction_step
    world_grasp = attach_grasp(world_sim, grasp_point)
    frames = [(world.mesh, world_sim.positions.copy())]

    margin = estimator_extent + 16
    pts = goal.points.astype(float)
    bbox = (pts[:, 0].min() - margin, pts[:, 1].min() - margin,
            pts[:, 0].max() + margin, pts[:, 1].max() + margin)

    state = {"pos": world_sim.positions.copy(),
             "vel": world_sim.velocities.copy()}

    def world_step(u):
        p, v = step_batch(world_sim, state["pos"][None], state["vel"][None],
                          world_grasp.with_target(u))
        state["pos"], state["vel"] = p[0], v[0]
        frames.append((world.mesh, state["pos"].copy()))

    if mode == "mppi":
        model = clone(world.sim) if internal_model is None else clone(internal_model)
        model.max_grasp_step = params.retraction_step
        grasp = GraspControl(particles=world_grasp.particles,
                             target=grasp_point.copy(),
                             offsets=world_grasp.offsets.copy())
        weights = loss_weights or {}
        objective = ExposureObjective.from_grid(grid, goal, camera, **weights)
        plan = mppi_solve(model, grasp, objective, camera, params, seed=seed,
                          on_execute=world_step)
    elif mode in ("normal", "expert"):
        if mode == "normal":
            # The midpoint ray can fall into the slit the cut just opened;
            # the widened search lands on the nearest tissue instead.
            mid_hit, _ = raycast_pixel_near(camera, world.mesh,
                                            world.sim.positions,
                                            goal.midpoint)
            if mid_hit is None:
                raise PlanningError("goal midpoint misses the tissue")
            mid3d = eval_barycentric(world.mesh, world.sim.positions, mid_hit)
            d = grasp_point - mid3d
            direction = d / np.linalg.norm(d)
        else:
            # Probe the surface near the grasp, stepping away from the goal
            # along n_hat, so the pull peels the flap off the cut line.
            away = np.sign((np.asarray(grasp_px, float) - goal.midpoint)
                           @ goal.n_hat) or 1.0
            probe = np.asarray(grasp_px, float) + 8.0 * away * goal.n_hat
            try:
                surf = _surface_direction(world, camera, grasp_px, probe)
            except PlanningError:
                # Probe fell into the open slit; map the image-plane pull
                # direction through the camera orientation instead.
                rot = camera.model_view[:3, :3]
                px_dir = away * goal.n_hat
                surf = rot.T @ np.array([px_dir[0], px_dir[1], 0.0])
                surf /= np.linalg.norm(surf)
            up = -camera.forward
            direction = surf + params.lift * up
            direction /= np.linalg.norm(direction)
        tissue = ~world_sim.dist_virtual
        d_idx = world_sim.dist_idx[tissue]
        d_rest = world_sim.dist_rest[tissue]

        def taut():
            # A held-back flap goes taut mesh-wide; a freed flap translates
            # without strain, so the expert keeps pulling.
            ln = np.linalg.norm(state["pos"][d_idx[:, 0]]
                                - state["pos"][d_idx[:, 1]], axis=1)
            return float((ln / d_rest).max()) > params.strain_stop

        controls = []
        target = grasp_point.copy()
        for _ in range(params.steps):
            if mode == "expert" and taut():
                went_taut = True
                break
            target = target + direction * params.retraction_step
            controls.append(target.copy())
            world_step(target)
        plan = ControlPlan(controls=np.asarray(controls), horizon=0,
                           per_step_cost=[], feasible=True)
    else:
        raise ValueError(f"unknown exposure mode {mode!r}")

    tracked = ikt_track_synthetic(grid.keypoints, frames, camera,
                                  noise_std=ikt_noise_std, seed=seed)

    visible = []
    for k in range(0, len(frames), max(1, visible_stride)):
        visible.append((k, visible_area_pixels(world, camera, frames[k][1],
                                               bbox)))
    if visible[-1][0] != len(frames) - 1:
        visible.append((len(frames) - 1,
                        visible_area_pixels(world, camera, frames[-1][1], bbox)))

    new_world = replace(world, sim=replace(world_sim, positions=state["pos"],
                                           velocities=state["vel"]))
    return ExposureResult(world=new_world, frames=frames, plan=plan,
                          grid=grid, tracked=tracked, visible_area=visible,
                          grasp_point=grasp_point,
                          went_taut=went_taut)
