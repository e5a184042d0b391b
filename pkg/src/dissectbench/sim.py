"""XPBD thin-shell simulator.

Particles live on the tissue mesh vertices; distance constraints sit on
mesh edges and dihedral bending constraints on adjacent face pairs. The
solver is a compliant Jacobi projection with per-particle averaging, which
keeps every operation vectorizable across a batch axis so rollout fan-outs
(one state per control sample) step in a single set of numpy calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MeshError, SimulationDivergedError
from .geometry import Camera, TriMesh, segments_intersect_batch

DEFAULT_DT = 1.0 / 60.0
DEFAULT_SUBSTEPS = 4
DEFAULT_ITERATIONS = 10
DEFAULT_DISTANCE_COMPLIANCE = 1e-6
DEFAULT_BENDING_COMPLIANCE = 1e-4
DEFAULT_DAMPING = 0.99           # velocity retention per full step
DEFAULT_MAX_GRASP_STEP = 1e-3    # m per step


@dataclass
class GraspControl:
    """Hard positional boundary condition on a few attached particles."""

    particles: np.ndarray      # (k,) int
    target: np.ndarray         # (3,) commanded grasp-point position
    offsets: np.ndarray        # (k, 3) particle offsets from the grasp point
    active: bool = True

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=np.int64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        if self.active and len(self.particles) == 0:
            raise ValueError("active grasp with no attached particles")

    def with_target(self, target):
        return replace(self, target=np.asarray(target, dtype=np.float64))


@dataclass
class SimModel:
    """Value-type XPBD state: topology, particle state, constraints, params."""

    mesh: TriMesh
    positions: np.ndarray        # (N, 3)
    velocities: np.ndarray       # (N, 3)
    inverse_mass: np.ndarray     # (N,), 0 = pinned
    dist_idx: np.ndarray         # (C, 2)
    dist_rest: np.ndarray        # (C,)
    dist_compliance: np.ndarray  # (C,)
    bend_idx: np.ndarray         # (B, 4): shared edge (i, j), wings (k, l)
    bend_rest: np.ndarray        # (B,) rest dihedral angle
    bend_compliance: np.ndarray  # (B,)
    # Virtual constraints re-anchor a severed edge onto one side's own
    # vertex copies; they keep boundary triangles in shape but are not
    # tissue connectivity, so metrics skip them.
    dist_virtual: np.ndarray | None = None
    # Substrate plane (point, unit normal): particles cannot pass below it.
    floor_point: np.ndarray | None = None
    floor_normal: np.ndarray | None = None
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    dt: float = DEFAULT_DT
    substeps: int = DEFAULT_SUBSTEPS
    iterations: int = DEFAULT_ITERATIONS
    damping: float = DEFAULT_DAMPING
    max_grasp_step: float = DEFAULT_MAX_GRASP_STEP

    def __post_init__(self):
        for name in ("positions", "velocities", "gravity"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.inverse_mass = np.asarray(self.inverse_mass, dtype=np.float64)
        self.dist_idx = np.asarray(self.dist_idx, dtype=np.int64).reshape(-1, 2)
        self.dist_rest = np.asarray(self.dist_rest, dtype=np.float64)
        self.dist_compliance = np.asarray(self.dist_compliance, dtype=np.float64)
        self.bend_idx = np.asarray(self.bend_idx, dtype=np.int64).reshape(-1, 4)
        self.bend_rest = np.asarray(self.bend_rest, dtype=np.float64)
        self.bend_compliance = np.asarray(self.bend_compliance, dtype=np.float64)
        if self.dist_virtual is None:
            self.dist_virtual = np.zeros(len(self.dist_idx), dtype=bool)
        else:
            self.dist_virtual = np.asarray(self.dist_virtual, dtype=bool)
        if len(self.dist_virtual) != len(self.dist_idx):
            raise ValueError("dist_virtual mask length mismatch")
        if (self.floor_point is None) != (self.floor_normal is None):
            raise ValueError("floor needs both a point and a normal")
        if self.floor_normal is not None:
            self.floor_point = np.asarray(self.floor_point, dtype=np.float64)
            n = np.asarray(self.floor_normal, dtype=np.float64)
            self.floor_normal = n / np.linalg.norm(n)
        if (self.dist_rest <= 0).any():
            raise ValueError("distance constraints need positive rest lengths")
        if (self.dist_compliance < 0).any() or (self.bend_compliance < 0).any():
            raise ValueError("compliance must be non-negative")
        n = len(self.positions)
        if len(self.dist_idx) and self.dist_idx.max() >= n:
            raise ValueError("distance constraint references missing particle")
        if len(self.bend_idx) and self.bend_idx.max() >= n:
            raise ValueError("bending constraint references missing particle")

    @property
    def n_particles(self):
        return len(self.positions)


def clone(model: SimModel) -> SimModel:
    """Deep value copy; stepping the clone never touches the original."""
    return replace(
        model,
        positions=model.positions.copy(),
        velocities=model.velocities.copy(),
        inverse_mass=model.inverse_mass.copy(),
        dist_idx=model.dist_idx.copy(),
        dist_rest=model.dist_rest.copy(),
        dist_compliance=model.dist_compliance.copy(),
        bend_idx=model.bend_idx.copy(),
        bend_rest=model.bend_rest.copy(),
        bend_compliance=model.bend_compliance.copy(),
        dist_virtual=model.dist_virtual.copy(),
        gravity=model.gravity.copy(),
    )


def dihedral_angles(positions, bend_idx):
    """Angle between face normals across each shared edge, in [0, pi]."""
    p = np.asarray(positions)
    p1, p2, p3, p4 = (p[..., bend_idx[:, k], :] for k in range(4))
    e = p2 - p1
    n1 = np.cross(e, p3 - p1)
    n2 = np.cross(e, p4 - p1)
    n1 /= np.maximum(np.linalg.norm(n1, axis=-1, keepdims=True), 1e-12)
    n2 /= np.maximum(np.linalg.norm(n2, axis=-1, keepdims=True), 1e-12)
    d = np.clip(np.einsum("...i,...i->...", n1, n2), -1.0, 1.0)
    return np.arccos(d)


def build_sim(mesh: TriMesh, positions=None, *,
              distance_compliance=DEFAULT_DISTANCE_COMPLIANCE,
              bending_compliance=DEFAULT_BENDING_COMPLIANCE,
              gravity=(0.0, 0.0, -9.81), dt=DEFAULT_DT,
              substeps=DEFAULT_SUBSTEPS, iterations=DEFAULT_ITERATIONS,
              damping=DEFAULT_DAMPING, max_grasp_step=DEFAULT_MAX_GRASP_STEP,
              mass=None, pinned=(), floor=None):
    """SimModel with one distance constraint per mesh edge at its current
    length and one bending constraint per adjacent face pair at its current
    dihedral angle.
    """
    if mesh.n_faces == 0:
        raise MeshError("cannot build a simulation from an empty mesh")
    pos = mesh.vertices.copy() if positions is None else \
        np.asarray(positions, dtype=np.float64).copy()
    n = len(pos)
    if mass is None:
        inv_mass = np.ones(n)
    else:
        m = np.broadcast_to(np.asarray(mass, dtype=np.float64), (n,)).copy()
        inv_mass = np.where(m > 0, 1.0 / np.maximum(m, 1e-30), 0.0)
    pinned = np.asarray(list(pinned), dtype=np.int64)
    if len(pinned):
        inv_mass[pinned] = 0.0

    dist_idx = mesh.edges.copy()
    dist_rest = np.linalg.norm(pos[dist_idx[:, 0]] - pos[dist_idx[:, 1]], axis=1)

    # Bending quad per adjacent face pair: shared edge + the two wing vertices.
    bend = []
    for (fa, fb), (i, j) in zip(mesh.face_adjacency, mesh.adjacency_edges):
        wing_a = [v for v in mesh.faces[fa] if v != i and v != j][0]
        wing_b = [v for v in mesh.faces[fb] if v != i and v != j][0]
        bend.append((i, j, wing_a, wing_b))
    bend_idx = np.asarray(bend, dtype=np.int64).reshape(-1, 4)
    bend_rest = dihedral_angles(pos, bend_idx) if len(bend_idx) else np.zeros(0)

    return SimModel(
        mesh=mesh, positions=pos, velocities=np.zeros((n, 3)),
        inverse_mass=inv_mass,
        dist_idx=dist_idx, dist_rest=dist_rest,
        dist_compliance=np.full(len(dist_idx), float(distance_compliance)),
        bend_idx=bend_idx, bend_rest=bend_rest,
        bend_compliance=np.full(len(bend_idx), float(bending_compliance)),
        gravity=np.asarray(gravity, dtype=np.float64), dt=dt,
        substeps=substeps, iterations=iterations, damping=damping,
        max_grasp_step=max_grasp_step,
        floor_point=None if floor is None else floor[0],
        floor_normal=None if floor is None else floor[1])


def attach_grasp(model: SimModel, grasp_point, k=3) -> GraspControl:
    """Grasp the k nearest particles to a 3D point; offsets keep their
    relative pose while the commanded target moves."""
    gp = np.asarray(grasp_point, dtype=np.float64)
    d = np.linalg.norm(model.positions - gp, axis=1)
    order = np.argsort(d, kind="stable")[:k]
    particles = np.sort(order)
    return GraspControl(particles=particles, target=gp,
                        offsets=model.positions[particles] - gp)


# ---------------------------------------------------------------------------
# Stepping (batched core; single-model step is batch of one)
# ---------------------------------------------------------------------------

def _count_scatter(n, dist_idx, bend_idx):
    """Per-particle constraint counts for Jacobi averaging."""
    counts = np.zeros(n)
    np.add.at(counts, dist_idx.ravel(), 1.0)
    if len(bend_idx):
        np.add.at(counts, bend_idx.ravel(), 1.0)
    return np.maximum(counts, 1.0)


def _scatter(delta, idx, vals):
    """delta[s, idx[c]] += vals[s, c] via bincount (fast for batched states)."""
    S, n, _ = delta.shape
    flat = (np.arange(S)[:, None] * n + idx[None, :]).ravel()
    for d in range(3):
        delta[..., d] += np.bincount(
            flat, weights=vals[..., d].ravel(), minlength=S * n).reshape(S, n)


def _project_distance(pos, winv, dist_idx, dist_rest, alpha_t, lam, delta):
    i, j = dist_idx[:, 0], dist_idx[:, 1]
    d = pos[:, i] - pos[:, j]                        # (S, C, 3)
    length = np.linalg.norm(d, axis=-1)
    nrm = d / np.maximum(length, 1e-12)[..., None]
    c = length - dist_rest
    wi, wj = winv[i], winv[j]
    denom = wi + wj + alpha_t
    dlam = (-c - alpha_t * lam) / np.maximum(denom, 1e-30)
    lam += dlam
    corr = dlam[..., None] * nrm
    _scatter(delta, i, wi[:, None] * corr)
    _scatter(delta, j, -wj[:, None] * corr)


def _project_bending(pos, winv, bend_idx, bend_rest, alpha_t, lam, delta):
    i1, i2, i3, i4 = (bend_idx[:, k] for k in range(4))
    p1 = pos[:, i1]
    p2 = pos[:, i2] - p1
    p3 = pos[:, i3] - p1
    p4 = pos[:, i4] - p1
    c23 = np.cross(p2, p3)
    c24 = np.cross(p2, p4)
    l23 = np.maximum(np.linalg.norm(c23, axis=-1), 1e-12)
    l24 = np.maximum(np.linalg.norm(c24, axis=-1), 1e-12)
    n1 = c23 / l23[..., None]
    n2 = c24 / l24[..., None]
    d = np.clip(np.einsum("...i,...i->...", n1, n2), -1.0, 1.0)
    angle = np.arccos(d)
    c = angle - bend_rest

    # Gradients of d w.r.t. the four points (Mueller et al. bending).
    q3 = (np.cross(p2, n2) + np.cross(n1, p2) * d[..., None]) / l23[..., None]
    q4 = (np.cross(p2, n1) + np.cross(n2, p2) * d[..., None]) / l24[..., None]
    q2 = -(np.cross(p3, n2) + np.cross(n1, p3) * d[..., None]) / l23[..., None] \
         - (np.cross(p4, n1) + np.cross(n2, p4) * d[..., None]) / l24[..., None]
    q1 = -q2 - q3 - q4

    w1, w2, w3, w4 = winv[i1], winv[i2], winv[i3], winv[i4]
    denom = (w1 * np.einsum("...i,...i->...", q1, q1)
             + w2 * np.einsum("...i,...i->...", q2, q2)
             + w3 * np.einsum("...i,...i->...", q3, q3)
             + w4 * np.einsum("...i,...i->...", q4, q4))
    sin_term = np.sqrt(np.maximum(1.0 - d * d, 1e-12))
    dlam = (-sin_term * c - alpha_t * lam) / np.maximum(denom + alpha_t, 1e-12)
    lam += dlam
    _scatter(delta, i1, (w1 * dlam)[..., None] * q1)
    _scatter(delta, i2, (w2 * dlam)[..., None] * q2)
    _scatter(delta, i3, (w3 * dlam)[..., None] * q3)
    _scatter(delta, i4, (w4 * dlam)[..., None] * q4)


def step_batch(model: SimModel, positions, velocities, grasp=None, targets=None):
    """Advance a batch of states by one full step of the same model.

    positions, velocities: (S, N, 3). ``grasp`` supplies the attached
    particles and offsets; ``targets`` (S, 3) overrides grasp.target with a
    per-sample commanded grasp point. Returns new (positions, velocities).
    """
    pos = np.array(positions, dtype=np.float64)
    vel = np.array(velocities, dtype=np.float64)
    if pos.ndim == 2:
        pos = pos[None]
        vel = vel[None]
    S, n, _ = pos.shape
    winv = model.inverse_mass
    free = winv > 0
    dt_s = model.dt / model.substeps
    sub_damp = model.damping ** (1.0 / model.substeps)
    counts = _count_scatter(n, model.dist_idx, model.bend_idx)

    if grasp is not None and grasp.active:
        gp = grasp.particles
        if targets is None:
            targets = np.atleast_2d(np.asarray(grasp.target, dtype=np.float64))
        else:
            targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if targets.shape[0] == 1 and S > 1:
            targets = np.repeat(targets, S, axis=0)
        # Rate-limit the commanded point against the current grasp anchor.
        anchor = pos[:, gp].mean(axis=1) - grasp.offsets.mean(axis=0)
        move = targets - anchor
        dist = np.linalg.norm(move, axis=1, keepdims=True)
        scale = np.minimum(1.0, model.max_grasp_step / np.maximum(dist, 1e-12))
        end_anchor = anchor + move * scale
        winv_eff = winv.copy()
        winv_eff[gp] = 0.0
    else:
        gp = None
        winv_eff = winv

    alpha_dist = model.dist_compliance / dt_s ** 2
    alpha_bend = model.bend_compliance / dt_s ** 2

    for s in range(model.substeps):
        vel[:, free] += model.gravity * dt_s
        prev = pos.copy()
        pos = pos + vel * dt_s
        pos[:, ~free] = prev[:, ~free]
        if gp is not None:
            frac = (s + 1) / model.substeps
            tgt = anchor + (end_anchor - anchor) * frac
            pos[:, gp] = tgt[:, None, :] + grasp.offsets[None]

        lam_d = np.zeros((S, len(model.dist_idx)))
        lam_b = np.zeros((S, len(model.bend_idx)))
        for _ in range(model.iterations):
            delta = np.zeros_like(pos)
            _project_distance(pos, winv_eff, model.dist_idx, model.dist_rest,
                              alpha_dist, lam_d, delta)
            if len(model.bend_idx):
                _project_bending(pos, winv_eff, model.bend_idx, model.bend_rest,
                                 alpha_bend, lam_b, delta)
            pos += delta / counts[:, None]

        if model.floor_normal is not None:
            d = (pos - model.floor_point) @ model.floor_normal
            pos = pos - model.floor_normal * np.minimum(d, 0.0)[..., None]

        vel = (pos - prev) / dt_s * sub_damp
        vel[:, ~free] = 0.0
        if gp is not None:
            vel[:, gp] = 0.0

    if not np.isfinite(pos).all():
        raise SimulationDivergedError("NaN/inf in particle positions")
    return pos, vel


def step(model: SimModel, grasp: GraspControl | None = None) -> SimModel:
    """One XPBD step; returns a new SimModel, input untouched."""
    pos, vel = step_batch(model, model.positions[None], model.velocities[None],
                          grasp)
    return replace(model, positions=pos[0], velocities=vel[0])


# ---------------------------------------------------------------------------
# Constraint surgery
# ---------------------------------------------------------------------------

def remove_constraints_crossing(model: SimModel, cut_segments, camera: Camera):
    """Drop distance constraints whose projected pixel segment crosses any of
    the given pixel cut segments, plus bending constraints whose shared edge
    was dropped. Returns a new model."""
    cut = np.asarray(cut_segments, dtype=np.float64).reshape(-1, 2, 2)
    if len(cut) == 0 or len(model.dist_idx) == 0:
        return clone(model)
    uv, ok = camera.project_with_validity(model.positions)
    seg = np.stack([uv[model.dist_idx[:, 0]], uv[model.dist_idx[:, 1]]], axis=1)
    both_ok = ok[model.dist_idx[:, 0]] & ok[model.dist_idx[:, 1]]
    crossing = segments_intersect_batch(seg, cut).any(axis=1) & both_ok
    keep = ~crossing

    removed = {tuple(sorted(e)) for e in model.dist_idx[crossing].tolist()}
    bend_keep = np.ones(len(model.bend_idx), dtype=bool)
    for b, (i, j, _, _) in enumerate(model.bend_idx):
        if tuple(sorted((int(i), int(j)))) in removed:
            bend_keep[b] = False

    return replace(
        clone(model),
        dist_idx=model.dist_idx[keep].copy(),
        dist_rest=model.dist_rest[keep].copy(),
        dist_compliance=model.dist_compliance[keep].copy(),
        dist_virtual=model.dist_virtual[keep].copy(),
        bend_idx=model.bend_idx[bend_keep].copy(),
        bend_rest=model.bend_rest[bend_keep].copy(),
        bend_compliance=model.bend_compliance[bend_keep].copy())
