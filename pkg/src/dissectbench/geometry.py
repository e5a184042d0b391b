"""Triangular surface mesh, pinhole camera, raycasting and 2D segment geometry.

All world quantities are in meters; image quantities are in pixels. Pixel
rays pass through the integer pixel coordinate directly (no half-pixel
offset), so project(raycast(p)) returns p exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateFaceError,
    DegenerateGoalError,
    MeshError,
    StaleEmbeddingError,
)

MIN_FACE_AREA = 1e-12  # m^2
RAY_EPS = 1e-9


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------

@dataclass
class TriMesh:
    """Triangular mesh: rest vertex positions plus face topology.

    Edges and face adjacency are derived from the faces on construction.
    Deformed states are passed to operations as separate position arrays
    of the same length as ``vertices``.
    """

    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray     # (F, 3) int
    edges: np.ndarray = field(init=False)            # (E, 2) sorted pairs
    face_adjacency: np.ndarray = field(init=False)   # (A, 2) face pairs
    adjacency_edges: np.ndarray = field(init=False)  # (A, 2) shared edge per pair

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self._validate()
        self.edges, self.face_adjacency, self.adjacency_edges = build_topology(self.faces)

    def _validate(self):
        v, f = self.vertices, self.faces
        if len(f) == 0 or len(v) == 0:
            raise MeshError("empty mesh")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError("face index out of range")
        same = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if same.any():
            raise MeshError(f"faces with repeated vertices: {np.nonzero(same)[0].tolist()}")
        areas = face_areas(f, v)
        bad = areas < MIN_FACE_AREA
        if bad.any():
            raise DegenerateFaceError(f"near-zero-area faces: {np.nonzero(bad)[0].tolist()}")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)


def build_topology(faces):
    """Unique undirected edge set and the face pairs sharing each edge."""
    f = np.asarray(faces)
    raw = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    raw = np.sort(raw, axis=1)
    owner = np.tile(np.arange(len(f)), 3)
    edges, inverse = np.unique(raw, axis=0, return_inverse=True)

    pairs = []
    shared = []
    order = np.argsort(inverse, kind="stable")
    inv_sorted = inverse[order]
    owner_sorted = owner[order]
    starts = np.searchsorted(inv_sorted, np.arange(len(edges)))
    ends = np.append(starts[1:], len(inv_sorted))
    for e, (s, t) in enumerate(zip(starts, ends)):
        if t - s == 2:
            a, b = sorted(owner_sorted[s:t])
            pairs.append((a, b))
            shared.append(edges[e])
        elif t - s > 2:
            raise MeshError(f"non-manifold edge {edges[e].tolist()}")
    adj = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    adj_edges = np.asarray(shared, dtype=np.int64).reshape(-1, 2)
    return edges, adj, adj_edges


def face_areas(faces, positions):
    p = np.asarray(positions)
    a = p[faces[:, 1]] - p[faces[:, 0]]
    b = p[faces[:, 2]] - p[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def face_normals(faces, positions):
    """Area-weighted face normals, normalized. Orientation follows winding."""
    p = np.asarray(positions)
    a = p[faces[:, 1]] - p[faces[:, 0]]
    b = p[faces[:, 2]] - p[faces[:, 0]]
    n = np.cross(a, b)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return n / norms


def face_components(mesh: TriMesh, adjacency=None) -> np.ndarray:
    """Connected-component label per face via flood fill over face adjacency."""
    adj = mesh.face_adjacency if adjacency is None else adjacency
    n = mesh.n_faces
    neighbors = [[] for _ in range(n)]
    for a, b in adj:
        neighbors[a].append(b)
        neighbors[b].append(a)
    labels = np.full(n, -1, dtype=np.int64)
    comp = 0
    for seed in range(n):
        if labels[seed] >= 0:
            continue
        stack = [seed]
        labels[seed] = comp
        while stack:
            f = stack.pop()
            for g in neighbors[f]:
                if labels[g] < 0:
                    labels[g] = comp
                    stack.append(g)
        comp += 1
    return labels


def make_grid_mesh(rows, cols, spacing, slope_deg=0.0):
    """Regular grid of (rows x cols) vertices in the x-y plane, centered at
    the origin, optionally rotated about the x axis by ``slope_deg``.

    Row r, column c maps to vertex index r * cols + c; +y is the row axis.
    """
    if rows < 2 or cols < 2:
        raise MeshError("grid needs at least 2x2 vertices")
    ys, xs = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    v = np.zeros((rows * cols, 3))
    v[:, 0] = (xs.ravel() - (cols - 1) / 2) * spacing
    v[:, 1] = (ys.ravel() - (rows - 1) / 2) * spacing
    if slope_deg:
        a = np.deg2rad(slope_deg)
        rot = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
        v = v @ rot.T
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            i = r * cols + c
            faces.append((i, i + 1, i + cols))
            faces.append((i + 1, i + cols + 1, i + cols))
    return TriMesh(v, np.asarray(faces))


def load_obj(path):
    vertices, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"non-triangular face in {path}: {line.strip()}")
                faces.append(idx)
    return TriMesh(np.asarray(vertices), np.asarray(faces))


def save_obj(path, mesh: TriMesh, positions=None):
    pos = mesh.vertices if positions is None else np.asarray(positions)
    with open(path, "w") as fh:
        for p in pos:
            fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    model_view: np.ndarray  # (4, 4)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.model_view = np.asarray(self.model_view, dtype=np.float64).reshape(4, 4)
        rot = self.model_view[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ValueError("model_view rotation block is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        r = self.model_view[:3, :3]
        t = self.model_view[:3, 3]
        return -r.T @ t

    @property
    def forward(self) -> np.ndarray:
        """Unit viewing direction (camera +z) in world coordinates."""
        return self.model_view[:3, :3].T @ np.array([0.0, 0.0, 1.0])

    def world_to_cam(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return p @ self.model_view[:3, :3].T + self.model_view[:3, 3]

    def project(self, points):
        """Pinhole projection of world point(s) to real-valued pixels."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        cam = self.world_to_cam(pts)
        z = cam[:, 2]
        if (z <= 0).any():
            raise BehindCameraError(f"{int((z <= 0).sum())} point(s) at non-positive depth")
        uv = np.stack([self.fx * cam[:, 0] / z + self.cx,
                       self.fy * cam[:, 1] / z + self.cy], axis=1)
        return uv[0] if single else uv

    def project_with_validity(self, points):
        """Projection that flags (instead of raising on) behind-camera points."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cam = pts @ self.model_view[:3, :3].T + self.model_view[:3, 3]
        z = cam[:, 2]
        ok = z > 0
        zz = np.where(ok, z, 1.0)
        uv = np.stack([self.fx * cam[:, 0] / zz + self.cx,
                       self.fy * cam[:, 1] / zz + self.cy], axis=1)
        return uv, ok

    def pixel_ray(self, pixel):
        """World-space (origin, unit direction) of the ray through a pixel."""
        u, v = float(pixel[0]), float(pixel[1])
        d_cam = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        d = self.model_view[:3, :3].T @ d_cam
        return self.center, d / np.linalg.norm(d)

    def pixel_rays(self, pixels):
        px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d_cam = np.stack([(px[:, 0] - self.cx) / self.fx,
                          (px[:, 1] - self.cy) / self.fy,
                          np.ones(len(px))], axis=1)
        d = d_cam @ self.model_view[:3, :3]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.center, d

    def in_frame(self, pixels):
        """Half-open containment test: 0 <= u < W and 0 <= v < H."""
        px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        return ((px[:, 0] >= 0) & (px[:, 0] < self.width)
                & (px[:, 1] >= 0) & (px[:, 1] < self.height))


def make_overhead_camera(distance, fx=2500.0, fy=2500.0, width=640, height=480,
                         tilt_deg=0.0):
    """Camera looking at the origin along -z from ``distance`` above, with an
    optional tilt about the world x axis (camera orbits, keeps aiming at the
    origin). Image +v maps to world -y at zero tilt.
    """
    a = np.deg2rad(tilt_deg)
    # Camera axes in world coordinates (rows of the rotation block).
    right = np.array([1.0, 0.0, 0.0])
    fwd = np.array([0.0, np.sin(a), -np.cos(a)])
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    center = -fwd * distance
    mv = np.eye(4)
    mv[:3, :3] = rot
    mv[:3, 3] = -rot @ center
    return Camera(mv, fx=fx, fy=fy, cx=width / 2, cy=height / 2,
                  width=width, height=height)


# ---------------------------------------------------------------------------
# Raycasting and barycentric embedding
# ---------------------------------------------------------------------------

@dataclass
class SurfaceHit:
    """A ray/mesh intersection, reusable as a barycentric surface anchor."""

    face_index: int
    barycentric: np.ndarray  # (3,), sums to 1
    depth: float

    def __post_init__(self):
        self.barycentric = np.asarray(self.barycentric, dtype=np.float64)
        if abs(self.barycentric.sum() - 1.0) > 1e-9:
            raise ValueError("barycentric coordinates must sum to 1")


def _moller_trumbore(origin, direction, faces, positions):
    """Ray vs all triangles. Returns (t, bary_b, bary_c, valid) arrays."""
    p = np.asarray(positions)
    v0 = p[faces[:, 0]]
    e1 = p[faces[:, 1]] - v0
    e2 = p[faces[:, 2]] - v0
    pvec = np.cross(np.broadcast_to(direction, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > RAY_EPS
    inv = np.where(ok, det, 1.0)
    tvec = origin - v0
    b = np.einsum("ij,ij->i", tvec, pvec) / inv
    qvec = np.cross(tvec, e1)
    c = np.einsum("j,ij->i", direction, qvec) / inv
    t = np.einsum("ij,ij->i", e2, qvec) / inv
    valid = ok & (b >= 0) & (c >= 0) & (b + c <= 1) & (t > RAY_EPS)
    return t, b, c, valid


def raycast_pixel(camera: Camera, mesh: TriMesh, positions, pixel):
    """Nearest intersection of the ray through ``pixel`` with the mesh.

    Returns a SurfaceHit, or None on a miss. Ties in depth resolve to the
    lowest face index. Faces that are degenerate at the current positions
    have zero measure and cannot be hit; they are skipped as candidates.
    """
    origin, direction = camera.pixel_ray(pixel)
    areas = face_areas(mesh.faces, positions)
    t, b, c, valid = _moller_trumbore(origin, direction, mesh.faces, positions)
    valid &= areas >= MIN_FACE_AREA
    if not valid.any():
        return None
    t_masked = np.where(valid, t, np.inf)
    # argmin returns the first (lowest-index) face among exact ties
    idx = int(np.argmin(t_masked))
    bary = np.array([1.0 - b[idx] - c[idx], b[idx], c[idx]])
    return SurfaceHit(face_index=idx, barycentric=bary, depth=float(t[idx]))


def raycast_pixel_near(camera: Camera, mesh: TriMesh, positions, pixel,
                       radius=20, step=5):
    """raycast_pixel with a widening square search around near misses.

    Returns (hit, pixel_used) so callers know where the ray actually landed,
    or (None, pixel) when the whole neighborhood misses.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    hit = raycast_pixel(camera, mesh, positions, pixel)
    if hit is not None:
        return hit, pixel
    for r in np.arange(step, radius + step, step):
        offsets = [(du, dv) for du in (-r, 0, r) for dv in (-r, 0, r)
                   if (du, dv) != (0, 0)]
        for du, dv in offsets:
            p = pixel + (du, dv)
            hit = raycast_pixel(camera, mesh, positions, p)
            if hit is not None:
                return hit, p
    return None, pixel


def raycast_pixels(camera: Camera, mesh: TriMesh, positions, pixels,
                   face_subset=None):
    """Batched raycast. Returns (face_idx, bary, depth); face_idx -1 = miss.

    ``face_subset`` restricts candidate faces (indices into mesh.faces);
    returned face indices are always global.
    """
    px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    faces = mesh.faces if face_subset is None else mesh.faces[face_subset]
    p = np.asarray(positions)
    origin, dirs = camera.pixel_rays(px)

    v0 = p[faces[:, 0]]
    e1 = p[faces[:, 1]] - v0
    e2 = p[faces[:, 2]] - v0
    hittable = face_areas(faces, p) >= MIN_FACE_AREA

    n_px = len(px)
    face_idx = np.full(n_px, -1, dtype=np.int64)
    bary = np.zeros((n_px, 3))
    depth = np.full(n_px, np.inf)

    chunk = max(1, int(2_000_000 / max(len(faces), 1)))
    for s in range(0, n_px, chunk):
        d = dirs[s:s + chunk]                       # (P, 3)
        pvec = np.cross(d[:, None, :], e2[None])    # (P, F, 3)
        det = np.einsum("ij,pij->pi", e1, pvec)
        ok = np.abs(det) > RAY_EPS
        inv = np.where(ok, det, 1.0)
        tvec = origin - v0                          # (F, 3)
        b = np.einsum("ij,pij->pi", tvec, pvec) / inv
        qvec = np.cross(tvec, e1)                   # (F, 3)
        c = np.einsum("pj,ij->pi", d, qvec) / inv
        t = np.einsum("ij,ij->i", e2, qvec) / inv
        valid = ok & (b >= 0) & (c >= 0) & (b + c <= 1) & (t > RAY_EPS)
        valid &= hittable[None, :]
        t_masked = np.where(valid, t, np.inf)
        best = np.argmin(t_masked, axis=1)
        rows = np.arange(len(d))
        hit = np.isfinite(t_masked[rows, best])
        gsl = slice(s, s + len(d))
        fi = face_idx[gsl]
        fi[hit] = best[hit]
        bb = b[rows, best]
        cc = c[rows, best]
        bary[gsl][hit] = np.stack([1 - bb - cc, bb, cc], axis=1)[hit]
        depth[gsl][hit] = t_masked[rows, best][hit]
        face_idx[gsl] = fi

    if face_subset is not None:
        subset = np.asarray(face_subset)
        hitmask = face_idx >= 0
        face_idx[hitmask] = subset[face_idx[hitmask]]
    return face_idx, bary, depth


def eval_barycentric(mesh: TriMesh, positions, hit: SurfaceHit):
    """3D location of a barycentric anchor at the given vertex positions."""
    if hit.face_index < 0 or hit.face_index >= mesh.n_faces:
        raise StaleEmbeddingError(f"face {hit.face_index} not in mesh")
    tri = mesh.faces[hit.face_index]
    return hit.barycentric @ np.asarray(positions)[tri]


def eval_barycentric_batch(faces, positions, face_idx, bary):
    """Vectorized anchor evaluation; positions may be (V,3) or (S,V,3)."""
    p = np.asarray(positions)
    tri = faces[face_idx]  # (P, 3)
    if p.ndim == 2:
        return np.einsum("pk,pkj->pj", bary, p[tri])
    return np.einsum("pk,spkj->spj", bary, p[:, tri])


# ---------------------------------------------------------------------------
# 2D segment geometry
# ---------------------------------------------------------------------------

def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p):
    return (min(a[0], b[0]) - 1e-12 <= p[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= p[1] <= max(a[1], b[1]) + 1e-12)


def segments_intersect(a0, a1, b0, b1) -> bool:
    """Closed-segment intersection; collinear overlap and endpoint touching
    both count. Zero-length segments degrade to points."""
    d1 = _orient(b0, b1, a0)
    d2 = _orient(b0, b1, a1)
    d3 = _orient(a0, a1, b0)
    d4 = _orient(a0, a1, b1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 \
            and d3 != 0 and d4 != 0:
        return True
    if d1 == 0 and _on_segment(b0, b1, a0):
        return True
    if d2 == 0 and _on_segment(b0, b1, a1):
        return True
    if d3 == 0 and _on_segment(a0, a1, b0):
        return True
    if d4 == 0 and _on_segment(a0, a1, b1):
        return True
    return False


def segments_intersect_batch(seg_a, seg_b):
    """Pairwise intersection matrix between two segment arrays.

    seg_a: (N, 2, 2), seg_b: (M, 2, 2) -> bool (N, M). Same convention as
    segments_intersect (closed segments, touching counts).
    """
    a0 = np.asarray(seg_a)[:, None, 0]
    a1 = np.asarray(seg_a)[:, None, 1]
    b0 = np.asarray(seg_b)[None, :, 0]
    b1 = np.asarray(seg_b)[None, :, 1]

    def orient(p, q, r):
        return ((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    d1 = orient(b0, b1, a0)
    d2 = orient(b0, b1, a1)
    d3 = orient(a0, a1, b0)
    d4 = orient(a0, a1, b1)
    proper = (((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0))
              & (d1 != 0) & (d2 != 0) & (d3 != 0) & (d4 != 0))

    def on_seg(p, q, r):
        return ((np.minimum(p[..., 0], q[..., 0]) - 1e-12 <= r[..., 0])
                & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]) + 1e-12)
                & (np.minimum(p[..., 1], q[..., 1]) - 1e-12 <= r[..., 1])
                & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1]) + 1e-12))

    touch = (((d1 == 0) & on_seg(b0, b1, a0)) | ((d2 == 0) & on_seg(b0, b1, a1))
             | ((d3 == 0) & on_seg(a0, a1, b0)) | ((d4 == 0) & on_seg(a0, a1, b1)))
    return proper | touch


def point_segment_distance(points, s0, s1):
    """Distance of point(s) to one 2D segment."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = np.asarray(s0, dtype=np.float64)
    d = np.asarray(s1, dtype=np.float64) - a
    L2 = d @ d
    if L2 == 0:
        return np.linalg.norm(p - a, axis=1)
    t = np.clip((p - a) @ d / L2, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.linalg.norm(p - proj, axis=1)


# ---------------------------------------------------------------------------
# Dissection goal
# ---------------------------------------------------------------------------

def goal_frame(points):
    """(n_hat, m_hat) for a polyline: m_hat points from the first to the
    last vertex, n_hat is m_hat rotated +90 degrees."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    d = pts[-1] - pts[0]
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise DegenerateGoalError("goal endpoints coincide")
    m = d / norm
    n = np.array([-m[1], m[0]])
    return n, m


@dataclass
class DissectionGoal:
    """Pixel-space polyline with its orthogonal/parallel unit frame."""

    points: np.ndarray  # (M, 2) int
    max_turn_deg: float = 30.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        if len(self.points) < 2:
            raise DegenerateGoalError("goal needs at least 2 points")
        diffs = np.diff(self.points, axis=0).astype(float)
        if (np.linalg.norm(diffs, axis=1) < 1e-12).any():
            raise DegenerateGoalError("consecutive goal points coincide")
        for i in range(len(diffs) - 1):
            a, b = diffs[i], diffs[i + 1]
            cosang = np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1, 1)
            if np.degrees(np.arccos(cosang)) >= self.max_turn_deg:
                raise DegenerateGoalError(
                    f"turn angle at vertex {i + 1} exceeds {self.max_turn_deg} deg")
        self.n_hat, self.m_hat = goal_frame(self.points)

    @property
    def segments(self):
        """(M-1, 2, 2) float array of consecutive point pairs."""
        pts = self.points.astype(np.float64)
        return np.stack([pts[:-1], pts[1:]], axis=1)

    @property
    def length(self):
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    @property
    def midpoint(self):
        pts = self.points.astype(np.float64)
        return 0.5 * (pts[0] + pts[-1])
