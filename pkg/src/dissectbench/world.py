"""Ground-truth world state and mesh cutting.

The world holds the "real tissue": a cuttable mesh plus its XPBD state.
Cutting is remeshing-free: crossed edges lose their constraints and face
adjacency, and vertices whose face fan falls apart are duplicated so the
slit can open. Face count and face indices never change.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (MIN_FACE_AREA, TriMesh, face_areas, face_components,
                       segments_intersect_batch)
from .sim import SimModel


@dataclass
class CutReport:
    """Outcome of one cut_world call."""

    off_surface: bool
    severed: list              # dicts: edge (orig pair), point (3,), arc
    skipped: list              # same shape, crossings deliberately left intact
    duplicated_vertices: int


@dataclass
class WorldState:
    """Cuttable tissue world: topology, dynamics, and cut bookkeeping."""

    mesh: TriMesh
    sim: SimModel
    cut_exposed_faces: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    severed_log: list = field(default_factory=list)
    skipped_log: list = field(default_factory=list)
    last_cut: CutReport | None = None

    @property
    def positions(self):
        return self.sim.positions

    def component_count(self):
        """Connected components over face adjacency, honoring severed edges."""
        labels = face_components(self.mesh, self._live_adjacency())
        return int(labels.max()) + 1

    def _live_adjacency(self):
        severed = {tuple(e["edge"]) for e in self.severed_log}
        if not severed:
            return self.mesh.face_adjacency
        keep = [k for k, e in enumerate(self.mesh.adjacency_edges)
                if tuple(sorted(e.tolist())) not in severed]
        return self.mesh.face_adjacency[keep]


def _fit_plane_axes(positions):
    """Two principal in-plane axes + origin of the best-fit plane."""
    p = np.asarray(positions)
    c = p.mean(axis=0)
    _, _, vt = np.linalg.svd(p - c, full_matrices=False)
    return c, vt[0], vt[1]


def _project_plane(points, origin, ax0, ax1):
    d = np.atleast_2d(points) - origin
    return np.stack([d @ ax0, d @ ax1], axis=1)


def find_edge_crossings(world: WorldState, cut_path, cut_width):
    """Intact edges crossed by the 3D cut polyline, sorted by arc position.

    An edge counts as crossed when its best-fit-plane projection intersects a
    path segment and the 3D crossing point lies within cut_width of the path.
    """
    path = np.asarray(cut_path, dtype=np.float64).reshape(-1, 3)
    if len(path) < 2:
        return []
    pos = world.sim.positions
    edges = world.sim.dist_idx[~world.sim.dist_virtual]  # tissue edges only
    if len(edges) == 0:
        return []
    origin, ax0, ax1 = _fit_plane_axes(pos)
    e2d = np.stack([_project_plane(pos[edges[:, 0]], origin, ax0, ax1),
                    _project_plane(pos[edges[:, 1]], origin, ax0, ax1)], axis=1)
    p2d = _project_plane(path, origin, ax0, ax1)
    seg2d = np.stack([p2d[:-1], p2d[1:]], axis=1)
    hits = segments_intersect_batch(e2d, seg2d)

    seg_len3d = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arc0 = np.concatenate([[0.0], np.cumsum(seg_len3d)])

    crossings = []
    for eidx, sidx in zip(*np.nonzero(hits)):
        a0, a1 = e2d[eidx]
        b0, b1 = seg2d[sidx]
        # Intersection parameter along the edge (2D line-line).
        r = a1 - a0
        s = b1 - b0
        denom = r[0] * s[1] - r[1] * s[0]
        if abs(denom) < 1e-15:
            t = 0.5
            u = 0.5
        else:
            q = b0 - a0
            t = (q[0] * s[1] - q[1] * s[0]) / denom
            u = (q[0] * r[1] - q[1] * r[0]) / denom
        t = float(np.clip(t, 0.0, 1.0))
        u = float(np.clip(u, 0.0, 1.0))
        i, j = edges[eidx]
        point = pos[i] + t * (pos[j] - pos[i])
        on_path = path[sidx] + u * (path[sidx + 1] - path[sidx])
        if np.linalg.norm(point - on_path) > cut_width:
            continue
        crossings.append({
            "edge": tuple(sorted((int(i), int(j)))),
            "edge_t": t,
            "point": point.copy(),
            "arc": float(arc0[sidx] + u * seg_len3d[sidx]),
        })
    crossings.sort(key=lambda c: (c["arc"], c["edge"]))
    # One crossing per edge (a polyline can graze an edge twice).
    seen = set()
    unique = []
    for c in crossings:
        if c["edge"] not in seen:
            seen.add(c["edge"])
            unique.append(c)
    return unique


def _split_vertices(mesh: TriMesh, severed_edges, all_severed):
    """Fan-split duplication. Returns (new_faces, new_vertex_sources).

    ``all_severed`` includes previously severed edges so repeated cuts keep
    separating fans consistently. New vertices copy their source vertex.
    """
    faces = mesh.faces.copy()
    n_v = mesh.n_vertices
    severed = set(all_severed)

    incident = {}
    for f, tri in enumerate(faces):
        for v in tri:
            incident.setdefault(int(v), []).append(f)

    # Map face -> edges at vertex v helper
    def face_edges_at(f, v):
        tri = faces[f]
        others = [int(x) for x in tri if x != v]
        return [tuple(sorted((v, o))) for o in others]

    sources = []
    touched = sorted({v for e in severed_edges for v in e})
    for v in touched:
        fs = incident.get(v, [])
        if len(fs) <= 1:
            continue
        # Union faces through shared non-severed edges at v.
        parent = {f: f for f in fs}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        edge_owner = {}
        for f in fs:
            for e in face_edges_at(f, v):
                if e in severed:
                    continue
                if e in edge_owner:
                    ra, rb = find(edge_owner[e]), find(f)
                    if ra != rb:
                        parent[ra] = rb
                else:
                    edge_owner[e] = f
        comps = {}
        for f in fs:
            comps.setdefault(find(f), []).append(f)
        if len(comps) <= 1:
            continue
        groups = sorted(comps.values(), key=lambda g: min(g))
        # Lowest-face-index component keeps the original vertex.
        for g in groups[1:]:
            new_id = n_v + len(sources)
            sources.append(v)
            for f in g:
                tri = faces[f]
                tri[tri == v] = new_id
    return faces, sources


def cut_world(world: WorldState, cut_path, cut_width=None,
              skip_crossing_indices=()) -> WorldState:
    """Apply a 3D cut polyline to the world; returns a new WorldState.

    Crossed intact edges lose their distance constraints and face adjacency;
    vertices whose face fan disconnects are duplicated so the slit can open.
    ``skip_crossing_indices`` (into the arc-sorted crossing list) leaves
    selected crossings intact -- the partial-cut mode used for error
    injection. Off-surface paths are a no-op flagged in last_cut.
    """
    if cut_width is None:
        cut_width = float(world.sim.dist_rest.mean())
    crossings = find_edge_crossings(world, cut_path, cut_width)
    skip = set(int(k) for k in skip_crossing_indices)
    severed = [c for k, c in enumerate(crossings) if k not in skip]
    skipped = [c for k, c in enumerate(crossings) if k in skip]

    if not severed:
        report = CutReport(off_surface=not crossings, severed=[],
                           skipped=skipped, duplicated_vertices=0)
        return replace(world, last_cut=report,
                       skipped_log=world.skipped_log + skipped)

    severed_pairs = [c["edge"] for c in severed]
    all_severed = set(severed_pairs) | {tuple(e["edge"]) for e in world.severed_log}
    new_faces, sources = _split_vertices(world.mesh, severed_pairs, all_severed)

    rest = world.mesh.vertices
    new_rest = np.concatenate([rest, rest[sources]]) if sources else rest.copy()

    # Remap simulator state and constraints onto the new vertex labels.
    sim = world.sim
    n_old = sim.n_particles
    idx_map = _edge_remap(world.mesh.faces, new_faces)

    pos = np.concatenate([sim.positions, sim.positions[sources]]) if sources \
        else sim.positions.copy()
    vel = np.concatenate([sim.velocities, sim.velocities[sources]]) if sources \
        else sim.velocities.copy()
    winv = np.concatenate([sim.inverse_mass, sim.inverse_mass[sources]]) if sources \
        else sim.inverse_mass.copy()

    severed_set = set(severed_pairs)
    keep_d = np.array([tuple(sorted(e)) not in severed_set
                       for e in sim.dist_idx.tolist()])
    dist_idx = np.array([_remap_pair(tuple(e), idx_map)
                         for e in sim.dist_idx[keep_d].tolist()], dtype=np.int64)
    dist_idx = dist_idx.reshape(-1, 2)
    dist_rest = sim.dist_rest[keep_d].copy()
    dist_comp = sim.dist_compliance[keep_d].copy()
    dist_virt = sim.dist_virtual[keep_d].copy()

    # Re-anchor every severed constraint onto each adjacent face's own
    # vertex copies (virtual-node style). A boundary triangle then keeps
    # its shape while the two sides of the slit stay free to separate;
    # when no vertex was duplicated the copies coincide with the original
    # pair and nothing is re-added, so the cut still weakens the tissue.
    lookup = {tuple(sorted(e)): k for k, e in enumerate(sim.dist_idx.tolist())}
    have = {tuple(sorted(e)) for e in dist_idx.tolist()}
    extra_idx, extra_rest, extra_comp = [], [], []
    for of, nf in zip(world.mesh.faces, new_faces):
        for a in range(3):
            i, j = int(of[a]), int(of[(a + 1) % 3])
            pair = tuple(sorted((i, j)))
            if pair not in severed_set:
                continue
            ci, cj = int(nf[a]), int(nf[(a + 1) % 3])
            cpair = tuple(sorted((ci, cj)))
            if cpair == pair or cpair in have:
                continue
            k = lookup.get(pair)
            if k is None:
                continue
            have.add(cpair)
            extra_idx.append(cpair)
            extra_rest.append(sim.dist_rest[k])
            extra_comp.append(sim.dist_compliance[k])
    if extra_idx:
        dist_idx = np.concatenate([dist_idx, np.asarray(extra_idx, np.int64)])
        dist_rest = np.concatenate([dist_rest, np.asarray(extra_rest)])
        dist_comp = np.concatenate([dist_comp, np.asarray(extra_comp)])
        dist_virt = np.concatenate([dist_virt, np.ones(len(extra_idx), bool)])

    keep_b = np.array([tuple(sorted((int(b[0]), int(b[1])))) not in severed_set
                       for b in sim.bend_idx], dtype=bool) \
        if len(sim.bend_idx) else np.zeros(0, bool)
    bend_rows = []
    for b in sim.bend_idx[keep_b]:
        i, j = _remap_pair((int(b[0]), int(b[1])), idx_map)
        k = _remap_vertex(int(b[2]), (int(b[0]), int(b[1]), int(b[2])), idx_map)
        l = _remap_vertex(int(b[3]), (int(b[0]), int(b[1]), int(b[3])), idx_map)
        bend_rows.append((i, j, k, l))
    bend_idx = np.asarray(bend_rows, dtype=np.int64).reshape(-1, 4)
    bend_rest = sim.bend_rest[keep_b].copy()
    bend_comp = sim.bend_compliance[keep_b].copy()

    # Corners held only by virtual constraints are the dangling tips of
    # severed boundary triangles. Collapse them most of the way toward
    # their in-face partners so the cut band retracts to its own side;
    # otherwise both sides keep coplanar faces shelving over the slit and
    # a ray through a near-slit pixel lands on either one at random.
    if len(dist_idx):
        n_all = len(pos)
        real_deg = np.zeros(n_all, np.int64)
        virt_deg = np.zeros(n_all, np.int64)
        if (~dist_virt).any():
            np.add.at(real_deg, dist_idx[~dist_virt].ravel(), 1)
        if dist_virt.any():
            np.add.at(virt_deg, dist_idx[dist_virt].ravel(), 1)
        dangling = (real_deg == 0) & (virt_deg > 0) & (winv > 0)
        if dangling.any():
            nbr = {}
            for i, j in dist_idx.tolist():
                nbr.setdefault(i, []).append(j)
                nbr.setdefault(j, []).append(i)
            moved = set()
            pos_before = pos.copy()
            rest_before = new_rest.copy()
            for v in np.nonzero(dangling)[0]:
                v = int(v)
                anchors = [u for u in nbr.get(v, []) if not dangling[u]]
                if not anchors:
                    continue
                pos[v] += 0.9 * (pos[anchors].mean(axis=0) - pos[v])
                new_rest[v] += 0.9 * (new_rest[anchors].mean(axis=0)
                                      - new_rest[v])
                vel[v] = vel[anchors].mean(axis=0)
                moved.add(v)
            # Back the pull off wherever it would flatten a face outright
            # (all of a face's corners dangling, or a sliver cut twice).
            if moved:
                mv = np.fromiter(sorted(moved), np.int64)
                for _ in range(8):
                    bad = ((face_areas(new_faces, pos) < 10 * MIN_FACE_AREA) |
                           (face_areas(new_faces, new_rest)
                            < 10 * MIN_FACE_AREA))
                    bad &= np.isin(new_faces, mv).any(axis=1)
                    if not bad.any():
                        break
                    shrink = np.unique(new_faces[bad])
                    shrink = shrink[np.isin(shrink, mv)]
                    pos[shrink] = 0.5 * (pos[shrink] + pos_before[shrink])
                    new_rest[shrink] = 0.5 * (new_rest[shrink]
                                              + rest_before[shrink])
            if moved:
                touched = np.array([i in moved or j in moved
                                    for i, j in dist_idx.tolist()])
                d = np.linalg.norm(new_rest[dist_idx[touched, 0]]
                                   - new_rest[dist_idx[touched, 1]], axis=1)
                dist_rest[touched] = np.maximum(d, 1e-9)
                if len(bend_idx):
                    keep = ~np.isin(bend_idx,
                                    np.fromiter(moved, np.int64)).any(axis=1)
                    bend_idx = bend_idx[keep]
                    bend_rest = bend_rest[keep]
                    bend_comp = bend_comp[keep]

    new_mesh = TriMesh(new_rest, new_faces)
    new_sim = replace(
        sim, mesh=new_mesh, positions=pos, velocities=vel, inverse_mass=winv,
        dist_idx=dist_idx, dist_rest=dist_rest,
        dist_compliance=dist_comp, dist_virtual=dist_virt,
        bend_idx=bend_idx, bend_rest=bend_rest,
        bend_compliance=bend_comp)

    exposed = set(world.cut_exposed_faces.tolist())
    for f, tri in enumerate(world.mesh.faces):
        tri_edges = {tuple(sorted((int(tri[a]), int(tri[(a + 1) % 3]))))
                     for a in range(3)}
        if tri_edges & severed_set:
            exposed.add(f)

    report = CutReport(off_surface=False, severed=severed, skipped=skipped,
                       duplicated_vertices=len(sources))
    return WorldState(
        mesh=new_mesh, sim=new_sim,
        cut_exposed_faces=np.asarray(sorted(exposed), dtype=np.int64),
        severed_log=world.severed_log + severed,
        skipped_log=world.skipped_log + skipped,
        last_cut=report)


def _edge_remap(old_faces, new_faces):
    """For every old (vertex, co-face context) pair, the new vertex label.

    Keyed by (old vertex, old partner vertices of the same face) so edges and
    bending quads can be rewritten face-consistently.
    """
    remap = {}
    for of, nf in zip(old_faces, new_faces):
        for a in range(3):
            for b in range(3):
                if a == b:
                    continue
                key = (int(of[a]), int(of[b]))
                remap.setdefault(key, (int(nf[a]), int(nf[b])))
    return remap


def _remap_pair(pair, remap):
    i, j = int(pair[0]), int(pair[1])
    if (i, j) in remap:
        return remap[(i, j)]
    return (i, j)


def _remap_vertex(v, context, remap):
    # Wing vertex of a bending quad: look it up against either shared-edge
    # endpoint of its own face.
    for other in context[:2]:
        got = remap.get((int(v), int(other)))
        if got:
            return got[0]
    return int(v)
