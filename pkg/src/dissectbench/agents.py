"""Dissection agents: ideal action planning and error-injected execution.

A dissection plan is the literal action sequence a surgical robot would run:
grasp the flap, tension it, draw the blade along the goal, release. The
error-injected executor perturbs that plan the way real autonomy fails:
truncated cuts, lateral tool bias, and skipped attachments left behind on
long passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .errors import PlanningError
from .geometry import (
    Camera,
    DissectionGoal,
    eval_barycentric,
    eval_barycentric_batch,
    raycast_pixel,
    raycast_pixel_near,
    raycast_pixels,
)
from .sim import attach_grasp, clone, step
from .world import WorldState, cut_world, find_edge_crossings

DEFAULT_RETRACT_MM = 1.0
DEFAULT_SETTLE_STEPS = 10
DEFAULT_SKIP_MIN_SPAN_PX = 150.0
PATH_SAMPLE_PX = 3.0


@dataclass
class Grasp:
    pixel: np.ndarray


@dataclass
class Retract:
    direction: np.ndarray   # (3,) unit, world
    distance_mm: float


@dataclass
class CutSegment:
    start_px: np.ndarray
    end_px: np.ndarray
    start_3d: np.ndarray
    end_3d: np.ndarray


@dataclass
class Release:
    pass


@dataclass
class AgentErrorProfile:
    """Systematic execution errors injected into an otherwise ideal agent.

    short_cut_fraction: fraction of the commanded arc length actually cut.
    attachment_skips: crossings deliberately left intact on long passes.
    lateral_bias_px: constant tool offset perpendicular to the path.
    """

    short_cut_fraction: float = 1.0
    attachment_skips: int = 0
    lateral_bias_px: float = 0.0
    # Rest-frame midpoints of attachments the agent is blind to. Filled on
    # the first long stroke and persistent for the life of the profile, so
    # re-running the same plan misses the same attachments again.
    blind_sites: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.short_cut_fraction <= 1.0:
            raise ValueError("short_cut_fraction must be in (0, 1]")
        if self.attachment_skips < 0 or int(self.attachment_skips) != self.attachment_skips:
            raise ValueError("attachment_skips must be a non-negative integer")
        if abs(self.lateral_bias_px) > 50:
            raise ValueError("lateral_bias_px out of range (|bias| <= 50 px)")


@dataclass
class ExecutionRecord:
    """What actually happened during one plan execution."""

    executed_px: np.ndarray     # (K, 2) blade path in the image
    executed_path: np.ndarray   # (K, 3) blade path on the surface
    crossings_total: int
    severed: list               # dicts: edge, arc, point, px
    skipped: list
    duplicated_vertices: int
    off_surface: bool
    truncated: bool


def plan_dissection(goal: DissectionGoal, grasp_px, world: WorldState,
                    camera: Camera, retract_distance_mm=DEFAULT_RETRACT_MM):
    """Ideal plan: [Grasp, Retract, CutSegment x (M-1), Release].

    Every goal point must land on the tissue; a miss raises PlanningError
    naming the offending pixel.
    """
    pos = world.sim.positions
    pts3d = []
    for p in goal.points:
        hit = raycast_pixel(camera, world.mesh, pos, p)
        if hit is None:
            raise PlanningError(f"goal point {tuple(int(x) for x in p)} "
                                "misses the tissue surface")
        pts3d.append(eval_barycentric(world.mesh, pos, hit))
    actions = [Grasp(pixel=np.asarray(grasp_px, dtype=np.float64)),
               Retract(direction=-camera.forward.copy(),
                       distance_mm=float(retract_distance_mm))]
    for k in range(len(goal.points) - 1):
        actions.append(CutSegment(
            start_px=goal.points[k].astype(np.float64),
            end_px=goal.points[k + 1].astype(np.float64),
            start_3d=pts3d[k], end_3d=pts3d[k + 1]))
    actions.append(Release())
    return actions


def _densify_px(points, step_px=PATH_SAMPLE_PX):
    """Resample a pixel polyline at roughly uniform arc spacing."""
    pts = np.asarray(points, dtype=np.float64)
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / step_px)))
        for t in np.linspace(0, 1, n + 1)[1:]:
            out.append(a + t * (b - a))
    return np.asarray(out)


def _biased_truncated_path(cut_px, profile: AgentErrorProfile):
    """Apply the lateral bias and the short-cut truncation in pixel space."""
    pts = np.asarray(cut_px, dtype=np.float64)
    d = pts[-1] - pts[0]
    n = np.linalg.norm(d)
    if n > 1e-9 and profile.lateral_bias_px != 0.0:
        perp = np.array([-d[1], d[0]]) / n
        pts = pts + profile.lateral_bias_px * perp
    if profile.short_cut_fraction < 1.0:
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        target = profile.short_cut_fraction * arc[-1]
        k = int(np.searchsorted(arc, target))
        head = pts[:max(k, 1)]
        # Interpolated endpoint so the cut length is exact.
        if k < len(pts) and arc[k] > target and k >= 1:
            t = (target - arc[k - 1]) / max(arc[k] - arc[k - 1], 1e-12)
            tip = pts[k - 1] + t * (pts[k] - pts[k - 1])
            head = np.concatenate([head, tip[None]])
        return head, True
    return pts, False


def _skip_indices(crossing_arcs, total_arc, span_px, profile: AgentErrorProfile,
                  skip_min_span_px):
    """Crossings left intact by the attachment-skip error.

    The error is a positional blind spot, not a counter: the agent loses
    track at fixed fractions of the commanded stroke, and the crossing
    nearest each blind spot survives. Only short corrective strokes
    (below the span threshold) cut clean.
    """
    k = int(profile.attachment_skips)
    arcs = np.asarray(crossing_arcs, dtype=np.float64)
    if k == 0 or len(arcs) == 0 or span_px < skip_min_span_px:
        return ()
    if total_arc <= 0:
        return ()
    spots = (np.arange(k) + 0.5) / k * total_arc
    out = {int(np.argmin(np.abs(arcs - s))) for s in spots}
    return tuple(sorted(out))


def _surface_path(world, camera, pixel_path):
    """Raycast a dense pixel path onto the tissue; misses are dropped.

    Returns (pixels, points3d, (head_clipped, tail_clipped)); the flags say
    whether an off-surface stretch was trimmed at that end of the path.
    """
    faces, bary, _ = raycast_pixels(camera, world.mesh, world.sim.positions,
                                    pixel_path)
    ok = faces >= 0
    clipped = (bool(len(ok)) and not ok[0], bool(len(ok)) and not ok[-1])
    if ok.sum() < 2:
        return pixel_path[ok], np.zeros((0, 3)), clipped
    pts = eval_barycentric_batch(world.mesh.faces, world.sim.positions,
                                 np.where(ok, faces, 0), bary)[ok]
    keep = np.concatenate([[True],
                           np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12])
    return pixel_path[ok][keep], pts[keep], clipped


def _ends_at_silhouette(world, camera, exec_px, probe_px=4.0):
    """Whether each end of the executed pixel path stops at the tissue
    silhouette (a short probe past the end misses the surface)."""
    def off(end, prev):
        d = end - prev
        n = np.linalg.norm(d)
        if n < 1e-9:
            return False
        q = end + probe_px * d / n
        return raycast_pixel(camera, world.mesh, world.sim.positions,
                             q) is None
    return off(exec_px[0], exec_px[1]), off(exec_px[-1], exec_px[-2])


def _overshoot_path(path3d, margin, clipped):
    """Blade path with a straight run-off past each clipped end.

    The surface path stops at the last pixel whose ray lands on tissue, so
    without the overshoot a cut planned out to the silhouette would leave
    the outermost edge row uncrossed and therefore unsevered. Ends where
    the planned path itself stopped on-surface stay put.
    """
    a = path3d[0] - path3d[1]
    b = path3d[-1] - path3d[-2]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    parts = [path3d]
    if clipped[0] and na > 1e-12:
        parts.insert(0, (path3d[0] + margin * a / na)[None])
    if clipped[1] and nb > 1e-12:
        parts.append((path3d[-1] + margin * b / nb)[None])
    return np.concatenate(parts) if len(parts) > 1 else path3d


def execute_with_errors(world: WorldState, camera: Camera, actions,
                        profile: AgentErrorProfile | None = None, *,
                        settle_steps=DEFAULT_SETTLE_STEPS,
                        skip_min_span_px=DEFAULT_SKIP_MIN_SPAN_PX,
                        cut_width=None):
    """Run a dissection plan on the world, injecting the error profile.

    Returns (new_world, ExecutionRecord). The grasp/retract actions step the
    simulator for real, the cut applies cut_world with the perturbed blade
    path, and release lets the tissue settle before control returns.
    """
    profile = profile or AgentErrorProfile()
    grasp_act = next(a for a in actions if isinstance(a, Grasp))
    retract = next((a for a in actions if isinstance(a, Retract)), None)
    cut_px = [a.start_px for a in actions if isinstance(a, CutSegment)]
    cut_px += [a.end_px for a in actions if isinstance(a, CutSegment)][-1:]
    if len(cut_px) < 2:
        raise PlanningError("plan holds no cut segments")

    sim = clone(world.sim)
    if retract is not None and retract.distance_mm > 0:
        hit, _ = raycast_pixel_near(camera, world.mesh, sim.positions,
                                    grasp_act.pixel)
        if hit is None:
            raise PlanningError(
                f"grasp pixel {tuple(grasp_act.pixel)} misses the tissue")
        gp = eval_barycentric(world.mesh, sim.positions, hit)
        grasp = attach_grasp(sim, gp)
        dist = retract.distance_mm * 1e-3
        target = gp + retract.direction * dist
        for _ in range(int(np.ceil(dist / sim.max_grasp_step)) + 2):
            sim = step(sim, grasp.with_target(target))
    world = dc_replace(world, sim=sim)

    biased_px, truncated = _biased_truncated_path(cut_px, profile)
    dense_px = _densify_px(biased_px)
    exec_px, path3d, clipped = _surface_path(world, camera, dense_px)

    if len(path3d) < 2:
        rec = ExecutionRecord(executed_px=exec_px, executed_path=path3d,
                              crossings_total=0, severed=[], skipped=[],
                              duplicated_vertices=0, off_surface=True,
                              truncated=truncated)
        return _settle(world, settle_steps), rec

    width = cut_width if cut_width is not None \
        else float(world.sim.dist_rest.mean())
    at_edge = _ends_at_silhouette(world, camera, exec_px)
    blade = _overshoot_path(path3d, 0.25 * width,
                            (clipped[0] or at_edge[0],
                             clipped[1] or at_edge[1]))
    crossings = find_edge_crossings(world, blade, width)
    total_arc = float(np.linalg.norm(np.diff(blade, axis=0), axis=1).sum())
    span_px = float(np.linalg.norm(np.diff(exec_px, axis=0), axis=1).sum())
    skips = _skip_indices([c["arc"] for c in crossings], total_arc, span_px,
                          profile, skip_min_span_px)
    if profile.attachment_skips > 0 and crossings \
            and span_px >= skip_min_span_px:
        rest = world.mesh.vertices
        mids = np.stack([0.5 * (rest[c["edge"][0]] + rest[c["edge"][1]])
                         for c in crossings])
        if profile.blind_sites:
            # Blind spots already discovered: the same attachments survive.
            sites = np.asarray(profile.blind_sites, dtype=np.float64)
            d = np.linalg.norm(mids[:, None] - sites[None], axis=2).min(axis=1)
            skips = tuple(np.nonzero(d < 1e-7)[0].tolist())
        else:
            profile.blind_sites.extend(mids[list(skips)])
    world = cut_world(world, blade, cut_width=width,
                      skip_crossing_indices=skips)
    report = world.last_cut

    def enrich(events):
        out = []
        for ev in events:
            e = dict(ev)
            e["px"] = np.asarray(camera.project(ev["point"]), dtype=np.float64)
            out.append(e)
        return out

    rec = ExecutionRecord(
        executed_px=exec_px, executed_path=path3d,
        crossings_total=len(crossings),
        severed=enrich(report.severed), skipped=enrich(report.skipped),
        duplicated_vertices=report.duplicated_vertices,
        off_surface=report.off_surface, truncated=truncated)
    return _settle(world, settle_steps), rec


def _settle(world: WorldState, n_steps):
    sim = world.sim
    for _ in range(n_steps):
        sim = step(sim)
    return dc_replace(world, sim=sim)
