"""Closed-loop dissection pipeline and episode metrics.

One episode: execute the dissection plan, run the exposure phase, estimate
residual tissue connectivity from tracked keypoints, plan recovery cuts, and
repeat until the estimator reports Complete or the attempt budget runs out.
Metrics are graded against the simulator's ground truth.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .agents import (
    AgentErrorProfile,
    _densify_px,
    _settle,
    execute_with_errors,
    plan_dissection,
)
from .config import default_config
from .connectivity import (
    KeypointGrid,
    classify_edges,
    connectivity_estimation_accuracy,
    detection_accuracy,
    estimate_connectivity,
)
from .control import MPPIParams, run_exposure_phase
from .errors import MetricUndefinedError, PlanningError
from .geometry import (
    DissectionGoal,
    eval_barycentric_batch,
    point_segment_distance,
    raycast_pixel,
    raycast_pixel_near,
    raycast_pixels,
    segments_intersect_batch,
)
from .recovery import CandidateSegment, plan_recovery
from .scene import Scene
from .sim import remove_constraints_crossing
from .world import WorldState, find_edge_crossings

RECOVERY_CUT_WIDTH_FACTOR = 1.5


def reference_crossings(scene: Scene):
    """Edge crossings of the ideal goal path on the pristine world.

    This is the denominator for cut-coverage metrics: how many constraint
    edges a perfect execution would sever.
    """
    world, camera = scene.world, scene.camera
    dense = _densify_px(scene.goal.points.astype(float))
    faces, bary, _ = raycast_pixels(camera, world.mesh, world.sim.positions,
                                    dense)
    ok = faces >= 0
    if ok.sum() < 2:
        return []
    path = eval_barycentric_batch(world.mesh.faces, world.sim.positions,
                                  np.where(ok, faces, 0), bary)[ok]
    return find_edge_crossings(world, path, float(world.sim.dist_rest.mean()))


def truth_disconnected_edges(world: WorldState, camera, grid, positions=None,
                             hop_limit=8):
    """Ground-truth separated keypoint edges, as sorted index pairs.

    Each keypoint is anchored to the face its ray hits; an edge counts as
    separated when no face-adjacency path of at most ``hop_limit`` hops
    joins the two anchors. A nearby intact bridge (or the uncut tail of a
    short cut) keeps the pair within the hop budget, matching the fact that
    such pairs cannot physically move apart.
    """
    mesh = world.mesh
    pos = world.positions if positions is None else positions
    faces, _, _ = raycast_pixels(camera, mesh, pos, grid.keypoints)

    nbr = [[] for _ in range(mesh.n_faces)]
    for a, b in world._live_adjacency().tolist():
        nbr[a].append(b)
        nbr[b].append(a)

    from collections import deque
    cache = {}

    def within_hops(fa, fb):
        key = (fa, fb) if fa <= fb else (fb, fa)
        if key in cache:
            return cache[key]
        seen = {fa}
        frontier = deque([(fa, 0)])
        found = fa == fb
        while frontier and not found:
            f, d = frontier.popleft()
            if d >= hop_limit:
                continue
            for g in nbr[f]:
                if g == fb:
                    found = True
                    break
                if g not in seen:
                    seen.add(g)
                    frontier.append((g, d + 1))
        cache[key] = found
        return found

    out = set()
    for i, j in grid.edges.tolist():
        fa, fb = int(faces[i]), int(faces[j])
        if fa < 0 or fb < 0:
            continue
        if not within_hops(fa, fb):
            out.add(tuple(sorted((i, j))))
    return out


def _cluster_count(edge_pairs):
    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in edge_pairs:
        parent.setdefault(i, i)
        parent.setdefault(j, j)
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    return len({find(x) for x in parent})


@dataclass
class EpisodeMetrics:
    length_deviation_mm: float
    remaining_attachments: int
    effective_cut_ratio: float
    excessive_cut_ratio: float
    visible_area_px: int | None = None
    detection_accuracy_pct: float | None = None
    estimation_accuracy_pct: float | None = None
    over_predicted: bool | None = None
    attempts: int = 1
    success: bool = False

    def as_row(self):
        def f(x, fmt="{:.4f}"):
            return "" if x is None else (fmt.format(x) if isinstance(x, float)
                                         else str(x))
        return {
            "lengthDeviation": f(self.length_deviation_mm),
            "remainingAttachments": str(self.remaining_attachments),
            "effectiveCutRatio": f(self.effective_cut_ratio),
            "excessiveCutRatio": f(self.excessive_cut_ratio),
            "visibleArea": f(self.visible_area_px),
            "detectionAccuracy": f(self.detection_accuracy_pct, "{:.2f}"),
            "estimationAccuracy": f(self.estimation_accuracy_pct, "{:.2f}"),
            "attemptsUsed": str(self.attempts),
            "success": str(int(self.success)),
        }


def compute_metrics(world: WorldState, scene: Scene, ref_count, records, *,
                    corridor_halfwidth_mm=2.0, visible_area=None,
                    detection=None, estimation=None, over_predicted=None,
                    attempts=1) -> EpisodeMetrics:
    """Grade the current world against the original goal.

    Length deviation is the uncovered fraction of the goal (surviving
    constraint edges that still cross it) scaled to the goal's metric
    length; attachments are clusters of those surviving edges.
    """
    if ref_count <= 0:
        raise MetricUndefinedError("goal crosses no tissue edges")
    camera = scene.camera
    scale = scene.scale_mm_per_px
    goal_len_mm = scene.goal.length * scale
    goal_segs = scene.goal.segments.astype(np.float64)

    # Rest-pose projection: which intact constraint edges still cross the
    # goal is a topology question, so grade it free of transient sag.
    uv, okp = camera.project_with_validity(world.mesh.vertices)
    e = world.sim.dist_idx[~world.sim.dist_virtual]
    if len(e):
        segs = np.stack([uv[e[:, 0]], uv[e[:, 1]]], axis=1)
        valid = okp[e].all(axis=1)
        crossing = segments_intersect_batch(segs, goal_segs).any(axis=1) & valid
        rem = e[crossing]
    else:
        rem = np.zeros((0, 2), dtype=np.int64)
    k_rem = len(rem)
    length_dev = goal_len_mm * min(1.0, k_rem / ref_count)
    clusters = _cluster_count([tuple(p) for p in rem.tolist()])

    corridor_px = corridor_halfwidth_mm / scale
    sev_px = [ev["px"] for rec in records for ev in rec.severed]
    n_in = n_out = 0
    for p in sev_px:
        d = min(point_segment_distance(np.asarray(p)[None], s[0], s[1])[0]
                for s in goal_segs)
        if d <= corridor_px:
            n_in += 1
        else:
            n_out += 1
    effective = min(1.0, n_in / ref_count)
    excessive = n_out / max(1, n_in + n_out)

    return EpisodeMetrics(
        length_deviation_mm=float(length_dev),
        remaining_attachments=int(clusters),
        effective_cut_ratio=float(effective),
        excessive_cut_ratio=float(excessive),
        visible_area_px=visible_area, detection_accuracy_pct=detection,
        estimation_accuracy_pct=estimation, over_predicted=over_predicted,
        attempts=attempts,
        success=bool(length_dev < 2.0 and clusters == 0))


@dataclass
class AttemptLog:
    index: int
    goals: list
    records: list
    report: object = None
    plan: object = None
    grid: object = None
    exposure_visible: list = field(default_factory=list)
    metrics: EpisodeMetrics | None = None
    faces: np.ndarray | None = None           # (F, 3) topology during exposure
    frame_positions: np.ndarray | None = None  # (T, N, 3) exposure frames

    def overlays(self):
        """JSON-ready overlay geometry for rendering and replay."""
        out = {
            "goals": [g.points.tolist() for g in self.goals],
            "executed": [r.executed_px.tolist() for r in self.records],
            "severed": [ev["px"].tolist() for r in self.records
                        for ev in r.severed],
            "skipped": [ev["px"].tolist() for r in self.records
                        for ev in r.skipped],
        }
        if self.grid is not None:
            out["keypoints"] = self.grid.keypoints.tolist()
            out["grid_edges"] = self.grid.edges.tolist()
        if self.report is not None:
            out["rho"] = [round(float(r), 5) for r in self.report.rho]
            out["connected"] = self.report.connected.astype(int).tolist()
            out["report_edges"] = self.report.edges.tolist()
        if self.plan is not None:
            out["complete"] = self.plan.complete
            if self.plan.uncut is not None:
                out["uncut_segments"] = self.plan.uncut.segments.tolist()
            out["proposed"] = [g.points.tolist() for g in self.plan.goals]
        return out


@dataclass
class EpisodeLog:
    config: dict
    attempts: list
    metrics: EpisodeMetrics
    feedback: bool

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        import yaml
        with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
            yaml.safe_dump(self.config, fh, sort_keys=False)
        cols = list(self.metrics.as_row())
        with open(os.path.join(out_dir, "metrics.tsv"), "w") as fh:
            fh.write("\t".join(cols) + "\n")
            fh.write("\t".join(self.metrics.as_row()[c] for c in cols) + "\n")
        with open(os.path.join(out_dir, "attempts.tsv"), "w") as fh:
            fh.write("attempt\t" + "\t".join(cols) + "\n")
            for a in self.attempts:
                row = a.metrics.as_row()
                fh.write(f"{a.index}\t" + "\t".join(row[c] for c in cols) + "\n")
        events = []
        for a in self.attempts:
            for rec in a.records:
                for kind, evs in (("severed", rec.severed),
                                  ("skipped", rec.skipped)):
                    for ev in evs:
                        events.append({
                            "attempt": a.index, "kind": kind,
                            "edge": [int(x) for x in ev["edge"]],
                            "arc": round(float(ev["arc"]), 6),
                            "px": [round(float(x), 2) for x in ev["px"]]})
        with open(os.path.join(out_dir, "events.json"), "w") as fh:
            json.dump(events, fh, indent=1)
        for a in self.attempts:
            adir = os.path.join(out_dir, f"attempt_{a.index:02d}")
            os.makedirs(adir, exist_ok=True)
            with open(os.path.join(adir, "overlays.json"), "w") as fh:
                json.dump(a.overlays(), fh, indent=1)
            if a.frame_positions is not None:
                np.savez_compressed(os.path.join(adir, "frames.npz"),
                                    faces=a.faces,
                                    positions=a.frame_positions)


def load_episode_overlays(log_dir):
    """Per-attempt overlay dicts (and frames when stored) from a saved
    EpisodeLog directory, in attempt order."""
    out = []
    for name in sorted(os.listdir(log_dir)):
        adir = os.path.join(log_dir, name)
        if not name.startswith("attempt_") or not os.path.isdir(adir):
            continue
        with open(os.path.join(adir, "overlays.json")) as fh:
            item = {"index": int(name.split("_")[1]), "overlays": json.load(fh)}
        fpath = os.path.join(adir, "frames.npz")
        if os.path.exists(fpath):
            data = np.load(fpath)
            item["faces"] = data["faces"]
            item["positions"] = data["positions"]
        out.append(item)
    return out


def _clip_goal_to_surface(goal: DissectionGoal, world, camera):
    """Trim a goal to its on-surface span.

    Endpoints slide inward to the first and last path samples whose rays
    land on tissue, so a corrective goal that straddles an open slit keeps
    its full crossing instead of collapsing into the hole. Interior
    waypoints that miss the surface are dropped. None when no span remains.
    """
    dense = _densify_px(goal.points.astype(np.float64))
    faces, _, _ = raycast_pixels(camera, world.mesh, world.sim.positions,
                                 dense)
    idx = np.nonzero(faces >= 0)[0]
    if len(idx) < 2:
        return None

    def snap(order):
        # Rounding can push a grazing sample off the silhouette; walk
        # inward to the first sample that still hits after rounding.
        for k in order:
            q = np.rint(dense[k]).astype(np.int64)
            if raycast_pixel(camera, world.mesh, world.sim.positions,
                             q) is not None:
                return q
        return None

    a = snap(idx)
    b = snap(idx[::-1])
    if a is None or b is None or (a == b).all():
        return None
    pts = [a]
    for p in goal.points[1:-1]:
        if raycast_pixel(camera, world.mesh, world.sim.positions, p) is None:
            continue
        q = np.asarray(p, dtype=np.int64)
        if not (q == pts[-1]).all():
            pts.append(q)
    if not (b == pts[-1]).all():
        pts.append(b)
    if len(pts) < 2:
        return None
    return DissectionGoal(np.stack(pts))


def _clip_candidates_to_surface(candidates, world, camera,
                                min_span_px=8.0, pad_px=0.0):
    """Clip recovery candidates to their on-surface pixel span.

    Candidates are sampled from image-space geometry alone, so some run
    mostly over the hole a previous cut opened; their blade would touch
    nothing. Each candidate shrinks to the span between its first and
    last samples that raycast onto tissue, and candidates with no usable
    span are dropped. The kept span gets ``pad_px`` of slack at both ends
    because the tissue keeps moving between planning and the blade coming
    down; execution clips the goal to the surface it finds then.
    """
    if not candidates:
        return []
    paths = [_densify_px(c.endpoints) for c in candidates]
    faces, _, _ = raycast_pixels(camera, world.mesh, world.sim.positions,
                                 np.concatenate(paths))
    out = []
    off = 0
    for c, p in zip(candidates, paths):
        hit = faces[off:off + len(p)] >= 0
        off += len(p)
        idx = np.nonzero(hit)[0]
        if len(idx) < 2:
            continue
        a, b = p[idx[0]], p[idx[-1]]
        span = float(np.linalg.norm(b - a))
        if span < min_span_px:
            continue
        u = (b - a) / span
        a = a - pad_px * u
        b = b + pad_px * u
        out.append(CandidateSegment(
            center=0.5 * (a + b),
            angle=float(np.arctan2(b[1] - a[1], b[0] - a[0])),
            length=span + 2 * pad_px, injected=c.injected))
    return out


def _goal_anchor(goal: DissectionGoal, world, camera):
    """Surface anchor (face, bary, pixel) at the goal's central on-surface
    sample. None when the whole goal misses the tissue."""
    dense = _densify_px(goal.points.astype(np.float64))
    faces, bary, _ = raycast_pixels(camera, world.mesh, world.sim.positions,
                                    dense)
    idx = np.nonzero(faces >= 0)[0]
    if len(idx) == 0:
        return None
    k = idx[len(idx) // 2]
    return int(faces[k]), bary[k].copy(), dense[k].copy()


def _retarget_goal(goal: DissectionGoal, anchor, world, camera):
    """Translate a pending goal so its surface anchor lines back up.

    Corrective cuts in one attempt run back to back; each pass drags the
    flap, so a goal planned against the starting configuration would land
    where the tissue used to be. The anchor's pixel displacement gives a
    first-order correction.
    """
    if anchor is None:
        return goal
    face, bary, px0 = anchor
    if face >= len(world.mesh.faces):
        return goal
    pt = eval_barycentric_batch(world.mesh.faces, world.sim.positions,
                                np.array([face]), bary[None])[0]
    uv, ok = camera.project_with_validity(pt[None])
    if not ok[0]:
        return goal
    delta = np.rint(uv[0] - px0).astype(np.int64)
    if (delta == 0).all():
        return goal
    return DissectionGoal(goal.points + delta, max_turn_deg=goal.max_turn_deg)


def _anchored_keypoints(grid, mesh, positions_then, positions_now, camera):
    """Keypoint pixels carried through their surface anchors to a newer
    configuration; unanchored points keep their original pixels."""
    faces, bary, _ = raycast_pixels(camera, mesh, positions_then,
                                    grid.keypoints)
    kp = np.asarray(grid.keypoints, dtype=np.float64).copy()
    ok = faces >= 0
    if ok.any():
        pts = eval_barycentric_batch(mesh.faces, positions_now,
                                     np.where(ok, faces, 0), bary)
        uv, valid = camera.project_with_validity(pts)
        ok &= valid
        kp[ok] = uv[ok]
    return kp


def effective_grasp_px(world: WorldState, camera, desired_px):
    """The nominal grasp pixel, or the nearest on-tissue pixel when the
    flap has moved out from under it between attempts."""
    desired = np.asarray(desired_px, dtype=np.float64)
    hit, px = raycast_pixel_near(camera, world.mesh, world.sim.positions,
                                 desired)
    if hit is not None:
        return np.asarray(px, dtype=np.float64)
    uv, ok = camera.project_with_validity(world.sim.positions)
    d = np.linalg.norm(uv - desired, axis=1)
    d[~ok] = np.inf
    # Vertices on a silhouette can project to pixels whose ray grazes every
    # face, so walk outward until one actually raycasts onto the surface.
    for k in np.argsort(d)[:64]:
        if not np.isfinite(d[k]):
            break
        if raycast_pixel(camera, world.mesh, world.sim.positions, uv[k]) is not None:
            return uv[k]
    raise PlanningError("no tissue visible to grasp")


class EpisodeRunner:
    """Stepwise episode driver: one attempt per step_attempt() call.

    With feedback off this is the open-loop baseline: the same goal is
    re-executed every attempt with no exposure or estimation phase.
    """

    def __init__(self, scene: Scene, cfg=None, *, feedback=None, seed=None,
                 progress=None):
        self.cfg = cfg if cfg is not None else default_config()
        self.scene = scene
        self.feedback = self.cfg["loop"]["feedback"] if feedback is None \
            else feedback
        self.seed = self.cfg["seed"] if seed is None else seed
        self.progress = progress
        agent_cfg = self.cfg["agent"]
        self.profile = AgentErrorProfile(
            short_cut_fraction=agent_cfg["short_cut_fraction"],
            attachment_skips=agent_cfg["attachment_skips"],
            lateral_bias_px=agent_cfg["lateral_bias_px"])
        ctl = self.cfg["control"]
        self.params = MPPIParams(
            samples=ctl["samples"], horizon=ctl["horizon"],
            noise_std=ctl["noise_std"], temperature=ctl["temperature"],
            steps=ctl["steps"], retraction_step=ctl["retraction_step"],
            lift=ctl["lift"])
        self.ref = reference_crossings(scene)
        if not self.ref:
            raise PlanningError("goal path crosses no tissue edges")
        self.world = scene.world
        self.goals = [scene.goal]
        self.all_records = []
        self.attempts = []
        self.complete = False
        # Material keypoint grid: sampled once on pristine tissue, then
        # carried through its surface anchors as the flap moves.
        self.grid0 = None
        self.kp_anchor = None

    @property
    def done(self):
        return (self.complete
                or len(self.attempts) >= self.cfg["loop"]["max_attempts"])

    def set_goals(self, goals):
        """Override the next attempt's goals (supervisor edit path)."""
        self.goals = list(goals)

    def step_attempt(self) -> AttemptLog:
        cfg, scene = self.cfg, self.scene
        agent_cfg = cfg["agent"]
        ctl = cfg["control"]
        est = cfg["estimator"]
        pln = cfg["planner"]
        camera = scene.camera
        attempt = len(self.attempts) + 1
        if self.progress:
            self.progress("execute", attempt)

        recs = []
        world = self.world
        anchors = [_goal_anchor(g, world, camera) for g in self.goals]
        for g, anc in zip(self.goals, anchors):
            g2 = _clip_goal_to_surface(
                _retarget_goal(g, anc, world, camera), world, camera)
            if g2 is None:
                continue
            grasp_px = effective_grasp_px(world, camera, scene.grasp_px)
            # Corrective passes cut without regrasping: the slit is already
            # open, and re-tensioning before every short stroke drags the
            # flap away from where the stroke was just planned. They also
            # use a wider deliberate stroke, because the residual bridge was
            # localized from keypoints and a first-attempt-width blade can
            # pass a few pixels to its side and leave it intact.
            corrective = attempt > 1 and self.feedback
            actions = plan_dissection(
                g2, grasp_px, world, camera,
                retract_distance_mm=0.0 if corrective
                else agent_cfg["retract_distance_mm"])
            width = RECOVERY_CUT_WIDTH_FACTOR * \
                float(world.sim.dist_rest.mean()) if corrective else None
            world, rec = execute_with_errors(
                world, camera, actions, self.profile,
                settle_steps=agent_cfg["settle_steps"],
                skip_min_span_px=agent_cfg["skip_min_span_px"],
                cut_width=width)
            recs.append(rec)
        self.all_records.extend(recs)

        report = plan = grid = None
        vis = det = est_acc = over = None
        visible_trace = []
        faces = frame_positions = None
        if self.feedback:
            if self.progress:
                self.progress("exposure", attempt)
            internal = None
            if not ctl["optimistic_internal"]:
                # Conservative model: assume the commanded cut fully landed.
                internal = remove_constraints_crossing(
                    world.sim, scene.goal.segments.astype(float), camera)
            grid_arg = None
            if self.grid0 is not None:
                faces_a, bary_a, ok_a = self.kp_anchor
                pts = eval_barycentric_batch(
                    world.mesh.faces, world.sim.positions, faces_a, bary_a)
                uv, valid = camera.project_with_validity(pts)
                kp = np.where((ok_a & valid)[:, None], uv,
                              self.grid0.keypoints)
                grid_arg = KeypointGrid(
                    keypoints=kp, edges=self.grid0.edges,
                    spacing=self.grid0.spacing, extent=self.grid0.extent,
                    shape=self.grid0.shape)
            exposure = run_exposure_phase(
                world, camera, scene.goal,
                effective_grasp_px(world, camera, scene.grasp_px), self.params,
                mode=ctl["mode"], grid=grid_arg, internal_model=internal,
                seed=self.seed + 97 * attempt, ikt_noise_std=est["noise_std"],
                visible_stride=ctl["visible_stride"],
                estimator_spacing=est["spacing"],
                estimator_extent=est["extent"],
                loss_weights={"lam_c": ctl["lam_c"], "lam_d": ctl["lam_d"],
                              "w_n": ctl["w_n"], "w_s": ctl["w_s"]})
            if self.grid0 is None:
                self.grid0 = exposure.grid
                fa, ba, _ = raycast_pixels(camera, world.mesh,
                                           exposure.frames[0][1],
                                           exposure.grid.keypoints)
                self.kp_anchor = (np.where(fa >= 0, fa, 0), ba, fa >= 0)
            world = _settle(exposure.world, agent_cfg["settle_steps"])
            visible_trace = exposure.visible_area
            vis = exposure.visible_area[-1][1]
            grid = exposure.grid
            faces = exposure.frames[0][0].faces.copy()
            frame_positions = np.stack([p for _, p in exposure.frames])

            tracked = exposure.tracked
            valid = tracked.per_frame_valid.all(axis=0)
            report = estimate_connectivity(exposure.grid,
                                           tracked.per_frame_pixels,
                                           tau=est["tau"], valid=valid,
                                           mode=est["mode"])
            truth = truth_disconnected_edges(
                exposure.world, camera, exposure.grid,
                positions=exposure.frames[0][1])
            det = detection_accuracy(report, truth)
            if truth:
                est_acc, over = connectivity_estimation_accuracy(
                    len(report.disconnected_edges), len(truth))
            # Plan in the settled frame the next attempt will see: carry
            # each keypoint through its surface anchor from t_d to now.
            kp_now = _anchored_keypoints(
                exposure.grid, world.mesh, exposure.frames[0][1],
                world.sim.positions, camera)
            # Recovery works from the cumulative settled elongation, not the
            # per-attempt trajectory maximum the detector uses: the tracker
            # rebases each attempt, so a pair that parted last attempt reads
            # rho ~ 1 here, while an intact pair next to a bridge can spike
            # during retraction yet relaxes once the grasp releases. Against
            # the pristine grid spacing, intact pairs settle back near 1 no
            # matter how far the flap sags; separated pairs keep their gap.
            base = np.linalg.norm(
                self.grid0.keypoints[report.edges[:, 0]]
                - self.grid0.keypoints[report.edges[:, 1]], axis=1)
            settled = np.linalg.norm(
                kp_now[report.edges[:, 0]] - kp_now[report.edges[:, 1]],
                axis=1) / np.maximum(base, 1e-9)
            recovery_report = classify_edges(settled, report.edges,
                                             tau=pln["uncut_tau"],
                                             excluded=report.excluded)
            plan = plan_recovery(
                recovery_report, kp_now, scene.goal.segments,
                keypoints_rest=self.grid0.keypoints,
                candidate_transform=lambda cs: _clip_candidates_to_surface(
                    cs, world, scene.camera),
                segment_length=pln["segment_length"],
                center_radius=pln["center_radius"],
                n_centers=pln["n_centers"], angle_bins=pln["angle_bins"],
                seed=self.seed + attempt)

        metrics = compute_metrics(
            world, scene, len(self.ref), self.all_records,
            corridor_halfwidth_mm=cfg["loop"]["corridor_halfwidth_mm"],
            visible_area=vis, detection=det, estimation=est_acc,
            over_predicted=over, attempts=attempt)
        log = AttemptLog(index=attempt, goals=self.goals, records=recs,
                         report=report, plan=plan, grid=grid,
                         exposure_visible=visible_trace, metrics=metrics,
                         faces=faces, frame_positions=frame_positions)
        self.world = world
        self.attempts.append(log)
        if self.feedback and plan is not None:
            if plan.complete or not plan.goals:
                self.complete = True
            else:
                self.goals = plan.goals
        # With feedback off the runner keeps re-executing the same goal
        # until the attempt budget runs out: the agent has no signal that
        # anything is left, and its blind spots repeat.
        return log

    def finish(self) -> EpisodeLog:
        return EpisodeLog(config=self.cfg, attempts=self.attempts,
                          metrics=self.attempts[-1].metrics,
                          feedback=self.feedback)


def run_feedback_loop(scene: Scene, cfg=None, *, feedback=None, seed=None,
                      progress=None) -> EpisodeLog:
    """Run one closed-loop episode on a scene to completion.

    ``progress(stage, attempt)`` is an optional callback.
    """
    runner = EpisodeRunner(scene, cfg, feedback=feedback, seed=seed,
                           progress=progress)
    while not runner.done:
        runner.step_attempt()
    return runner.finish()
