"""Recovery planning: residual uncut edges -> fewest corrective cut segments.

The uncut set holds estimated-connected keypoint edges that still intersect
the dissection goal. Candidate cut segments are sampled near those edges and
a greedy minimum-set-cover pass picks the next dissection targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PlannerInfeasibleError, SamplingStarvedError
from .geometry import (
    DissectionGoal,
    point_segment_distance,
    segments_intersect_batch,
)

DEFAULT_SEGMENT_LENGTH = 60.0  # px
DEFAULT_CENTER_RADIUS = 25.0   # px
DEFAULT_N_CENTERS = 200
DEFAULT_ANGLE_BINS = 6


@dataclass
class UncutSet:
    """Connected keypoint edges (as pixel segments at T_end) that still
    cross the goal."""

    segments: np.ndarray    # (U, 2, 2) endpoint pixels
    edge_indices: np.ndarray  # (U, 2) keypoint index pairs

    def __len__(self):
        return len(self.segments)


@dataclass
class CandidateSegment:
    center: np.ndarray  # (2,) px
    angle: float        # radians in [0, pi)
    length: float       # px
    injected: bool = False

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.angle = float(self.angle) % np.pi

    @property
    def endpoints(self):
        d = 0.5 * self.length * np.array([np.cos(self.angle), np.sin(self.angle)])
        return np.stack([self.center - d, self.center + d])


def extract_uncut_set(report, keypoints_end, goal_segments,
                      keypoints_rest=None) -> UncutSet:
    """Connected edges relevant to the goal, as segments at T_end.

    An edge is relevant when its segment intersects a goal segment either
    at T_end or at rest. The rest-frame test matters once a partially cut
    flap swings away: the surviving attachment is carried far from the
    goal line in the image, yet it is exactly the tissue the goal asked to
    divide, and its T_end segment marks where to cut it now.
    """
    kp = np.asarray(keypoints_end, dtype=np.float64)
    goal_seg = np.asarray(goal_segments, dtype=np.float64).reshape(-1, 2, 2)
    conn = report.connected_edges
    if len(conn) == 0:
        return UncutSet(np.zeros((0, 2, 2)), np.zeros((0, 2), np.int64))
    seg = np.stack([kp[conn[:, 0]], kp[conn[:, 1]]], axis=1)
    hits = segments_intersect_batch(seg, goal_seg).any(axis=1)
    if keypoints_rest is not None:
        kr = np.asarray(keypoints_rest, dtype=np.float64)
        seg0 = np.stack([kr[conn[:, 0]], kr[conn[:, 1]]], axis=1)
        hits |= segments_intersect_batch(seg0, goal_seg).any(axis=1)
    return UncutSet(segments=seg[hits], edge_indices=conn[hits])


def sample_candidates(uncut: UncutSet, length=DEFAULT_SEGMENT_LENGTH,
                      center_radius=DEFAULT_CENTER_RADIUS,
                      n_centers=DEFAULT_N_CENTERS,
                      angle_bins=DEFAULT_ANGLE_BINS, seed=0):
    """Rejection-sample candidate centers within ``center_radius`` of some
    uncut edge; angles come from ``angle_bins`` uniform bins over [0, pi)."""
    if len(uncut) == 0:
        raise ValueError("cannot sample candidates for an empty uncut set")
    if length <= 0 or center_radius <= 0:
        raise ValueError("length and center_radius must be positive")
    rng = np.random.default_rng(seed)
    segs = uncut.segments
    lo = segs.reshape(-1, 2).min(axis=0) - center_radius
    hi = segs.reshape(-1, 2).max(axis=0) + center_radius

    centers = []
    budget = 200 * n_centers
    while len(centers) < n_centers and budget > 0:
        n_try = min(budget, 4 * (n_centers - len(centers)))
        budget -= n_try
        pts = rng.uniform(lo, hi, size=(n_try, 2))
        dmin = np.full(n_try, np.inf)
        for s in segs:
            dmin = np.minimum(dmin, point_segment_distance(pts, s[0], s[1]))
        for p in pts[dmin < center_radius]:
            centers.append(p)
            if len(centers) >= n_centers:
                break
    if not centers:
        raise SamplingStarvedError(
            "no candidate centers accepted; center_radius too small")

    angles = np.arange(angle_bins) * np.pi / angle_bins
    return [CandidateSegment(center=c, angle=a, length=length)
            for c in centers for a in angles]


MIN_CROSS_ANGLE_DEG = 60.0


def _coverage_matrix(candidates, uncut: UncutSet, goal_segments=None,
                     min_cross_angle_deg=MIN_CROSS_ANGLE_DEG):
    """Candidate x edge crossing matrix.

    With ``goal_segments``, candidates covering an edge that still sits on
    the dissection line must themselves cross that line steeply: a
    corrective cut running parallel (or at a grazing angle) to the slit
    severs band edges beside it yet slides past the physical attachment,
    which hangs below the opened slit once the flap sags. Edges displaced
    off the line entirely (a flap dangling by one attachment) take plain
    segment crossings, since there is no slit to slide along out there.
    """
    cseg = np.stack([c.endpoints for c in candidates])
    cover = segments_intersect_batch(cseg, uncut.segments)
    if goal_segments is not None and len(uncut):
        gs = np.asarray(goal_segments, dtype=np.float64).reshape(-1, 2, 2)
        on_goal = segments_intersect_batch(uncut.segments, gs).any(axis=1)
        hits = segments_intersect_batch(cseg, gs)
        cd = cseg[:, 1] - cseg[:, 0]
        gd = gs[:, 1] - gs[:, 0]
        cn = np.linalg.norm(cd, axis=1, keepdims=True)
        gn = np.linalg.norm(gd, axis=1, keepdims=True)
        cosang = np.abs((cd / np.maximum(cn, 1e-12)) @
                        (gd / np.maximum(gn, 1e-12)).T)
        steep = cosang <= np.cos(np.deg2rad(min_cross_angle_deg)) + 1e-9
        ok = (hits & steep).any(axis=1)
        cover &= np.where(on_goal[None, :], ok[:, None], True)
    return cover


def _segment_crossing_point(seg_a, seg_b):
    """Intersection point of two 2D segments assumed to cross."""
    a0, a1 = np.asarray(seg_a, dtype=np.float64)
    b0, b1 = np.asarray(seg_b, dtype=np.float64)
    r = a1 - a0
    s = b1 - b0
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < 1e-12:
        return 0.5 * (a0 + a1)
    q = b0 - a0
    t = np.clip((q[0] * s[1] - q[1] * s[0]) / denom, 0.0, 1.0)
    return a0 + t * r


def greedy_select(uncut: UncutSet, candidates, augment=True,
                  goal_segments=None):
    """Greedy set cover: repeatedly take the candidate intersecting the most
    still-uncovered edges until all are covered.

    Ties break on higher total coverage, then lower candidate index. Edges
    no sampled candidate touches get an injected perpendicular candidate
    (termination guarantee): through the midpoint when unconstrained, or
    through the edge's goal-crossing point and perpendicular to the goal
    when ``goal_segments`` constrains coverage. Returns picks in order.
    """
    cands = list(candidates)
    cover = _coverage_matrix(cands, uncut, goal_segments) if cands else \
        np.zeros((0, len(uncut)), bool)

    uncovered_by_all = ~cover.any(axis=0) if len(cover) else \
        np.ones(len(uncut), bool)
    if augment and uncovered_by_all.any():
        gs = None if goal_segments is None else \
            np.asarray(goal_segments, dtype=np.float64).reshape(-1, 2, 2)
        extra = []
        for k in np.nonzero(uncovered_by_all)[0]:
            a, b = uncut.segments[k]
            mid = 0.5 * (a + b)
            ang = np.arctan2(b[1] - a[1], b[0] - a[0]) + np.pi / 2
            if gs is not None:
                crossing = segments_intersect_batch(
                    uncut.segments[k][None], gs)[0]
                hits = np.nonzero(crossing)[0]
                if len(hits):
                    g = gs[hits[0]]
                    mid = _segment_crossing_point(uncut.segments[k], g)
                    ang = np.arctan2(g[1, 1] - g[0, 1],
                                     g[1, 0] - g[0, 0]) + np.pi / 2
            extra.append(CandidateSegment(center=mid, angle=ang,
                                          length=max(8.0, np.linalg.norm(b - a)),
                                          injected=True))
        cands = cands + extra
        cover = _coverage_matrix(cands, uncut, goal_segments)

    remaining = np.ones(len(uncut), dtype=bool)
    total_cov = cover.sum(axis=1)
    picks = []
    while remaining.any():
        new_cov = (cover & remaining).sum(axis=1)
        best = int(np.lexsort((np.arange(len(cands)), -total_cov, -new_cov))[0])
        if new_cov[best] == 0:
            bad = np.nonzero(remaining)[0].tolist()
            raise PlannerInfeasibleError(
                f"uncoverable uncut edges {bad}", uncovered=bad)
        picks.append(cands[best])
        remaining &= ~cover[best]
    return picks


@dataclass
class RecoveryPlan:
    complete: bool
    goals: list = field(default_factory=list)       # DissectionGoal per pick
    uncut: UncutSet | None = None
    picks: list = field(default_factory=list)


def plan_recovery(report, keypoints_end, goal_segments, *,
                  keypoints_rest=None, candidate_transform=None,
                  segment_length=DEFAULT_SEGMENT_LENGTH,
                  center_radius=DEFAULT_CENTER_RADIUS,
                  n_centers=DEFAULT_N_CENTERS,
                  angle_bins=DEFAULT_ANGLE_BINS, seed=0) -> RecoveryPlan:
    """Complete when the uncut set is empty; otherwise the greedy picks
    wrapped as 2-point dissection goals, in selection order.

    ``candidate_transform`` maps the sampled candidate list to the list
    actually offered to the greedy pass; callers use it to clip candidates
    to what the tool can reach (a segment drawn over an already-open hole
    cuts nothing no matter how well it scores).
    """
    uncut = extract_uncut_set(report, keypoints_end, goal_segments,
                              keypoints_rest=keypoints_rest)
    if len(uncut) == 0:
        return RecoveryPlan(complete=True, uncut=uncut)
    cands = sample_candidates(uncut, length=segment_length,
                              center_radius=center_radius,
                              n_centers=n_centers, angle_bins=angle_bins,
                              seed=seed)
    if candidate_transform is not None:
        cands = candidate_transform(cands)
    picks = greedy_select(uncut, cands, goal_segments=goal_segments)
    goals = []
    for c in picks:
        pts = np.rint(c.endpoints).astype(np.int64)
        if (pts[0] == pts[1]).all():
            pts[1] += 1
        goals.append(DissectionGoal(pts))
    return RecoveryPlan(complete=False, goals=goals, uncut=uncut, picks=picks)
