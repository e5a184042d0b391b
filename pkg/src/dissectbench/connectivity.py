"""Tissue-connectivity estimation from keypoint-pair elongation, plus the
detection metrics used to grade it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientGridError, MetricUndefinedError
from .geometry import Camera, DissectionGoal

DEFAULT_TAU = 3.0
DEFAULT_SPACING = 12.0
DEFAULT_EXTENT = 36.0


@dataclass
class KeypointGrid:
    """Uniform keypoint grid aligned with the goal frame.

    Rows run along m_hat (the goal direction), columns step along n_hat.
    Edges are 4-connected neighbor pairs; diagonals optional.
    """

    keypoints: np.ndarray  # (N_k, 2) pixels at t_d
    edges: np.ndarray      # (E, 2) index pairs
    spacing: float
    extent: float
    shape: tuple           # (n_rows_across, n_cols_along)


@dataclass
class ElongationReport:
    edges: np.ndarray             # (E, 2) keypoint index pairs evaluated
    rho: np.ndarray               # (E,)
    connected: np.ndarray         # (E,) bool; rho < tau
    tau: float
    excluded: np.ndarray          # (X, 2) edges dropped for invalid tracking

    @property
    def connected_edges(self):
        return self.edges[self.connected]

    @property
    def disconnected_edges(self):
        return self.edges[~self.connected]


def sample_keypoint_grid(goal: DissectionGoal, camera: Camera,
                         spacing=DEFAULT_SPACING, extent=DEFAULT_EXTENT,
                         diagonals=False) -> KeypointGrid:
    """Grid centered on the goal: rows at half-spacing n_hat offsets so no
    row sits on the cut line itself, columns marching along m_hat over the
    goal's length. Rows that would leave the image are dropped whole so the
    grid stays uniform."""
    if spacing < 1:
        raise ValueError("spacing must be >= 1 px")
    if extent < spacing:
        raise ValueError("extent must be >= spacing")
    n, m = goal.n_hat, goal.m_hat
    mid = goal.midpoint
    half_len = goal.length / 2
    k_along = int(np.floor(half_len / spacing))
    k_across = int(np.floor(extent / spacing + 0.5))
    along = np.arange(-k_along, k_along + 1) * spacing
    across = (np.arange(-k_across, k_across) + 0.5) * spacing

    rows = []
    offsets = []
    for b in across:
        pts = mid + np.outer(along, m) + b * n
        if camera.in_frame(pts).all():
            rows.append(pts)
            offsets.append(b)
    if len(rows) < 2:
        raise InsufficientGridError(
            "goal too close to the image border for a keypoint grid")

    n_rows, n_cols = len(rows), len(along)
    pts = np.concatenate(rows)
    edges = []
    for r in range(n_rows):
        for c in range(n_cols):
            i = r * n_cols + c
            if c + 1 < n_cols:
                edges.append((i, i + 1))
            if r + 1 < n_rows:
                edges.append((i, i + n_cols))
            if diagonals and r + 1 < n_rows:
                if c + 1 < n_cols:
                    edges.append((i, i + n_cols + 1))
                if c > 0:
                    edges.append((i, i + n_cols - 1))
    return KeypointGrid(keypoints=pts, edges=np.asarray(edges, dtype=np.int64),
                        spacing=float(spacing), extent=float(extent),
                        shape=(n_rows, n_cols))


def elongation_ratios(grid: KeypointGrid, k_end, valid=None):
    """Per-edge length ratio between the tracked end frame and t_d.

    k_end: (N_k, 2) tracked pixels, or (T, N_k, 2) to take the max ratio over
    the trajectory. Edges with an invalid endpoint are excluded and returned
    separately: (rho, edges, excluded_edges).
    """
    k0 = grid.keypoints
    e = grid.edges
    base = np.linalg.norm(k0[e[:, 0]] - k0[e[:, 1]], axis=1)
    if (base <= 0).any():
        raise ValueError("zero-length grid edge; grid is malformed")
    kt = np.asarray(k_end, dtype=np.float64)
    if kt.ndim == 2:
        kt = kt[None]
    cur = np.linalg.norm(kt[:, e[:, 0]] - kt[:, e[:, 1]], axis=2)  # (T, E)
    rho = cur.max(axis=0) / base
    if valid is None:
        keep = np.ones(len(e), dtype=bool)
    else:
        v = np.asarray(valid, dtype=bool)
        keep = v[e[:, 0]] & v[e[:, 1]]
    return rho[keep], e[keep], e[~keep]


def classify_edges(rho, edges, tau=DEFAULT_TAU, excluded=None) -> ElongationReport:
    """Partition edges by the elongation threshold; rho >= tau means the
    edge has separated (strict boundary goes to disconnected)."""
    if tau <= 1:
        raise ValueError("tau must be > 1")
    rho = np.asarray(rho, dtype=np.float64)
    connected = rho < tau
    return ElongationReport(
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2), rho=rho,
        connected=connected, tau=float(tau),
        excluded=np.zeros((0, 2), np.int64) if excluded is None
        else np.asarray(excluded, dtype=np.int64).reshape(-1, 2))


def estimate_connectivity(grid: KeypointGrid, tracked_pixels, tau=DEFAULT_TAU,
                          valid=None, mode="max") -> ElongationReport:
    """Grid + tracked trajectory -> elongation report.

    mode "max" takes the peak ratio over all frames (captures transient
    stretch); "final" uses only the last frame.
    """
    kt = np.asarray(tracked_pixels, dtype=np.float64)
    if mode == "final" and kt.ndim == 3:
        kt = kt[-1]
    rho, edges, excluded = elongation_ratios(grid, kt, valid=valid)
    return classify_edges(rho, edges, tau=tau, excluded=excluded)


def detection_accuracy(report: ElongationReport, truth_disconnected) -> float:
    """Percent of evaluated edges whose predicted separation state matches
    the ground-truth labels (dict or set of sorted edge tuples)."""
    truth = {tuple(sorted(e)) for e in truth_disconnected}
    n_total = len(report.edges)
    if n_total == 0:
        raise MetricUndefinedError("no edges evaluated")
    correct = 0
    for e, conn in zip(report.edges.tolist(), report.connected):
        is_cut = tuple(sorted(e)) in truth
        if is_cut == (not conn):
            correct += 1
    return 100.0 * correct / n_total


def connectivity_estimation_accuracy(n_pred, n_gt):
    """Predicted dissected-edge count over the ground-truth count, percent.

    Returns (accuracy, over_predicted flag)."""
    if n_gt <= 0:
        raise MetricUndefinedError("no ground-truth dissected edges")
    acc = 100.0 * n_pred / n_gt
    return acc, acc > 100.0


def export_report(report: ElongationReport, grid: KeypointGrid, path):
    with open(path, "w") as fh:
        fh.write("i\tj\tu0\tv0\tu1\tv1\trho\tlabel\n")
        for (i, j), rho, conn in zip(report.edges.tolist(), report.rho,
                                     report.connected):
            a, b = grid.keypoints[i], grid.keypoints[j]
            lbl = "connected" if conn else "disconnected"
            fh.write(f"{i}\t{j}\t{a[0]:.2f}\t{a[1]:.2f}"
                     f"\t{b[0]:.2f}\t{b[1]:.2f}\t{rho:.5f}\t{lbl}\n")
