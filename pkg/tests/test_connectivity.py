"""Keypoint grid geometry, elongation classification, detection metrics."""

import numpy as np
import pytest

from dissectbench.connectivity import (
    classify_edges,
    connectivity_estimation_accuracy,
    detection_accuracy,
    elongation_ratios,
    estimate_connectivity,
    export_report,
    sample_keypoint_grid,
)
from dissectbench.errors import InsufficientGridError, MetricUndefinedError
from dissectbench.geometry import DissectionGoal, make_overhead_camera


def centered_goal(camera, half_len=120):
    cx, cy = camera.width / 2, camera.height / 2
    return DissectionGoal(np.array([[cx - half_len, cy],
                                    [cx + half_len, cy]], dtype=np.int64))


class TestGridGeometry:
    def test_rows_offset_off_the_goal_line(self):
        camera = make_overhead_camera(distance=0.25)
        goal = centered_goal(camera)
        grid = sample_keypoint_grid(goal, camera, spacing=12.0, extent=36.0)
        n_rows, n_cols = grid.shape
        assert len(grid.keypoints) == n_rows * n_cols
        # No keypoint sits on the goal line: row offsets are half-integer
        # multiples of the spacing along n_hat.
        offs = (grid.keypoints - goal.midpoint) @ goal.n_hat
        frac = offs / grid.spacing
        assert np.abs(frac - np.round(frac)).min() > 0.49
        assert np.abs(np.abs(offs).min() - grid.spacing / 2) < 1e-9

    def test_uniform_spacing(self):
        camera = make_overhead_camera(distance=0.25)
        grid = sample_keypoint_grid(centered_goal(camera), camera,
                                    spacing=10.0, extent=30.0)
        n_rows, n_cols = grid.shape
        pts = grid.keypoints.reshape(n_rows, n_cols, 2)
        d_along = np.linalg.norm(np.diff(pts, axis=1), axis=2)
        d_across = np.linalg.norm(np.diff(pts, axis=0), axis=2)
        assert np.allclose(d_along, 10.0, atol=1e-9)
        assert np.allclose(d_across, 10.0, atol=1e-9)

    def test_edge_count_formula(self):
        camera = make_overhead_camera(distance=0.25)
        grid = sample_keypoint_grid(centered_goal(camera), camera,
                                    spacing=12.0, extent=36.0)
        r, c = grid.shape
        assert len(grid.edges) == r * (c - 1) + (r - 1) * c

    def test_diagonals_add_edges(self):
        camera = make_overhead_camera(distance=0.25)
        goal = centered_goal(camera)
        plain = sample_keypoint_grid(goal, camera)
        diag = sample_keypoint_grid(goal, camera, diagonals=True)
        r, c = plain.shape
        assert len(diag.edges) == len(plain.edges) + 2 * (r - 1) * (c - 1)

    def test_all_keypoints_in_frame(self):
        camera = make_overhead_camera(distance=0.25)
        goal = DissectionGoal(np.array([[60, 30], [300, 30]]))
        grid = sample_keypoint_grid(goal, camera, spacing=12.0, extent=48.0)
        assert camera.in_frame(grid.keypoints).all()

    def test_border_goal_raises(self):
        camera = make_overhead_camera(distance=0.25)
        # Goal running off the left image edge: every row contains
        # out-of-frame keypoints, so no usable grid exists.
        goal = DissectionGoal(np.array([[-80, 240], [200, 240]]))
        with pytest.raises(InsufficientGridError):
            sample_keypoint_grid(goal, camera, spacing=12.0, extent=36.0)

    def test_parameter_validation(self):
        camera = make_overhead_camera(distance=0.25)
        goal = centered_goal(camera)
        with pytest.raises(ValueError):
            sample_keypoint_grid(goal, camera, spacing=0.5)
        with pytest.raises(ValueError):
            sample_keypoint_grid(goal, camera, spacing=12.0, extent=6.0)


def tiny_grid():
    """2x3 grid with unit spacing for hand-checkable ratio tests."""
    camera = make_overhead_camera(distance=0.25)
    goal = centered_goal(camera, half_len=14)
    return sample_keypoint_grid(goal, camera, spacing=12.0, extent=12.0)


class TestElongation:
    def test_identity_tracking_gives_unit_ratios(self):
        grid = tiny_grid()
        rho, edges, excluded = elongation_ratios(grid, grid.keypoints)
        assert np.allclose(rho, 1.0, atol=1e-12)
        assert len(edges) == len(grid.edges)
        assert len(excluded) == 0

    def test_hand_computed_ratio(self):
        grid = tiny_grid()
        k = grid.keypoints.copy()
        i, j = grid.edges[0]
        # Stretch one edge by moving a single endpoint away.
        direction = (k[j] - k[i]) / np.linalg.norm(k[j] - k[i])
        base = np.linalg.norm(k[j] - k[i])
        k[j] = k[i] + 5.0 * base * direction
        rho, edges, _ = elongation_ratios(grid, k)
        for e, r in zip(edges.tolist(), rho):
            if tuple(e) == (int(i), int(j)):
                assert abs(r - 5.0) < 1e-9

    def test_max_over_trajectory(self):
        grid = tiny_grid()
        k0 = grid.keypoints
        stretched = k0 + (k0 - k0.mean(axis=0)) * 3.0  # uniform 4x
        traj = np.stack([k0, stretched, k0])
        rho, _, _ = elongation_ratios(grid, traj)
        assert np.allclose(rho, 4.0, atol=1e-9)
        # mode="final" sees only the relaxed last frame.
        rep = estimate_connectivity(grid, traj, tau=3.0, mode="final")
        assert rep.connected.all()
        rep_max = estimate_connectivity(grid, traj, tau=3.0, mode="max")
        assert not rep_max.connected.any()

    def test_invalid_endpoints_excluded(self):
        grid = tiny_grid()
        valid = np.ones(len(grid.keypoints), bool)
        valid[0] = False
        rho, edges, excluded = elongation_ratios(grid, grid.keypoints,
                                                 valid=valid)
        assert all(0 not in e for e in edges.tolist())
        assert all(0 in e for e in excluded.tolist())
        assert len(edges) + len(excluded) == len(grid.edges)

    def test_zero_length_edge_rejected(self):
        grid = tiny_grid()
        grid.keypoints[1] = grid.keypoints[0]
        with pytest.raises(ValueError):
            elongation_ratios(grid, grid.keypoints)


class TestClassification:
    def test_threshold_boundary(self):
        edges = np.array([[0, 1], [1, 2], [2, 3]])
        rho = np.array([2.999999, 3.0, 3.000001])
        rep = classify_edges(rho, edges, tau=3.0)
        assert rep.connected.tolist() == [True, False, False]
        assert rep.connected_edges.tolist() == [[0, 1]]
        assert rep.disconnected_edges.tolist() == [[1, 2], [2, 3]]

    def test_tau_validation(self):
        with pytest.raises(ValueError):
            classify_edges(np.array([1.0]), np.array([[0, 1]]), tau=1.0)


class TestMetrics:
    def test_detection_accuracy_arithmetic(self):
        edges = np.array([[0, 1], [1, 2], [2, 3], [3, 4]])
        rho = np.array([1.0, 9.0, 9.0, 1.0])
        rep = classify_edges(rho, edges, tau=3.0)
        truth = {(1, 2), (3, 4)}  # one hit, one miss, one false alarm
        assert abs(detection_accuracy(rep, truth) - 50.0) < 1e-12
        assert abs(detection_accuracy(rep, {(1, 2), (2, 3)}) - 100.0) < 1e-12

    def test_detection_accuracy_edge_order_invariant(self):
        edges = np.array([[0, 1], [1, 2]])
        rep = classify_edges(np.array([9.0, 1.0]), edges, tau=3.0)
        assert detection_accuracy(rep, {(1, 0)}) == 100.0

    def test_empty_report_undefined(self):
        rep = classify_edges(np.zeros(0), np.zeros((0, 2), int), tau=3.0)
        with pytest.raises(MetricUndefinedError):
            detection_accuracy(rep, set())

    def test_estimation_accuracy(self):
        acc, over = connectivity_estimation_accuracy(8, 10)
        assert abs(acc - 80.0) < 1e-12 and not over
        acc, over = connectivity_estimation_accuracy(12, 10)
        assert abs(acc - 120.0) < 1e-12 and over
        with pytest.raises(MetricUndefinedError):
            connectivity_estimation_accuracy(5, 0)


def test_export_report_format(tmp_path):
    grid = tiny_grid()
    rep = estimate_connectivity(grid, grid.keypoints, tau=3.0)
    out = tmp_path / "report.tsv"
    export_report(rep, grid, out)
    lines = out.read_text().strip().split("\n")
    assert lines[0].split("\t") == ["i", "j", "u0", "v0", "u1", "v1",
                                    "rho", "label"]
    assert len(lines) == 1 + len(rep.edges)
    assert all(line.endswith("connected") for line in lines[1:])
