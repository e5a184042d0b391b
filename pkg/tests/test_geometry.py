"""Mesh, camera, raycasting and 2D segment geometry."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dissectbench.errors import (
    BehindCameraError,
    DegenerateFaceError,
    DegenerateGoalError,
    MeshError,
)
from dissectbench.geometry import (
    Camera,
    DissectionGoal,
    TriMesh,
    eval_barycentric,
    eval_barycentric_batch,
    face_areas,
    face_components,
    face_normals,
    goal_frame,
    load_obj,
    make_grid_mesh,
    make_overhead_camera,
    point_segment_distance,
    raycast_pixel,
    raycast_pixel_near,
    raycast_pixels,
    save_obj,
    segments_intersect,
    segments_intersect_batch,
)

from conftest import brute_force_raycast, segments_intersect_shapely


class TestTriMesh:
    def test_grid_counts(self):
        m = make_grid_mesh(4, 5, 1e-3)
        assert m.n_vertices == 20
        assert m.n_faces == 2 * 3 * 4
        # Euler-style edge count for a triangulated grid.
        assert len(m.edges) == 4 * (5 - 1) + 5 * (4 - 1) + 3 * 4

    def test_empty_rejected(self):
        with pytest.raises(MeshError):
            TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int))

    def test_bad_index_rejected(self):
        with pytest.raises(MeshError):
            TriMesh(np.eye(3), [[0, 1, 5]])

    def test_repeated_vertex_rejected(self):
        with pytest.raises(MeshError):
            TriMesh(np.eye(3), [[0, 1, 1]])

    def test_degenerate_face_rejected(self):
        v = [[0, 0, 0], [1, 0, 0], [2, 0, 0]]  # collinear
        with pytest.raises(DegenerateFaceError):
            TriMesh(v, [[0, 1, 2]])

    def test_non_manifold_rejected(self):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]
        f = [[0, 1, 2], [0, 1, 3], [0, 1, 4]]
        with pytest.raises(MeshError):
            TriMesh(v, f)

    def test_adjacency_shares_an_edge(self):
        m = make_grid_mesh(3, 3, 1e-3)
        for (fa, fb), (i, j) in zip(m.face_adjacency, m.adjacency_edges):
            assert {i, j} <= set(m.faces[fa])
            assert {i, j} <= set(m.faces[fb])

    def test_slope_rotates_about_x(self):
        flat = make_grid_mesh(3, 3, 1e-3)
        tilted = make_grid_mesh(3, 3, 1e-3, slope_deg=30.0)
        assert np.allclose(flat.vertices[:, 0], tilted.vertices[:, 0])
        norm_flat = np.linalg.norm(flat.vertices, axis=1)
        norm_tilt = np.linalg.norm(tilted.vertices, axis=1)
        assert np.allclose(norm_flat, norm_tilt)

    def test_face_components_single(self):
        m = make_grid_mesh(3, 4, 1e-3)
        labels = face_components(m)
        assert (labels == 0).all()

    def test_face_components_vs_networkx(self):
        import networkx as nx
        m = make_grid_mesh(4, 4, 1e-3)
        keep = m.face_adjacency[::2]
        labels = face_components(m, adjacency=keep)
        g = nx.Graph()
        g.add_nodes_from(range(m.n_faces))
        g.add_edges_from(keep.tolist())
        n_ref = nx.number_connected_components(g)
        assert labels.max() + 1 == n_ref

    def test_obj_round_trip(self, tmp_path):
        m = make_grid_mesh(3, 3, 1e-3, slope_deg=15.0)
        path = tmp_path / "mesh.obj"
        save_obj(path, m)
        back = load_obj(path)
        assert np.allclose(back.vertices, m.vertices, atol=1e-9)
        assert (back.faces == m.faces).all()


class TestCamera:
    def test_overhead_center_and_forward(self):
        cam = make_overhead_camera(distance=0.25)
        assert np.allclose(cam.center, [0, 0, 0.25])
        assert np.allclose(cam.forward, [0, 0, -1])

    def test_tilt_keeps_distance(self):
        cam = make_overhead_camera(distance=0.3, tilt_deg=25.0)
        assert np.isclose(np.linalg.norm(cam.center), 0.3)
        # Still aimed at the origin.
        assert np.allclose(cam.project([0.0, 0.0, 0.0]),
                           [cam.cx, cam.cy], atol=1e-9)

    def test_project_pixel_ray_round_trip(self):
        cam = make_overhead_camera(distance=0.25, tilt_deg=10.0)
        for px in ([320, 240], [100, 50], [600, 400]):
            origin, d = cam.pixel_ray(px)
            p = origin + 0.2 * d
            assert np.allclose(cam.project(p), px, atol=1e-9)

    def test_behind_camera_raises(self):
        cam = make_overhead_camera(distance=0.25)
        with pytest.raises(BehindCameraError):
            cam.project([0.0, 0.0, 0.5])

    def test_project_with_validity_flags(self):
        cam = make_overhead_camera(distance=0.25)
        uv, ok = cam.project_with_validity([[0, 0, 0], [0, 0, 0.5]])
        assert ok.tolist() == [True, False]

    def test_in_frame_half_open(self):
        cam = make_overhead_camera(distance=0.25)
        px = [[0, 0], [639.999, 479.999], [640, 0], [0, 480], [-0.001, 5]]
        assert cam.in_frame(px).tolist() == [True, True, False, False, False]

    def test_non_orthonormal_rejected(self):
        mv = np.eye(4)
        mv[0, 0] = 2.0
        with pytest.raises(ValueError):
            Camera(mv, fx=100, fy=100, cx=10, cy=10, width=20, height=20)


class TestRaycast:
    def test_project_raycast_identity(self, camera, small_mesh):
        hit = raycast_pixel(camera, small_mesh, small_mesh.vertices, [320, 240])
        assert hit is not None
        p = eval_barycentric(small_mesh, small_mesh.vertices, hit)
        assert np.allclose(camera.project(p), [320, 240], atol=1e-9)

    def test_miss_returns_none(self, camera, small_mesh):
        assert raycast_pixel(camera, small_mesh, small_mesh.vertices,
                             [5, 5]) is None

    def test_matches_brute_force(self, tilted_camera):
        mesh = make_grid_mesh(7, 7, 2.5e-3, slope_deg=-15.0)
        rng = np.random.default_rng(0)
        pixels = rng.uniform([150, 100], [490, 380], size=(60, 2))
        faces, _, _ = raycast_pixels(tilted_camera, mesh, mesh.vertices, pixels)
        for px, f in zip(pixels, faces):
            ref = brute_force_raycast(tilted_camera, mesh, mesh.vertices, px)
            assert f == ref

    def test_batch_matches_single(self, camera, small_mesh):
        rng = np.random.default_rng(1)
        pixels = rng.uniform([200, 150], [440, 330], size=(40, 2))
        faces, bary, depth = raycast_pixels(camera, small_mesh,
                                            small_mesh.vertices, pixels)
        for px, f, b, d in zip(pixels, faces, bary, depth):
            hit = raycast_pixel(camera, small_mesh, small_mesh.vertices, px)
            if hit is None:
                assert f == -1
            else:
                assert f == hit.face_index
                assert np.allclose(b, hit.barycentric, atol=1e-9)
                assert np.isclose(d, hit.depth, atol=1e-12)

    def test_degenerate_face_not_hittable(self, camera):
        mesh = make_grid_mesh(3, 3, 2.5e-3)
        pos = mesh.vertices.copy()
        hit0 = raycast_pixel(camera, mesh, pos, [320, 240])
        assert hit0 is not None
        tri = mesh.faces[hit0.face_index]
        # Collapse the hit face to a sliver at the current positions.
        pos[tri] = pos[tri[0]]
        hit1 = raycast_pixel(camera, mesh, pos, [320, 240])
        assert hit1 is None or hit1.face_index != hit0.face_index

    def test_near_search_recovers(self, camera, small_mesh):
        # A pixel just off the silhouette finds a nearby on-surface pixel.
        hit, px = raycast_pixel_near(camera, small_mesh, small_mesh.vertices,
                                     [270, 240], radius=40, step=5)
        assert hit is not None
        assert raycast_pixel(camera, small_mesh, small_mesh.vertices,
                             px) is not None

    def test_face_subset_global_indices(self, camera, small_mesh):
        pixels = np.array([[320.0, 240.0]])
        full, _, _ = raycast_pixels(camera, small_mesh, small_mesh.vertices,
                                    pixels)
        subset = np.arange(small_mesh.n_faces)[::2]
        part, _, _ = raycast_pixels(camera, small_mesh, small_mesh.vertices,
                                    pixels, face_subset=subset)
        assert part[0] in set(subset.tolist()) | {-1}
        if full[0] in subset:
            assert part[0] == full[0]

    def test_eval_barycentric_batch_matches_single(self, camera, small_mesh):
        pixels = np.array([[320.0, 240.0], [300.0, 220.0]])
        faces, bary, _ = raycast_pixels(camera, small_mesh,
                                        small_mesh.vertices, pixels)
        pts = eval_barycentric_batch(small_mesh.faces, small_mesh.vertices,
                                     faces, bary)
        for k in range(len(pixels)):
            hit = raycast_pixel(camera, small_mesh, small_mesh.vertices,
                                pixels[k])
            ref = eval_barycentric(small_mesh, small_mesh.vertices, hit)
            assert np.allclose(pts[k], ref, atol=1e-12)


coord = st.floats(min_value=-10, max_value=10, allow_nan=False,
                  allow_infinity=False, width=32).map(lambda x: round(x, 4))
point = st.tuples(coord, coord)


class TestSegments:
    @settings(max_examples=300, deadline=None)
    @given(point, point, point, point)
    def test_intersection_matches_shapely(self, a0, a1, b0, b1):
        ours = segments_intersect(np.array(a0), np.array(a1),
                                  np.array(b0), np.array(b1))
        ref = segments_intersect_shapely(a0, a1, b0, b1)
        assert ours == ref

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        seg_a = rng.uniform(-5, 5, size=(12, 2, 2))
        seg_b = rng.uniform(-5, 5, size=(9, 2, 2))
        mat = segments_intersect_batch(seg_a, seg_b)
        for i in range(len(seg_a)):
            for j in range(len(seg_b)):
                assert mat[i, j] == segments_intersect(
                    seg_a[i, 0], seg_a[i, 1], seg_b[j, 0], seg_b[j, 1])

    def test_touching_counts(self):
        assert segments_intersect(np.array([0, 0]), np.array([1, 0]),
                                  np.array([1, 0]), np.array([2, 1]))

    def test_collinear_overlap_counts(self):
        assert segments_intersect(np.array([0, 0]), np.array([2, 0]),
                                  np.array([1, 0]), np.array([3, 0]))

    @settings(max_examples=200, deadline=None)
    @given(point, point, point)
    def test_point_segment_distance_vs_shapely(self, p, s0, s1):
        from shapely.geometry import LineString, Point
        d = point_segment_distance(np.array([p]), np.array(s0),
                                   np.array(s1))[0]
        if np.allclose(s0, s1):
            ref = Point(s0).distance(Point(p))
        else:
            ref = LineString([s0, s1]).distance(Point(p))
        assert np.isclose(d, ref, atol=1e-6)


class TestGoal:
    def test_frame_orthonormal(self):
        n, m = goal_frame([[0, 0], [10, 5]])
        assert np.isclose(np.linalg.norm(n), 1)
        assert np.isclose(np.linalg.norm(m), 1)
        assert np.isclose(n @ m, 0)

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateGoalError):
            DissectionGoal([[5, 5], [5, 5]])

    def test_sharp_turn_rejected(self):
        with pytest.raises(DegenerateGoalError):
            DissectionGoal([[0, 0], [10, 0], [0, 1]])

    def test_gentle_polyline_accepted(self):
        g = DissectionGoal([[0, 0], [10, 1], [20, 3]])
        assert g.segments.shape == (2, 2, 2)
        assert np.isclose(g.length,
                          np.hypot(10, 1) + np.hypot(10, 2))
        assert np.allclose(g.midpoint, [10, 1.5])

    def test_face_normals_unit(self, small_mesh):
        n = face_normals(small_mesh.faces, small_mesh.vertices)
        assert np.allclose(np.linalg.norm(n, axis=1), 1.0)

    def test_face_areas_grid(self):
        m = make_grid_mesh(3, 3, 2e-3)
        assert np.allclose(face_areas(m.faces, m.vertices), 0.5 * 4e-6)
