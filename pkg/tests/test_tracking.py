"""Point trackers: anchor composition, noise model, export format."""

import numpy as np
import pytest

from dissectbench.geometry import (
    eval_barycentric_batch,
    make_grid_mesh,
    make_overhead_camera,
)
from dissectbench.sim import build_sim, step
from dissectbench.tracking import (
    export_tracks,
    ikt_track_synthetic,
    mbt_track,
    track_with_anchors,
)


def sheet_trajectory(n_steps=15):
    """Sagging pinned sheet: a deforming trajectory of SimModel states."""
    mesh = make_grid_mesh(7, 7, 2.5e-3)
    model = build_sim(mesh, gravity=(0.0, 0.0, -0.5), mass=1e-5,
                      pinned=np.arange(42, 49))
    traj = [model]
    for _ in range(n_steps):
        model = step(model)
        traj.append(model)
    return traj


def surface_pixels(camera, model, n=12, seed=0):
    """Query pixels guaranteed to hit the sheet: project random vertices."""
    rng = np.random.default_rng(seed)
    interior = np.array([r * 7 + c for r in range(1, 6) for c in range(1, 6)])
    idx = rng.choice(interior, size=n, replace=False)
    uv, _ = camera.project_with_validity(model.positions[idx])
    return uv + rng.uniform(-0.3, 0.3, size=uv.shape)


class TestMBT:
    def test_composition_reproduces_pixels(self):
        # Oracle: anchor -> barycentric -> project composed by hand must
        # reproduce the tracker's pixels on every frame to 1e-6 px.
        camera = make_overhead_camera(distance=0.25)
        traj = sheet_trajectory()
        px = surface_pixels(camera, traj[0])
        tracked = mbt_track(px, camera, traj)
        assert (tracked.anchor_faces >= 0).all()
        for t, model in enumerate(traj):
            pts = eval_barycentric_batch(model.mesh.faces, model.positions,
                                         tracked.anchor_faces,
                                         tracked.anchor_bary)
            uv, _ = camera.project_with_validity(pts)
            err = np.abs(uv - tracked.per_frame_pixels[t]).max()
            assert err < 1e-6

    def test_static_trajectory_keeps_queries(self):
        camera = make_overhead_camera(distance=0.25)
        traj = sheet_trajectory(0)
        px = surface_pixels(camera, traj[0])
        tracked = mbt_track(px, camera, traj)
        assert np.abs(tracked.frame_pixels - px).max() < 1e-6

    def test_missed_queries_flagged_stale(self):
        camera = make_overhead_camera(distance=0.25)
        traj = sheet_trajectory(2)
        px = np.array([[2.0, 2.0]])  # empty background corner
        tracked = mbt_track(px, camera, traj)
        assert tracked.stale[0]
        assert not tracked.validity[0]
        assert np.allclose(tracked.per_frame_pixels[:, 0], px[0])


class TestIKT:
    def test_zero_noise_is_exact(self):
        camera = make_overhead_camera(distance=0.25)
        traj = sheet_trajectory()
        frames = [(m.mesh, m.positions) for m in traj]
        px = surface_pixels(camera, traj[0])
        clean = track_with_anchors(px, camera, frames)
        ikt = ikt_track_synthetic(px, frames, camera, noise_std=0.0)
        assert (ikt.per_frame_pixels == clean.per_frame_pixels).all()

    def test_noise_statistics(self):
        camera = make_overhead_camera(distance=0.25)
        traj = sheet_trajectory(3)
        frames = [(m.mesh, m.positions) for m in traj]
        px = surface_pixels(camera, traj[0], n=25)
        clean = track_with_anchors(px, camera, frames)
        sigma = 2.0
        devs = []
        for seed in range(40):
            noisy = ikt_track_synthetic(px, frames, camera,
                                        noise_std=sigma, seed=seed)
            # Query frame stays noise free.
            assert (noisy.per_frame_pixels[0] == clean.per_frame_pixels[0]).all()
            devs.append(noisy.per_frame_pixels[1:] - clean.per_frame_pixels[1:])
        devs = np.concatenate([d.ravel() for d in devs])
        assert abs(devs.mean()) < 0.05
        assert abs(devs.std() - sigma) < 0.05

    def test_drift_accumulates_linearly(self):
        camera = make_overhead_camera(distance=0.25)
        traj = sheet_trajectory(6)
        frames = [(m.mesh, m.positions) for m in traj]
        px = surface_pixels(camera, traj[0], n=5)
        clean = track_with_anchors(px, camera, frames)
        d = 0.5
        drifted = ikt_track_synthetic(px, frames, camera, noise_std=0.0,
                                      drift=d, seed=3)
        offs = drifted.per_frame_pixels - clean.per_frame_pixels
        mags = np.linalg.norm(offs, axis=2)  # (T, P)
        for t in range(1, len(frames)):
            assert np.allclose(mags[t], d * t, atol=1e-9)

    def test_determinism_per_seed(self):
        camera = make_overhead_camera(distance=0.25)
        traj = sheet_trajectory(3)
        frames = [(m.mesh, m.positions) for m in traj]
        px = surface_pixels(camera, traj[0])
        a = ikt_track_synthetic(px, frames, camera, noise_std=1.5, seed=9)
        b = ikt_track_synthetic(px, frames, camera, noise_std=1.5, seed=9)
        c = ikt_track_synthetic(px, frames, camera, noise_std=1.5, seed=10)
        assert (a.per_frame_pixels == b.per_frame_pixels).all()
        assert (a.per_frame_pixels != c.per_frame_pixels).any()

    def test_negative_noise_rejected(self):
        camera = make_overhead_camera(distance=0.25)
        traj = sheet_trajectory(1)
        frames = [(m.mesh, m.positions) for m in traj]
        with pytest.raises(ValueError):
            ikt_track_synthetic(np.array([[320.0, 240.0]]), frames, camera,
                                noise_std=-1.0)


def test_export_tracks_round_trip(tmp_path):
    camera = make_overhead_camera(distance=0.25)
    traj = sheet_trajectory(4)
    px = surface_pixels(camera, traj[0], n=6)
    tracked = mbt_track(px, camera, traj)
    out = tmp_path / "tracks.tsv"
    export_tracks(tracked, out)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "frame\tpoint\tu\tv\tvalid"
    T, P = tracked.per_frame_valid.shape
    assert len(lines) == 1 + T * P
    t, p, u, v, ok = lines[1 + 2 * P + 3].split("\t")
    assert (int(t), int(p)) == (2, 3)
    assert abs(float(u) - tracked.per_frame_pixels[2, 3, 0]) < 5e-4
    assert int(ok) == int(tracked.per_frame_valid[2, 3])
