"""Point trackers: model-based tracking through the XPBD replica, and a
synthetic ground-truth keypoint tracker with configurable pixel noise that
stands in for appearance-based trackers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, TriMesh, eval_barycentric_batch, raycast_pixels


@dataclass
class TrackedPointSet:
    """Tracking result over [t_d, t_e] for a fixed query set."""

    query_pixels: np.ndarray      # (P, 2) pixels at the query frame
    anchor_faces: np.ndarray      # (P,) raycast face per point, -1 = missed
    anchor_bary: np.ndarray       # (P, 3)
    frame_pixels: np.ndarray      # (P, 2) pixels at the final frame
    validity: np.ndarray          # (P,) bool; invalid points keep last pixel
    stale: np.ndarray             # (P,) bool (anchor unusable)
    per_frame_pixels: np.ndarray  # (T, P, 2)
    per_frame_valid: np.ndarray   # (T, P)


def _track_frames(camera, anchor_faces, anchor_bary, frames):
    """Evaluate anchors on every (mesh, positions) frame and project."""
    n_p = len(anchor_faces)
    ok_anchor = anchor_faces >= 0
    pix = np.zeros((len(frames), n_p, 2))
    valid = np.zeros((len(frames), n_p), dtype=bool)
    for t, (mesh, positions) in enumerate(frames):
        usable = ok_anchor & (anchor_faces < mesh.n_faces)
        if usable.any():
            pts = eval_barycentric_batch(
                mesh.faces, np.asarray(positions),
                anchor_faces[usable], anchor_bary[usable])
            uv, infront = camera.project_with_validity(pts)
            inframe = camera.in_frame(uv)
            pix[t, usable] = uv
            valid[t, usable] = infront & inframe
    # Carry the last valid pixel for points that dropped out mid-way.
    for t in range(1, len(frames)):
        lost = ~valid[t] & valid[t - 1]
        pix[t, lost] = pix[t - 1, lost]
    return pix, valid


def mbt_track(points, camera: Camera, model_trajectory) -> TrackedPointSet:
    """Model-based tracking: raycast the queries onto the first model state,
    keep the barycentric anchors, evaluate them on each later state, and
    project back through the camera.

    model_trajectory is a sequence of SimModel states; the first one is the
    query frame.
    """
    frames = [(m.mesh, m.positions) for m in model_trajectory]
    return track_with_anchors(points, camera, frames)


def track_with_anchors(points, camera: Camera, frames) -> TrackedPointSet:
    px = np.atleast_2d(np.asarray(points, dtype=np.float64))
    mesh0, pos0 = frames[0]
    faces, bary, _ = raycast_pixels(camera, mesh0, pos0, px)
    pix, valid = _track_frames(camera, faces, bary, frames)
    missed = faces < 0
    pix[:, missed] = px[missed]
    final = pix[-1]
    stale = missed.copy()
    return TrackedPointSet(
        query_pixels=px, anchor_faces=faces, anchor_bary=bary,
        frame_pixels=final, validity=valid[-1] & ~stale, stale=stale,
        per_frame_pixels=pix, per_frame_valid=valid)


def ikt_track_synthetic(points, world_frames, camera: Camera,
                        noise_std=1.0, seed=0, drift=0.0) -> TrackedPointSet:
    """Ground-truth keypoint tracker over the true world trajectory.

    world_frames is a sequence of (TriMesh, positions) snapshots of the real
    world; noise is zero-mean Gaussian per frame and pixel axis, drift adds a
    constant per-frame bias magnitude in a seeded random direction.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    result = track_with_anchors(points, camera, world_frames)
    if noise_std == 0 and drift == 0:
        return result
    rng = np.random.default_rng(seed)
    noisy = result.per_frame_pixels.copy()
    n_frames, n_p = noisy.shape[:2]
    noise = rng.normal(0.0, 1.0, size=(n_frames, n_p, 2))
    if noise_std:
        noisy[1:] += noise_std * noise[1:]
    if drift:
        ang = rng.uniform(0, 2 * np.pi, size=n_p)
        step = drift * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        noisy[1:] += np.cumsum(np.broadcast_to(step, (n_frames - 1, n_p, 2)),
                               axis=0)
    return TrackedPointSet(
        query_pixels=result.query_pixels, anchor_faces=result.anchor_faces,
        anchor_bary=result.anchor_bary, frame_pixels=noisy[-1],
        validity=result.validity, stale=result.stale,
        per_frame_pixels=noisy, per_frame_valid=result.per_frame_valid)


def export_tracks(tracked: TrackedPointSet, path):
    """Line-delimited records: frame, point id, u, v, valid."""
    with open(path, "w") as fh:
        fh.write("frame\tpoint\tu\tv\tvalid\n")
        T, P = tracked.per_frame_valid.shape
        for t in range(T):
            for p in range(P):
                u, v = tracked.per_frame_pixels[t, p]
                fh.write(f"{t}\t{p}\t{u:.4f}\t{v:.4f}"
                         f"\t{int(tracked.per_frame_valid[t, p])}\n")
