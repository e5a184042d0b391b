"""Exposure-maximization losses: camera-facing normal alignment, local
deformation-gradient estimation, the expansion/shear loss, and the hard
visibility constraint. All functions broadcast over leading batch axes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .connectivity import KeypointGrid
from .geometry import Camera


@dataclass
class ExposureObjective:
    """Loss weights plus the pixel set being exposed and its goal frame."""

    pixels: np.ndarray       # (P, 2) dissection-region pixels at t_d
    n_hat: np.ndarray        # (2,) orthogonal to the goal
    m_hat: np.ndarray        # (2,) parallel to the goal
    camera_forward: np.ndarray  # (3,) unit
    lam_c: float = 1.0
    lam_d: float = 1.0
    w_n: float = 1.0
    w_s: float = 0.5
    grid_shape: tuple | None = None  # (rows, cols) when pixels form a grid

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        self.n_hat = np.asarray(self.n_hat, dtype=np.float64)
        self.m_hat = np.asarray(self.m_hat, dtype=np.float64)
        self.camera_forward = np.asarray(self.camera_forward, dtype=np.float64)
        if len(self.pixels) == 0:
            raise ValueError("empty dissection pixel set")
        if abs(np.linalg.norm(self.camera_forward) - 1) > 1e-9:
            raise ValueError("camera forward must be unit length")
        for w in (self.lam_c, self.lam_d, self.w_n, self.w_s):
            if w < 0:
                raise ValueError("loss weights must be >= 0")

    @classmethod
    def from_grid(cls, grid: KeypointGrid, goal, camera: Camera, **weights):
        return cls(pixels=grid.keypoints, n_hat=goal.n_hat, m_hat=goal.m_hat,
                   camera_forward=camera.forward,
                   grid_shape=grid.shape, **weights)


def camera_facing_loss(normals, camera_forward):
    """Sum of n_i . w_c over tracked surface normals; minimal (= -P) when
    every normal is antiparallel to the viewing direction.

    normals: (..., P, 3); returns scalar or (...,) batch.
    """
    n = np.asarray(normals, dtype=np.float64)
    lens = np.linalg.norm(n, axis=-1)
    if (np.abs(lens - 1.0) > 1e-6).any():
        warnings.warn("non-unit normals passed to camera_facing_loss; "
                      "normalizing", stacklevel=2)
        n = n / np.maximum(lens, 1e-12)[..., None]
    return np.einsum("...pi,i->...", n, np.asarray(camera_forward, float))


def grid_neighbor_table(shape):
    """(P, 4) neighbor indices (left, right, up, down) for a row-major grid,
    -1 where the neighbor does not exist."""
    rows, cols = shape
    n = rows * cols
    tab = np.full((n, 4), -1, dtype=np.int64)
    idx = np.arange(n).reshape(rows, cols)
    tab[idx[:, 1:].ravel(), 0] = idx[:, :-1].ravel()
    tab[idx[:, :-1].ravel(), 1] = idx[:, 1:].ravel()
    tab[idx[1:, :].ravel(), 2] = idx[:-1, :].ravel()
    tab[idx[:-1, :].ravel(), 3] = idx[1:, :].ravel()
    return tab


def deformation_gradient(points, displacements, n_hat, m_hat, grid_shape,
                         valid=None):
    """Per-point 2x2 deformation gradient F = I + grad(u), estimated by a
    least-squares fit of the pixel displacement field over grid neighbors
    and expressed in the goal-aligned (m_hat, n_hat) frame.

    points: (P, 2) query pixels at t_d; displacements: (..., P, 2) pixel
    offsets at the evaluation frame. Returns (F, ok) where F is
    (..., P, 2, 2) and ok flags points with at least 3 valid neighbors and a
    well-conditioned fit (F = I where not ok).
    """
    p = np.asarray(points, dtype=np.float64)
    d = np.asarray(displacements, dtype=np.float64)
    batch = d.shape[:-2]
    rot = np.stack([np.asarray(m_hat, float), np.asarray(n_hat, float)])  # (2,2)
    q = p @ rot.T                      # goal-frame coordinates
    u = d @ rot.T                      # goal-frame displacements

    tab = grid_neighbor_table(grid_shape)
    n_p = len(p)
    if valid is None:
        valid = np.ones(n_p, dtype=bool)
    nb_ok = (tab >= 0) & valid[np.clip(tab, 0, n_p - 1)] & valid[:, None]

    tab_c = np.clip(tab, 0, n_p - 1)
    dq = q[tab_c] - q[:, None]                        # (P, 4, 2)
    du = u[..., tab_c, :] - u[..., :, None, :]        # (..., P, 4, 2)

    a = np.einsum("pki,pkj,pk->pij", dq, dq, nb_ok.astype(float))   # (P, 2, 2)
    b = np.einsum("...pki,pkj,pk->...pij", du, dq, nb_ok.astype(float))
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    ok = (nb_ok.sum(axis=1) >= 3) & (np.abs(det) > 1e-9)

    inv = np.zeros_like(a)
    safe = np.where(np.abs(det) > 1e-9, det, 1.0)
    inv[..., 0, 0] = a[..., 1, 1] / safe
    inv[..., 1, 1] = a[..., 0, 0] / safe
    inv[..., 0, 1] = -a[..., 0, 1] / safe
    inv[..., 1, 0] = -a[..., 1, 0] / safe

    jac = np.einsum("...pij,pjk->...pik", b, inv)
    f = np.broadcast_to(np.eye(2), batch + (n_p, 2, 2)).copy()
    f = f + np.where(ok[..., None, None], jac, 0.0)
    return f, np.broadcast_to(ok, batch + (n_p,))


def deformation_expanding_loss(field, n_hat, m_hat, w_n=1.0, w_s=0.5,
                               mask=None):
    """Sum over points of -w_n (n^T F n)^2 + w_s (n^T F m)^2 in whatever
    basis the field and the unit vectors share."""
    f = np.asarray(field, dtype=np.float64)
    n = np.asarray(n_hat, dtype=np.float64)
    m = np.asarray(m_hat, dtype=np.float64)
    nfn = np.einsum("i,...pij,j->...p", n, f, n)
    nfm = np.einsum("i,...pij,j->...p", n, f, m)
    per_point = -w_n * nfn ** 2 + w_s * nfm ** 2
    if mask is not None:
        per_point = np.where(mask, per_point, 0.0)
    return per_point.sum(axis=-1)


GOAL_FRAME_N = np.array([0.0, 1.0])
GOAL_FRAME_M = np.array([1.0, 0.0])


def visibility_constraint(pixels, camera: Camera):
    """1 iff any pixel leaves the half-open image rectangle, else 0.

    pixels: (..., P, 2); returns int or int array over leading axes.
    """
    px = np.asarray(pixels, dtype=np.float64)
    inside = ((px[..., 0] >= 0) & (px[..., 0] < camera.width)
              & (px[..., 1] >= 0) & (px[..., 1] < camera.height))
    out = (~inside).any(axis=-1).astype(int)
    return int(out) if out.ndim == 0 else out
