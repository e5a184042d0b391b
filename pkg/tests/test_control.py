"""Controller pieces: MPPI update rule, step clamping, visible-area count."""

import numpy as np
import pytest

from dissectbench.control import (
    MPPIParams,
    _clamp_steps,
    mppi_update,
    visible_area_pixels,
)
from dissectbench.geometry import make_overhead_camera
from tests.conftest import brute_force_raycast
from tests.test_world import make_world, midline_path

from dissectbench.world import cut_world


class TestMPPIUpdate:
    @staticmethod
    def quadratic_cost(target):
        def cost_fn(controls):
            c = ((controls - target) ** 2).sum(axis=(1, 2))
            return c, np.ones(len(controls), bool)
        return cost_fn

    def test_matches_softmax_oracle(self):
        # Replay the identical noise stream and recompute the weighted
        # average by hand.
        nominal = np.zeros((4, 3))
        target = np.full((4, 3), 0.3)
        sigma, temp, s = 0.1, 0.7, 32
        new, info = mppi_update(nominal, self.quadratic_cost(target),
                                sigma, temp, s, np.random.default_rng(5))
        noise = np.random.default_rng(5).normal(
            size=(s,) + nominal.shape) * sigma
        noise[0] = 0.0
        costs = (((nominal[None] + noise) - target) ** 2).sum(axis=(1, 2))
        w = np.exp(-(costs - costs.min()) / temp)
        w /= w.sum()
        expected = nominal + np.einsum("s,sij->ij", w, noise)
        assert np.abs(new - expected).max() < 1e-12
        assert info["n_feasible"] == s
        assert not info["all_infeasible"]
        assert info["best_cost"] <= info["expected_cost"] + 1e-12

    def test_moves_toward_target(self):
        nominal = np.zeros((3, 3))
        target = np.full((3, 3), 0.2)
        d0 = ((nominal - target) ** 2).sum()
        rng = np.random.default_rng(0)
        for _ in range(60):
            nominal, _ = mppi_update(nominal, self.quadratic_cost(target),
                                     0.05, 0.2, 64, rng)
        assert ((nominal - target) ** 2).sum() < 0.2 * d0

    def test_all_infeasible_freezes_nominal(self):
        def cost_fn(controls):
            return np.zeros(len(controls)), np.zeros(len(controls), bool)

        nominal = np.ones((2, 3))
        new, info = mppi_update(nominal, cost_fn, 0.1, 0.5, 16,
                                np.random.default_rng(1))
        assert (new == nominal).all()
        assert info["all_infeasible"]
        assert info["n_feasible"] == 0

    def test_partial_feasibility_ignores_infeasible(self):
        # Infeasible samples get absurdly low cost; they must not pull the
        # nominal, so the result matches a run where they never existed.
        nominal = np.zeros((2, 3))
        mask_holder = {}

        def cost_fn(controls):
            c = (controls ** 2).sum(axis=(1, 2))
            feas = np.arange(len(controls)) % 2 == 0
            c[~feas] = -1e9
            mask_holder["feas"] = feas
            return c, feas

        new, info = mppi_update(nominal, cost_fn, 0.1, 0.5, 16,
                                np.random.default_rng(2))
        noise = np.random.default_rng(2).normal(size=(16, 2, 3)) * 0.1
        noise[0] = 0.0
        feas = mask_holder["feas"]
        c = ((nominal[None] + noise) ** 2).sum(axis=(1, 2))[feas]
        w = np.exp(-(c - c.min()) / 0.5)
        w /= w.sum()
        expected = nominal + np.einsum("s,sij->ij", w, noise[feas])
        assert np.abs(new - expected).max() < 1e-12
        assert info["n_feasible"] == 8

    def test_params_validation(self):
        with pytest.raises(ValueError):
            MPPIParams(samples=1)
        with pytest.raises(ValueError):
            MPPIParams(horizon=0)


class TestClampSteps:
    def test_limits_consecutive_displacements(self):
        rng = np.random.default_rng(3)
        controls = rng.normal(scale=5.0, size=(4, 6, 3))
        start = np.zeros(3)
        max_step = 0.25
        out = _clamp_steps(controls, start, max_step)
        prev = np.broadcast_to(start, out[:, 0].shape)
        for t in range(out.shape[1]):
            d = np.linalg.norm(out[:, t] - prev, axis=-1)
            assert (d <= max_step + 1e-12).all()
            prev = out[:, t]

    def test_within_limit_unchanged(self):
        controls = np.cumsum(np.full((1, 5, 3), 1e-3), axis=1)
        out = _clamp_steps(controls, np.zeros(3), 1.0)
        assert np.allclose(out, controls, atol=1e-15)

    def test_direction_preserved(self):
        controls = np.array([[[10.0, 0.0, 0.0]]])
        out = _clamp_steps(controls, np.zeros(3), 0.5)
        assert np.allclose(out[0, 0], [0.5, 0.0, 0.0])


class TestVisibleArea:
    def test_matches_brute_force(self):
        # Tilted camera keeps projected mesh edges off the integer pixel
        # lattice, so no ray sits exactly on a face boundary.
        world = cut_world(make_world(), midline_path(make_world()))
        camera = make_overhead_camera(distance=0.25, tilt_deg=20.0)
        pos = world.sim.positions
        uv, _ = camera.project_with_validity(pos)
        cu, cv = uv.mean(axis=0)
        bbox = (cu - 12.3, cv - 12.3, cu + 12.3, cv + 12.3)
        got = visible_area_pixels(world, camera, pos, bbox)

        exposed = set(world.cut_exposed_faces.tolist())
        count = 0
        u0, v0 = int(np.floor(bbox[0])), int(np.floor(bbox[1]))
        u1, v1 = int(np.ceil(bbox[2])), int(np.ceil(bbox[3]))
        for u in range(u0, u1 + 1):
            for v in range(v0, v1 + 1):
                f = brute_force_raycast(camera, world.mesh, pos, (u, v))
                if f in exposed:
                    count += 1
        assert got == count
        assert got > 0

    def test_zero_without_exposed_faces(self):
        world = make_world()
        camera = make_overhead_camera(distance=0.25)
        assert visible_area_pixels(world, camera, world.sim.positions,
                                   (0, 0, 100, 100)) == 0

    def test_empty_bbox(self):
        world = cut_world(make_world(), midline_path(make_world()))
        camera = make_overhead_camera(distance=0.25)
        assert visible_area_pixels(world, camera, world.sim.positions,
                                   (50, 50, 10, 10)) == 0
