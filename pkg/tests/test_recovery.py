"""Recovery planner: uncut extraction, candidate sampling, greedy cover."""

import numpy as np
import pytest

from dissectbench.connectivity import classify_edges
from dissectbench.errors import PlannerInfeasibleError, SamplingStarvedError
from dissectbench.recovery import (
    CandidateSegment,
    UncutSet,
    extract_uncut_set,
    greedy_select,
    plan_recovery,
    sample_candidates,
)
from tests.conftest import segments_intersect_shapely


GOAL = np.array([[[100.0, 200.0], [500.0, 200.0]]])


def report_from_edges(keypoints, edges, connected):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rho = np.where(np.asarray(connected, bool), 1.0, 9.0)
    return classify_edges(rho, edges, tau=3.0)


class TestExtractUncut:
    def test_goal_crossing_filter(self):
        # Four vertical edges: two straddle the goal line, one is above it,
        # one is past the goal's right endpoint.
        kp = np.array([[150.0, 190.0], [150.0, 210.0],
                       [300.0, 195.0], [300.0, 205.0],
                       [200.0, 150.0], [200.0, 170.0],
                       [560.0, 190.0], [560.0, 210.0]])
        edges = [[0, 1], [2, 3], [4, 5], [6, 7]]
        rep = report_from_edges(kp, edges, [True] * 4)
        uncut = extract_uncut_set(rep, kp, GOAL)
        got = {tuple(e) for e in uncut.edge_indices.tolist()}
        assert got == {(0, 1), (2, 3)}
        # Shapely agrees on every kept/dropped decision.
        for e in edges:
            hit = segments_intersect_shapely(kp[e[0]], kp[e[1]],
                                             GOAL[0, 0], GOAL[0, 1])
            assert (tuple(e) in got) == hit

    def test_disconnected_edges_ignored(self):
        kp = np.array([[150.0, 190.0], [150.0, 210.0]])
        rep = report_from_edges(kp, [[0, 1]], [False])
        assert len(extract_uncut_set(rep, kp, GOAL)) == 0

    def test_rest_frame_relevance(self):
        # At T_end the edge has swung far from the goal; at rest it crossed.
        kp_end = np.array([[150.0, 400.0], [150.0, 430.0]])
        kp_rest = np.array([[150.0, 190.0], [150.0, 210.0]])
        rep = report_from_edges(kp_end, [[0, 1]], [True])
        assert len(extract_uncut_set(rep, kp_end, GOAL)) == 0
        uncut = extract_uncut_set(rep, kp_end, GOAL, keypoints_rest=kp_rest)
        assert len(uncut) == 1
        # Segments reported at T_end, where the cut must happen now.
        assert np.allclose(uncut.segments[0], [kp_end[0], kp_end[1]])


class TestSampling:
    def test_centers_near_uncut_edges(self):
        uncut = UncutSet(np.array([[[100.0, 100.0], [160.0, 100.0]]]),
                         np.array([[0, 1]]))
        cands = sample_candidates(uncut, center_radius=20.0, n_centers=50,
                                  angle_bins=4, seed=1)
        assert len(cands) == 50 * 4
        for c in cands:
            rel = c.center - [100.0, 100.0]
            d = abs(60.0 * rel[1]) / 60.0
            inside_x = 100.0 <= c.center[0] <= 160.0
            if inside_x:
                assert d < 20.0
            else:
                end = [100.0, 100.0] if c.center[0] < 100.0 else [160.0, 100.0]
                assert np.linalg.norm(c.center - end) < 20.0

    def test_angles_binned(self):
        uncut = UncutSet(np.array([[[0.0, 0.0], [10.0, 0.0]]]),
                         np.array([[0, 1]]))
        cands = sample_candidates(uncut, n_centers=3, angle_bins=6)
        angs = sorted({round(c.angle, 9) for c in cands})
        assert np.allclose(angs, np.arange(6) * np.pi / 6)

    def test_empty_and_invalid_inputs(self):
        empty = UncutSet(np.zeros((0, 2, 2)), np.zeros((0, 2), np.int64))
        with pytest.raises(ValueError):
            sample_candidates(empty)
        uncut = UncutSet(np.array([[[0.0, 0.0], [10.0, 0.0]]]),
                         np.array([[0, 1]]))
        with pytest.raises(ValueError):
            sample_candidates(uncut, length=0.0)

    def test_starvation(self):
        uncut = UncutSet(np.array([[[0.0, 0.0], [1000.0, 1000.0]]]),
                         np.array([[0, 1]]))
        with pytest.raises(SamplingStarvedError):
            sample_candidates(uncut, center_radius=1e-9, n_centers=5)


def random_instance(rng, n_edges, n_cands):
    """Uncut edges plus candidate segments over a shared 200x200 window."""
    centers = rng.uniform(40, 160, size=(n_edges, 2))
    dirs = rng.normal(size=(n_edges, 2))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    half = rng.uniform(5, 25, size=(n_edges, 1))
    segs = np.stack([centers - half * dirs, centers + half * dirs], axis=1)
    uncut = UncutSet(segs, np.arange(2 * n_edges).reshape(-1, 2))
    cands = [CandidateSegment(center=rng.uniform(30, 170, size=2),
                              angle=rng.uniform(0, np.pi),
                              length=rng.uniform(20, 80))
             for _ in range(n_cands)]
    return uncut, cands


def brute_cover_sets(uncut, cands):
    out = []
    for c in cands:
        e = c.endpoints
        out.append(frozenset(
            k for k in range(len(uncut))
            if segments_intersect_shapely(e[0], e[1], uncut.segments[k, 0],
                                          uncut.segments[k, 1])))
    return out


def exhaustive_opt(cover_sets, n_edges):
    """Smallest subset of cover_sets whose union is everything, by BFS over
    subset sizes (instances are tiny)."""
    from itertools import combinations
    universe = frozenset(range(n_edges))
    usable = [s for s in cover_sets if s]
    for size in range(0, len(usable) + 1):
        for combo in combinations(usable, size):
            if frozenset().union(*combo) == universe if combo else not universe:
                return size
    return None


class TestGreedy:
    def test_complete_coverage_random_instances(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            uncut, cands = random_instance(rng, rng.integers(1, 8),
                                           rng.integers(5, 30))
            picks = greedy_select(uncut, cands, augment=True)
            sets = brute_cover_sets(uncut, picks)
            covered = frozenset().union(*sets) if sets else frozenset()
            assert covered == frozenset(range(len(uncut)))

    def test_matches_hand_instance(self):
        # Three horizontal edges stacked; one tall candidate crosses all
        # three, two short ones cross one each. Greedy takes the tall one.
        segs = np.array([[[0.0, 10.0 * k], [20.0, 10.0 * k]]
                         for k in range(3)])
        uncut = UncutSet(segs, np.arange(6).reshape(-1, 2))
        tall = CandidateSegment(center=[10.0, 10.0], angle=np.pi / 2,
                                length=40.0)
        short = [CandidateSegment(center=[5.0, 10.0 * k], angle=np.pi / 2,
                                  length=6.0) for k in range(3)]
        picks = greedy_select(uncut, short + [tall], augment=False)
        assert len(picks) == 1
        assert picks[0] is tall

    def test_injected_candidates_guarantee_termination(self):
        segs = np.array([[[300.0, 300.0], [320.0, 300.0]]])
        uncut = UncutSet(segs, np.array([[0, 1]]))
        useless = [CandidateSegment(center=[0.0, 0.0], angle=0.0, length=5.0)]
        picks = greedy_select(uncut, useless, augment=True)
        assert len(picks) == 1
        assert picks[0].injected
        e = picks[0].endpoints
        assert segments_intersect_shapely(e[0], e[1], segs[0, 0], segs[0, 1])

    def test_no_augment_raises_when_uncoverable(self):
        segs = np.array([[[300.0, 300.0], [320.0, 300.0]]])
        uncut = UncutSet(segs, np.array([[0, 1]]))
        useless = [CandidateSegment(center=[0.0, 0.0], angle=0.0, length=5.0)]
        with pytest.raises(PlannerInfeasibleError) as ei:
            greedy_select(uncut, useless, augment=False)
        assert ei.value.uncovered == [0]

    def test_steep_angle_gate_on_goal_edges(self):
        # An edge sitting on the goal line only accepts steep crossings; a
        # near-parallel candidate that geometrically intersects is refused.
        segs = np.array([[[295.0, 190.0], [305.0, 210.0]]])  # crosses GOAL
        uncut = UncutSet(segs, np.array([[0, 1]]))
        grazing = CandidateSegment(center=[300.0, 200.0], angle=0.12,
                                   length=80.0)
        steep = CandidateSegment(center=[300.0, 200.0], angle=np.pi / 2,
                                 length=80.0)
        picks = greedy_select(uncut, [grazing, steep], goal_segments=GOAL,
                              augment=False)
        assert picks == [steep]

    def test_greedy_within_harmonic_bound(self):
        # H(n) * OPT bound on random instances, OPT by exhaustive search.
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 15:
            uncut, cands = random_instance(rng, rng.integers(2, 6),
                                           rng.integers(8, 16))
            sets = brute_cover_sets(uncut, cands)
            opt = exhaustive_opt(sets, len(uncut))
            if opt is None:
                continue
            checked += 1
            picks = greedy_select(uncut, cands, augment=False)
            h = sum(1.0 / k for k in range(1, len(uncut) + 1))
            assert len(picks) <= h * opt + 1e-9


class TestPlanRecovery:
    def test_complete_when_everything_cut(self):
        kp = np.array([[150.0, 190.0], [150.0, 210.0]])
        rep = report_from_edges(kp, [[0, 1]], [False])
        plan = plan_recovery(rep, kp, GOAL)
        assert plan.complete
        assert plan.goals == []

    def test_goals_cover_all_uncut_edges(self):
        kp = np.array([[200.0, 190.0], [200.0, 210.0],
                       [400.0, 188.0], [400.0, 212.0]])
        rep = report_from_edges(kp, [[0, 1], [2, 3]], [True, True])
        plan = plan_recovery(rep, kp, GOAL, seed=2)
        assert not plan.complete
        assert len(plan.uncut) == 2
        covered = set()
        for g in plan.goals:
            a, b = g.points[0].astype(float), g.points[1].astype(float)
            for k in range(2):
                if segments_intersect_shapely(a, b, plan.uncut.segments[k, 0],
                                              plan.uncut.segments[k, 1]):
                    covered.add(k)
        assert covered == {0, 1}

    def test_candidate_transform_applied(self):
        kp = np.array([[200.0, 190.0], [200.0, 210.0]])
        rep = report_from_edges(kp, [[0, 1]], [True])
        seen = {}

        def transform(cands):
            seen["n"] = len(cands)
            return cands[: len(cands) // 2]

        plan = plan_recovery(rep, kp, GOAL, candidate_transform=transform)
        assert seen["n"] > 0
        assert not plan.complete
