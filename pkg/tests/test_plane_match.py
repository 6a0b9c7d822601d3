"""Unit tests for plane-region matching."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
import scipy.ndimage

from acrkit.errors import (
    BudgetExceededError,
    InvalidInputError,
    MissingPlaneError,
    OrientationError,
)
from acrkit.plane_match import (
    Assignment,
    PlaneGraph,
    PlaneSegmentMap,
    assemble_affinity,
    disk_structuring_element,
    edge_affinity,
    erode_mask,
    match_plane_maps,
    matching_objective,
    min_region_distance,
    node_affinity,
    node_affinity_matrix,
    solve_matching,
)
from acrkit.pose_estimation import CorrespondenceSet


def _mask(shape, regions):
    lab = np.zeros(shape, dtype=np.int32)
    for plane_id, sl in regions.items():
        lab[sl] = plane_id
    return PlaneSegmentMap(lab)


class TestPlaneSegmentMap:
    def test_contiguity_enforced(self):
        lab = np.zeros((5, 5), dtype=int)
        lab[0, 0] = 2  # id 1 missing
        with pytest.raises(InvalidInputError):
            PlaneSegmentMap(lab)

    def test_label_lookup_out_of_image(self):
        m = _mask((10, 10), {1: (slice(2, 5), slice(2, 5))})
        labels = m.label_at(np.array([[3.0, 3.0], [-5.0, 3.0], [100.0, 3.0]]))
        assert labels.tolist() == [1, 0, 0]

    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        lab = np.zeros((24, 31), dtype=np.int32)
        lab[3:9, 4:12] = 1
        lab[15:22, 18:28] = 2
        m = PlaneSegmentMap(lab)
        path = tmp_path / "m.pgm"
        m.save(path)
        back = PlaneSegmentMap.load(path)
        assert np.array_equal(back.labels, m.labels)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n31 24\n65535\n")

    def test_pgm_wide_values(self, tmp_path):
        lab = np.zeros((4, 4), dtype=np.int32)
        for k in range(1, 5):
            lab[k - 1, :] = k
        lab[3, 3] = 4
        m = PlaneSegmentMap(lab)
        back = PlaneSegmentMap.from_pgm_bytes(m.to_pgm_bytes())
        assert np.array_equal(back.labels, m.labels)


class TestErodeMask:
    def test_radius_zero_is_identity(self):
        m = _mask((20, 20), {1: (slice(5, 15), slice(5, 15))})
        assert erode_mask(m, 0) is m

    def test_square_by_disk(self):
        m = _mask((20, 20), {1: (slice(5, 15), slice(5, 15))})
        e = erode_mask(m, 2)
        assert int((e.labels == 1).sum()) == 36
        rows, cols = np.nonzero(e.labels == 1)
        assert rows.min() == 7 and rows.max() == 12

    def test_small_region_dropped_and_recompacted(self):
        m = _mask((20, 20), {1: (slice(1, 4), slice(1, 4)), 2: (slice(8, 18), slice(8, 18))})
        e = erode_mask(m, 2)
        assert e.num_planes == 1
        assert set(np.unique(e.labels)) == {0, 1}

    def test_matches_binary_erosion_oracle(self):
        # Oracle: scipy binary erosion with the same disk, on random blobs.
        rng = np.random.default_rng(3)
        lab = np.zeros((48, 48), dtype=np.int32)
        for plane_id in (1, 2):
            r0, c0 = rng.integers(2, 18, 2)
            blob = rng.random((20, 20)) > 0.35
            blob = scipy.ndimage.binary_closing(blob)
            region = np.zeros_like(lab, dtype=bool)
            region[r0 : r0 + 20, c0 + 22 * (plane_id - 1) : c0 + 20 + 22 * (plane_id - 1)] = blob
            lab[region] = plane_id
        m = PlaneSegmentMap(lab)
        radius = 2
        eroded = erode_mask(m, radius)
        disk = disk_structuring_element(radius)
        expected = np.zeros_like(lab)
        next_id = 0
        for plane_id in m.plane_ids:
            ref = scipy.ndimage.binary_erosion(
                m.labels == plane_id, structure=disk, border_value=0
            )
            if ref.any():
                next_id += 1
                expected[ref] = next_id
        assert np.array_equal(eroded.labels, expected)

    def test_negative_radius_rejected(self):
        m = _mask((10, 10), {1: (slice(2, 8), slice(2, 8))})
        with pytest.raises(InvalidInputError):
            erode_mask(m, -1)


class TestMinRegionDistance:
    def test_touching_regions(self):
        m = _mask((10, 10), {1: (slice(0, 3), slice(0, 3)), 2: (slice(0, 3), slice(3, 6))})
        assert min_region_distance(m, 1, 2) == 0.0

    def test_three_four_five(self):
        lab = np.zeros((10, 10), dtype=np.int32)
        lab[0, 0] = 1
        lab[4, 3] = 2
        assert min_region_distance(PlaneSegmentMap(lab), 1, 2) == pytest.approx(5.0)

    def test_unknown_id(self):
        m = _mask((10, 10), {1: (slice(0, 3), slice(0, 3))})
        with pytest.raises(MissingPlaneError):
            min_region_distance(m, 1, 3)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            lab = np.zeros((36, 36), dtype=np.int32)
            lab[2 : 2 + rng.integers(3, 8), 3 : 3 + rng.integers(3, 9)] = 1
            lab[20 : 20 + rng.integers(3, 9), 19 : 19 + rng.integers(3, 10)] = 2
            m = PlaneSegmentMap(lab)
            pa = np.argwhere(lab == 1)
            pb = np.argwhere(lab == 2)
            brute = min(
                float(np.linalg.norm(p - q)) for p in pa for q in pb
            )
            if brute <= np.sqrt(2.0) + 1e-12:
                brute = 0.0
            assert min_region_distance(m, 1, 2) == pytest.approx(brute)


class TestAffinities:
    def test_node_affinity_counts(self):
        m_ref = _mask((30, 30), {1: (slice(2, 9), slice(2, 9)), 2: (slice(18, 25), slice(18, 25))})
        m_cur = m_ref
        a = np.array([[4.0, 4.0]] * 12 + [[20.0, 20.0]] * 5)
        b = np.array([[20.0, 20.0]] * 12 + [[4.0, 4.0]] * 5)
        c = CorrespondenceSet(a, b)
        assert node_affinity(c, m_ref, m_cur, 1, 2) == 12
        assert node_affinity(c, m_ref, m_cur, 2, 1) == 5
        assert node_affinity(c, m_ref, m_cur, 1, 1) == 0
        counts = node_affinity_matrix(c, m_ref, m_cur)
        assert counts[0, 1] == 12 and counts[1, 0] == 5

    def test_node_affinity_empty(self):
        m = _mask((10, 10), {1: (slice(2, 8), slice(2, 8))})
        c = CorrespondenceSet(np.zeros((0, 2)), np.zeros((0, 2)))
        assert node_affinity(c, m, m, 1, 1) == 0

    def test_edge_affinity_values(self):
        assert edge_affinity(5.0, 5.0, 10.0) == pytest.approx(1.0)
        assert edge_affinity(5.0, 15.0, 10.0) == pytest.approx(np.exp(-1.0))
        assert edge_affinity(0.0, 1e9, 10.0) == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(InvalidInputError):
            edge_affinity(1.0, 1.0, 0.0)


class TestAssembleAffinity:
    def test_one_by_one(self):
        g = PlaneGraph((1,), np.zeros((1, 1)))
        w = assemble_affinity(np.array([[7.0]]), g, g, sigma=5.0, normalize=False)
        np.testing.assert_allclose(w, [[7.0]])

    def test_two_by_two_hand_expansion(self):
        # Hand-expanded affinity for H = M = 2 with known distances.
        node = np.array([[3.0, 1.0], [0.0, 2.0]])
        g_ref = PlaneGraph((1, 2), np.array([[0.0, 10.0], [10.0, 0.0]]))
        g_cur = PlaneGraph((1, 2), np.array([[0.0, 14.0], [14.0, 0.0]]))
        sigma = 4.0
        w = assemble_affinity(node, g_ref, g_cur, sigma, normalize=False)
        assert w.shape == (4, 4)
        # Column-major index: (a, c) -> c*2 + a.
        np.testing.assert_allclose(np.diag(w), [3.0, 0.0, 1.0, 2.0])
        e = np.exp(-4.0 / 4.0)
        # ((a=0,c=0),(b=1,d=1)) and symmetric mirror entries.
        assert w[0, 3] == pytest.approx(e)
        assert w[3, 0] == pytest.approx(e)
        assert w[1, 2] == pytest.approx(e)
        # Same reference plane or same current plane is infeasible: zero.
        assert w[0, 1] == 0.0 and w[0, 2] == 0.0
        np.testing.assert_allclose(w, w.T)

    def test_objective_matches_two_sum(self):
        # Oracle: the explicit node-sum plus ordered edge-sum, for every
        # feasible assignment on small sizes.
        rng = np.random.default_rng(4)
        for h, m in [(2, 2), (2, 3), (3, 3), (3, 4)]:
            node = rng.uniform(0, 5, size=(h, m))
            d_ref = rng.uniform(0, 30, size=(h, h))
            d_ref = (d_ref + d_ref.T) / 2
            np.fill_diagonal(d_ref, 0.0)
            d_cur = rng.uniform(0, 30, size=(m, m))
            d_cur = (d_cur + d_cur.T) / 2
            np.fill_diagonal(d_cur, 0.0)
            sigma = 8.0
            w = assemble_affinity(
                node,
                PlaneGraph(tuple(range(1, h + 1)), d_ref),
                PlaneGraph(tuple(range(1, m + 1)), d_cur),
                sigma,
                normalize=False,
            )
            for columns in itertools.permutations(range(m), h):
                u = np.zeros((h, m), dtype=np.uint8)
                u[np.arange(h), columns] = 1
                assignment = Assignment(u)
                expected = sum(node[a, columns[a]] for a in range(h))
                for a in range(h):
                    for b in range(h):
                        if a == b:
                            continue
                        expected += edge_affinity(
                            d_ref[a, b], d_cur[columns[a], columns[b]], sigma
                        )
                assert matching_objective(w, assignment) == pytest.approx(expected)

    def test_orientation_error(self):
        node = np.zeros((3, 2))
        g3 = PlaneGraph((1, 2, 3), np.zeros((3, 3)))
        g2 = PlaneGraph((1, 2), np.zeros((2, 2)))
        with pytest.raises(OrientationError):
            assemble_affinity(node, g3, g2, sigma=1.0)


class TestSolveMatching:
    def test_single_assignment(self):
        w = np.array([[2.0]])
        a = solve_matching(w, 1, 1, "exact")
        assert a.pairs == [(1, 1)]

    def test_exact_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for h, m in [(2, 2), (3, 3), (3, 5), (4, 5), (5, 5)]:
            w = rng.uniform(0, 1, size=(h * m, h * m))
            w = (w + w.T) / 2
            best = solve_matching(w, h, m, "exact")
            best_score = matching_objective(w, best)
            for columns in itertools.permutations(range(m), h):
                u = np.zeros((h, m), dtype=np.uint8)
                u[np.arange(h), columns] = 1
                assert best_score >= matching_objective(w, Assignment(u)) - 1e-12

    def test_spectral_feasible_and_bounded(self):
        rng = np.random.default_rng(2)
        gaps = []
        for _ in range(40):
            h, m = 3, 5
            w = rng.uniform(0, 1, size=(h * m, h * m))
            w = (w + w.T) / 2
            exact = solve_matching(w, h, m, "exact")
            spectral = solve_matching(w, h, m, "spectral")
            assert spectral.matrix.sum(axis=1).tolist() == [1] * h
            assert (spectral.matrix.sum(axis=0) <= 1).all()
            se = matching_objective(w, spectral)
            ee = matching_objective(w, exact)
            assert se <= ee + 1e-12
            gaps.append(se / ee)
        # Soft quality check: logged, not asserted (relaxation quality is
        # data-dependent).
        print(f"spectral/exact objective ratio: median {np.median(gaps):.3f}")

    def test_budget_exceeded(self):
        h, m = 2, 2
        w = np.eye(4)
        import acrkit.plane_match as pm

        old = pm.EXACT_ENUMERATION_BUDGET
        pm.EXACT_ENUMERATION_BUDGET = 1
        try:
            with pytest.raises(BudgetExceededError):
                solve_matching(w, h, m, "exact")
        finally:
            pm.EXACT_ENUMERATION_BUDGET = old

    def test_label_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        h = m = 3
        node = rng.uniform(0, 10, size=(h, m))
        d_ref = rng.uniform(1, 20, size=(h, h))
        d_ref = (d_ref + d_ref.T) / 2
        np.fill_diagonal(d_ref, 0)
        d_cur = rng.uniform(1, 20, size=(m, m))
        d_cur = (d_cur + d_cur.T) / 2
        np.fill_diagonal(d_cur, 0)
        w = assemble_affinity(
            node, PlaneGraph((1, 2, 3), d_ref), PlaneGraph((1, 2, 3), d_cur), 5.0
        )
        base = solve_matching(w, h, m, "exact")
        perm = np.array([2, 0, 1])  # relabel the reference planes
        node_p = node[perm]
        d_ref_p = d_ref[np.ix_(perm, perm)]
        w_p = assemble_affinity(
            node_p, PlaneGraph((1, 2, 3), d_ref_p), PlaneGraph((1, 2, 3), d_cur), 5.0
        )
        permuted = solve_matching(w_p, h, m, "exact")
        assert matching_objective(w_p, permuted) == pytest.approx(
            matching_objective(w, base)
        )
        base_pairs = dict(base.pairs)
        for a_new, c in permuted.pairs:
            assert base_pairs[perm[a_new - 1] + 1] == c


class TestMatchPlaneMaps:
    def test_simple_crossed_match(self):
        m = _mask(
            (30, 30),
            {1: (slice(3, 8), slice(3, 8)), 2: (slice(18, 23), slice(18, 23))},
        )
        a = np.array([[5.0, 5.0]] * 7 + [[20.0, 20.0]] * 9)
        b = np.array([[20.0, 20.0]] * 7 + [[5.0, 5.0]] * 9)
        pairs = match_plane_maps(m, m, CorrespondenceSet(a, b))
        assert sorted(pairs) == [(1, 2), (2, 1)]

    def test_swap_when_ref_has_more_planes(self):
        m_ref = _mask(
            (40, 40),
            {
                1: (slice(2, 8), slice(2, 8)),
                2: (slice(2, 8), slice(20, 26)),
                3: (slice(20, 26), slice(2, 8)),
            },
        )
        m_cur = _mask(
            (40, 40),
            {1: (slice(2, 8), slice(2, 8)), 2: (slice(2, 8), slice(20, 26))},
        )
        a = np.array([[4.0, 4.0]] * 6 + [[22.0, 4.0]] * 6)
        b = np.array([[4.0, 4.0]] * 6 + [[22.0, 4.0]] * 6)
        pairs = match_plane_maps(m_ref, m_cur, CorrespondenceSet(a, b))
        assert len(pairs) == 2
        assert (1, 1) in pairs and (2, 2) in pairs

    def test_empty_masks(self):
        empty = PlaneSegmentMap(np.zeros((10, 10), dtype=np.int32))
        m = _mask((10, 10), {1: (slice(2, 8), slice(2, 8))})
        c = CorrespondenceSet(np.zeros((0, 2)), np.zeros((0, 2)))
        assert match_plane_maps(empty, m, c) == []


class TestAssignment:
    def test_row_sum_enforced(self):
        with pytest.raises(InvalidInputError):
            Assignment(np.array([[1, 1], [0, 0]]))

    def test_column_sum_enforced(self):
        with pytest.raises(InvalidInputError):
            Assignment(np.array([[1, 0], [1, 0]]))
