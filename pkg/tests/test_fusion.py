"""Unit tests for hypothesis weighting, pose fusion and the i2pe pipeline."""

from __future__ import annotations

import numpy as np
import pytest

from acrkit.errors import InsufficientDataError
from acrkit.fusion import (
    FusionWeights,
    I2peConfig,
    fuse_poses,
    hypothesis_weight,
    i2pe,
    weights_from_hypotheses,
)
from acrkit.geometry import (
    DirectionalPose,
    Pose,
    Rotation,
    direction_angle,
    rotation_angle,
)
from acrkit.plane_match import PlaneSegmentMap
from acrkit.pose_estimation import CorrespondenceSet, PoseHypothesis
from acrkit.simulator import (
    DESK_IMAGE_SIZE,
    DESK_INTRINSICS,
    corner_scene,
    generate_scene,
    observe,
)
from conftest import random_rotation


def _hyp(rotation, direction, support=10, spread=0.5):
    return PoseHypothesis(
        pose=DirectionalPose(rotation, direction), support=support, spread=spread
    )


@pytest.fixture(scope="module")
def corner_observation():
    world = generate_scene(corner_scene(seed=1))
    offset = Pose(Rotation.about_z(5.0), np.array([0.03, -0.02, 0.025]))
    obs = observe(world, offset, DESK_INTRINSICS, DESK_IMAGE_SIZE, seed=3)
    return world, offset, obs


class TestHypothesisWeight:
    def test_product(self):
        assert hypothesis_weight(_hyp(Rotation.identity(), [0, 0, 1], 100, 0.5)) == 50.0

    def test_zero_spread_kills_weight(self):
        assert hypothesis_weight(_hyp(Rotation.identity(), [0, 0, 1], 100, 0.0)) == 0.0

    def test_equal_hypotheses_equal_weights(self):
        hyps = [_hyp(Rotation.about_z(1.0), [1, 0, 0], 20, 0.3) for _ in range(3)]
        w = weights_from_hypotheses(hyps)
        np.testing.assert_allclose(w.values, [1 / 3] * 3)


class TestFusePoses:
    def test_single_hypothesis_unchanged(self):
        h = _hyp(Rotation.about_z(7.0), [0, 1, 0])
        fused = fuse_poses([h], FusionWeights([1.0]))
        np.testing.assert_allclose(fused.rotation.matrix, h.pose.rotation.matrix, atol=1e-12)
        np.testing.assert_allclose(fused.direction, h.pose.direction, atol=1e-12)

    def test_identical_hypotheses_idempotent(self):
        h = _hyp(Rotation.about_x(11.0), [0.6, 0.8, 0.0])
        fused = fuse_poses([h, h], FusionWeights([0.9, 0.1]))
        np.testing.assert_allclose(fused.rotation.matrix, h.pose.rotation.matrix, atol=1e-10)
        np.testing.assert_allclose(fused.direction, h.pose.direction, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(InsufficientDataError):
            fuse_poses([], FusionWeights([1.0]))

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(0)
        hyps = [
            _hyp(random_rotation(rng, 10.0), rng.standard_normal(3), 10, 0.5)
            for _ in range(4)
        ]
        raw = np.array([2.0, 1.0, 3.0, 0.5])
        a = fuse_poses(hyps, FusionWeights(raw))
        b = fuse_poses(hyps, FusionWeights(raw * 17.0))
        np.testing.assert_allclose(a.rotation.matrix, b.rotation.matrix, atol=1e-12)
        np.testing.assert_allclose(a.direction, b.direction, atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        hyps = [
            _hyp(random_rotation(rng, 5.0), rng.standard_normal(3), 5 + i, 0.4)
            for i in range(4)
        ]
        w = np.array([1.0, 2.0, 3.0, 4.0])
        a = fuse_poses(hyps, FusionWeights(w))
        order = [2, 0, 3, 1]
        b = fuse_poses([hyps[i] for i in order], FusionWeights(w[order]))
        np.testing.assert_allclose(a.rotation.matrix, b.rotation.matrix, atol=1e-10)
        np.testing.assert_allclose(a.direction, b.direction, atol=1e-10)

    def test_monte_carlo_near_truth(self):
        # Perturbed hypotheses around a known pose: fused result beats the
        # worst input and lands close to the truth.
        rng = np.random.default_rng(7)
        truth_r = Rotation.about_z(4.0)
        truth_d = np.array([0.0, 0.6, 0.8])
        worst_gap = 0.0
        fused_gaps = []
        for _ in range(30):
            hyps = []
            for _ in range(3):
                perturb = random_rotation(rng, 0.2)
                d = truth_d + rng.normal(0, 0.003, 3)
                hyps.append(
                    _hyp(perturb.compose(truth_r), d, int(rng.integers(30, 200)), 0.5)
                )
            weights = weights_from_hypotheses(hyps)
            fused = fuse_poses(hyps, weights)
            errors = [
                rotation_angle(h.pose.rotation.compose(truth_r.inverse()))
                for h in hyps
            ]
            fused_err = rotation_angle(fused.rotation.compose(truth_r.inverse()))
            assert fused_err <= max(errors) + 1e-12
            fused_gaps.append(fused_err)
            worst_gap = max(worst_gap, fused_err)
        assert np.median(fused_gaps) < 0.1

    def test_antipodal_directions_align(self):
        # Hemisphere alignment folds the sign ambiguity of per-plane
        # directions onto the anchor, so antipodal inputs reinforce instead
        # of canceling (the ambiguous-direction guard stays defensive: with
        # normalized weights the aligned sum always keeps norm >= 1/K).
        h1 = _hyp(Rotation.identity(), [1, 0, 0], 10, 0.5)
        h2 = _hyp(Rotation.identity(), [-1, 0, 0], 10, 0.5)
        fused = fuse_poses([h1, h2], FusionWeights([0.5, 0.5]))
        assert direction_angle(fused.direction, [1, 0, 0]) < 1e-9


class TestI2pe:
    def test_zero_noise_recovery(self, corner_observation):
        world, offset, obs = corner_observation
        est = i2pe(
            obs.correspondences, obs.mask_ref, obs.mask_cur, DESK_INTRINSICS, I2peConfig()
        )
        assert rotation_angle(est.pose.rotation.compose(offset.rotation.inverse())) < 1e-5
        truth_d = offset.translation / np.linalg.norm(offset.translation)
        assert direction_angle(est.pose.direction, truth_d) < 1e-4
        assert not est.zero_motion
        assert len(est.plane_pairs) == 3

    def test_contamination_blindness(self, corner_observation):
        # Adding correspondences outside every matched plane changes the
        # output bit for bit not at all.
        world, offset, obs = corner_observation
        cfg = I2peConfig()
        base = i2pe(
            obs.correspondences, obs.mask_ref, obs.mask_cur, DESK_INTRINSICS, cfg
        )
        rng = np.random.default_rng(0)
        n_junk = 150
        junk_a = np.column_stack(
            [rng.uniform(0, 40, n_junk), rng.uniform(0, 40, n_junk)]
        )  # top-left corner, outside all regions
        junk_b = rng.uniform(0, 900, size=(n_junk, 2))
        c = obs.correspondences
        contaminated = CorrespondenceSet(
            np.vstack([c.a, junk_a]),
            np.vstack([c.b, junk_b]),
            np.concatenate([c.plane_label, np.zeros(n_junk, dtype=np.int64)]),
            np.concatenate(
                [c.track_id, np.arange(n_junk) + 10_000_000]
            ),
        )
        est = i2pe(contaminated, obs.mask_ref, obs.mask_cur, DESK_INTRINSICS, cfg)
        assert np.array_equal(est.pose.rotation.matrix, base.pose.rotation.matrix)
        assert np.array_equal(est.pose.direction, base.pose.direction)

    def test_winner_take_all_mode(self, corner_observation):
        world, offset, obs = corner_observation
        est = i2pe(
            obs.correspondences,
            obs.mask_ref,
            obs.mask_cur,
            DESK_INTRINSICS,
            I2peConfig(fusion="winner"),
        )
        best = int(np.argmax(est.weights.values))
        np.testing.assert_allclose(
            est.pose.rotation.matrix, est.hypotheses[best].pose.rotation.matrix
        )

    def test_occluded_plane_still_estimates(self, corner_observation):
        # Drop one plane from the current mask entirely (H < M path).
        world, offset, obs = corner_observation
        labels = obs.mask_cur.labels.copy()
        labels[labels == 3] = 0
        m_cur = PlaneSegmentMap(labels)
        est = i2pe(
            obs.correspondences, obs.mask_ref, m_cur, DESK_INTRINSICS, I2peConfig()
        )
        assert rotation_angle(est.pose.rotation.compose(offset.rotation.inverse())) < 1e-5
        assert len(est.plane_pairs) == 2

    def test_zero_motion_signal(self, corner_observation):
        world, offset, obs = corner_observation
        identity_obs = observe(
            world, Pose.identity(), DESK_INTRINSICS, DESK_IMAGE_SIZE, seed=4
        )
        est = i2pe(
            identity_obs.correspondences,
            identity_obs.mask_ref,
            identity_obs.mask_cur,
            DESK_INTRINSICS,
            I2peConfig(),
        )
        assert est.zero_motion
        assert rotation_angle(est.pose.rotation) < 1e-6

    def test_report_is_json_ready(self, corner_observation):
        import json

        world, offset, obs = corner_observation
        est = i2pe(
            obs.correspondences, obs.mask_ref, obs.mask_cur, DESK_INTRINSICS, I2peConfig()
        )
        doc = est.report()
        json.dumps(doc)
        assert len(doc["hypotheses"]) == len(est.plane_pairs)
