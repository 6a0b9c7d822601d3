"""Unit tests for the synthetic world, observations and the executor."""

from __future__ import annotations

import numpy as np
import pytest

from acrkit.errors import InvalidInputError, InvalidSceneError
from acrkit.geometry import Intrinsics, Pose, Rotation, compose, rotation_angle
from acrkit.simulator import (
    BENCH_MOTION,
    DESK_IMAGE_SIZE,
    DESK_INTRINSICS,
    LightingProxySpec,
    NoiseSpec,
    PlaneSpec,
    RigSpec,
    SceneSpec,
    SimulatedExecutor,
    bench_noise_sweep,
    corner_scene,
    generate_scene,
    mural_scene,
    observe,
    random_pose,
    render_plane_mask,
    single_plane_scene,
)


class TestGenerateScene:
    def test_points_lie_on_their_planes(self):
        world = generate_scene(single_plane_scene(points=500))
        plane = world.spec.planes[0]
        n = plane.unit_normal()
        residual = np.abs(world.points @ n - plane.offset)
        assert residual.max() < 1e-12

    def test_deterministic_regeneration(self):
        a = generate_scene(corner_scene(seed=5))
        b = generate_scene(corner_scene(seed=5))
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.plane_index, b.plane_index)

    def test_label_histogram(self):
        scene = corner_scene(points_per_plane=111, seed=2)
        world = generate_scene(scene)
        counts = np.bincount(world.plane_index)
        assert counts[1] == counts[2] == counts[3] == 111

    def test_degenerate_polygon_rejected(self):
        with pytest.raises(InvalidSceneError):
            PlaneSpec(normal=(0, 0, 1), offset=1.0, half_extents=(0.0, 0.1)).local_polygon()

    def test_off_plane_classification(self):
        world = generate_scene(mural_scene(seed=0, clutter=25))
        in_plane = world.in_plane_tracks()
        detected = world.detected_plane_ids
        assert set(detected) == {1, 2, 3}
        assert not in_plane[world.plane_index == 0].any()
        assert not in_plane[world.plane_index == 4].any()  # undetected wall
        assert in_plane[world.plane_index == 1].all()


class TestObserve:
    def test_identity_motion_zero_noise(self):
        world = generate_scene(corner_scene(seed=1))
        obs = observe(world, Pose.identity(), DESK_INTRINSICS, DESK_IMAGE_SIZE, seed=0)
        np.testing.assert_allclose(obs.correspondences.a, obs.correspondences.b)
        assert rotation_angle(obs.truth.relative_pose.rotation) == 0.0

    def test_noise_bound_and_mean(self):
        world = generate_scene(corner_scene(seed=1))
        pose = Pose(Rotation.about_z(2.0), np.array([0.02, 0.0, 0.01]))
        obs = observe(
            world,
            pose,
            DESK_INTRINSICS,
            DESK_IMAGE_SIZE,
            noise=NoiseSpec(magnitude_r=10.0, ratio_mu=1.0),
            seed=3,
        )
        delta = obs.correspondences.b - obs.truth.clean_b
        n = delta.shape[0]
        assert np.abs(delta).max() <= 10.0 + 1e-9
        assert np.abs(delta.mean()) < 3.0 * 10.0 / np.sqrt(12.0 * n)

    def test_lighting_rates_within_two_percent(self):
        # Large population for a tight statistical check.
        scene = SceneSpec(
            planes=(
                PlaneSpec(
                    normal=(0.0, 0.0, 1.0),
                    offset=0.6,
                    center=(0.0, 0.0, 0.6),
                    half_extents=(0.2, 0.15),
                    count=5000,
                ),
            ),
            seed=1,
            clutter_count=5000,
            clutter_box=((-0.2, 0.2), (-0.15, 0.15), (0.5, 0.7)),
        )
        world = generate_scene(scene)
        pose = Pose(Rotation.identity(), np.array([0.01, 0.0, 0.0]))
        lighting = LightingProxySpec(
            off_plane_outlier_fraction=0.6, in_plane_outlier_fraction=0.05
        )
        obs = observe(
            world, pose, DESK_INTRINSICS, DESK_IMAGE_SIZE, lighting=lighting, seed=9
        )
        moved = (
            np.abs(obs.correspondences.b - obs.truth.clean_b).max(axis=1) > 1e-9
        )
        in_plane = np.isin(obs.correspondences.track_id, world.track_id[world.in_plane_tracks()])
        off_rate = moved[~in_plane].mean()
        in_rate = moved[in_plane].mean()
        assert abs(off_rate - 0.6) < 0.02
        assert abs(in_rate - 0.05) < 0.02

    def test_dropout_removes_pairs(self):
        world = generate_scene(corner_scene(seed=1))
        base = observe(world, Pose.identity(), DESK_INTRINSICS, DESK_IMAGE_SIZE, seed=0)
        dropped = observe(
            world,
            Pose.identity(),
            DESK_INTRINSICS,
            DESK_IMAGE_SIZE,
            lighting=LightingProxySpec(dropout_fraction=0.25),
            seed=0,
        )
        assert len(dropped.correspondences) == pytest.approx(
            0.75 * len(base.correspondences), abs=1.0
        )

    def test_reference_pixels_inside_reference_regions(self):
        # Visibility consistency for in-plane tracks.
        world = generate_scene(corner_scene(seed=1))
        pose = Pose(Rotation.about_z(3.0), np.array([0.02, -0.01, 0.01]))
        obs = observe(world, pose, DESK_INTRINSICS, DESK_IMAGE_SIZE, seed=2)
        c = obs.correspondences
        in_plane = c.plane_label > 0
        labels = obs.mask_ref.label_at(c.a[in_plane])
        assert (labels == c.plane_label[in_plane]).all()

    def test_mask_ids_contiguous_when_plane_out_of_view(self):
        scene = corner_scene(seed=1)
        world = generate_scene(scene)
        # Look far sideways so that some planes leave the frame.
        pose = Pose(Rotation.about_y(25.0), np.array([0.3, 0.0, 0.0]))
        mask = render_plane_mask(world, pose, DESK_INTRINSICS, DESK_IMAGE_SIZE)
        present = np.unique(mask.labels)
        present = present[present > 0]
        assert present.tolist() == list(range(1, len(present) + 1))

    def test_occluded_points_are_culled(self):
        # A small patch in front of a big one: big-plane tracks behind the
        # small patch must not produce correspondences.
        scene = SceneSpec(
            planes=(
                PlaneSpec(
                    normal=(0.0, 0.0, 1.0),
                    offset=0.4,
                    center=(0.0, 0.0, 0.4),
                    half_extents=(0.05, 0.05),
                    count=50,
                ),
                PlaneSpec(
                    normal=(0.0, 0.0, 1.0),
                    offset=0.8,
                    center=(0.0, 0.0, 0.8),
                    half_extents=(0.3, 0.25),
                    count=800,
                ),
            ),
            seed=0,
        )
        world = generate_scene(scene)
        obs = observe(world, Pose.identity(), DESK_INTRINSICS, DESK_IMAGE_SIZE, seed=0)
        c = obs.correspondences
        behind = c.plane_label == 2
        labels_at = obs.mask_ref.label_at(c.a[behind])
        assert not (labels_at == 1).any()


class TestSimulatedExecutor:
    def _rig(self, x):
        return RigSpec(hand_eye=x, intrinsics=DESK_INTRINSICS, image_size=DESK_IMAGE_SIZE)

    def test_identity_hand_eye_pure_translation(self):
        world = generate_scene(corner_scene(seed=1))
        ex = SimulatedExecutor(world, self._rig(Pose.identity()), Pose.identity(), seed=1)
        t = np.array([0.01, -0.02, 0.03])
        obs = ex.execute(Pose(Rotation.identity(), t))
        rel = obs.truth.relative_pose
        assert rotation_angle(rel.rotation) < 1e-12
        np.testing.assert_allclose(np.linalg.norm(rel.translation), np.linalg.norm(t), atol=1e-15)

    def test_rotated_hand_eye_preserves_norm(self):
        world = generate_scene(corner_scene(seed=1))
        x = Pose(Rotation.about_z(90.0), np.array([0.05, 0.02, -0.04]))
        ex = SimulatedExecutor(world, self._rig(x), Pose.identity(), seed=1)
        t = np.array([0.01, 0.0, 0.0])
        obs = ex.execute(Pose(Rotation.identity(), t))
        rel = obs.truth.relative_pose
        assert rotation_angle(rel.rotation) < 1e-12
        assert np.linalg.norm(rel.translation) == pytest.approx(0.01, abs=1e-15)
        # Camera translation of the relative pose is -R_x t (frame A to B).
        np.testing.assert_allclose(
            rel.translation, -(x.rotation.matrix @ t), atol=1e-12
        )

    def test_exact_inverse_command_relocates(self):
        world = generate_scene(corner_scene(seed=1))
        rng = np.random.default_rng(4)
        x = random_pose(rng, 45.0, 0.1)
        offset = random_pose(rng, 8.0, 0.05)
        ex = SimulatedExecutor(world, self._rig(x), offset, seed=2)
        # Command the hand motion whose conjugated camera motion cancels
        # the offset exactly.
        command = compose(compose(x.inverse(), offset), x)
        obs = ex.execute(command)
        rel = obs.truth.relative_pose
        assert rotation_angle(rel.rotation) < 1e-9
        assert np.linalg.norm(rel.translation) < 1e-12

    def test_conjugation_matches_frame_chain_oracle(self):
        # Oracle: direct 4x4 homogeneous-matrix chain for the hidden
        # hand-eye conjugation the executor applies.
        rng = np.random.default_rng(11)
        for _ in range(100):
            x = random_pose(rng, 90.0, 0.3)
            command = random_pose(rng, 30.0, 0.1)
            expected = np.linalg.inv(
                x.matrix() @ command.matrix() @ np.linalg.inv(x.matrix())
            )
            camera_motion = compose(compose(x, command), x.inverse())
            np.testing.assert_allclose(
                np.linalg.inv(camera_motion.matrix()), expected, atol=1e-12
            )

    def test_executor_state_matches_conjugation(self):
        world = generate_scene(corner_scene(points_per_plane=60, seed=1))
        rng = np.random.default_rng(12)
        x = random_pose(rng, 60.0, 0.2)
        start = random_pose(rng, 5.0, 0.03)
        ex = SimulatedExecutor(world, self._rig(x), start, seed=0)
        command = random_pose(rng, 10.0, 0.02)
        ex.execute(command)
        camera_motion = compose(compose(x, command), x.inverse())
        expected = compose(camera_motion.inverse(), start)
        np.testing.assert_allclose(
            ex.true_residual.matrix(), expected.matrix(), atol=1e-12
        )

    def test_full_run_bit_reproducible(self):
        world = generate_scene(corner_scene(seed=3))
        x = Pose(Rotation.about_y(10.0), np.array([0.03, 0.0, 0.0]))
        traces = []
        for _ in range(2):
            ex = SimulatedExecutor(
                world,
                self._rig(x),
                Pose(Rotation.about_z(2.0), np.array([0.01, 0.0, 0.0])),
                noise=NoiseSpec(1.0, 0.5),
                seed=77,
            )
            obs1 = ex.observe()
            obs2 = ex.execute(Pose(Rotation.identity(), np.array([0, 0, 0.02])))
            traces.append((obs1.correspondences.b.copy(), obs2.correspondences.b.copy()))
        assert np.array_equal(traces[0][0], traces[1][0])
        assert np.array_equal(traces[0][1], traces[1][1])

    def test_identity_command_statistically_stable(self):
        world = generate_scene(corner_scene(seed=3))
        ex = SimulatedExecutor(
            world, self._rig(Pose.identity()), Pose.identity(), seed=5
        )
        before = ex.observe()
        after = ex.execute(Pose.identity())
        np.testing.assert_allclose(before.truth.clean_b, after.truth.clean_b, atol=1e-12)


class TestBenchSweep:
    def test_noiseless_general_scene_both_accurate(self):
        # On a non-degenerate scene both estimators are essentially exact
        # at zero noise.
        rows = bench_noise_sweep(
            corner_scene(points_per_plane=120, seed=2),
            Pose(Rotation.about_z(4.0), np.array([0.03, -0.02, 0.02])),
            r_values=[0.0],
            mu_values=[0.0],
            trials=2,
            seed=1,
            intr=DESK_INTRINSICS,
            image_size=DESK_IMAGE_SIZE,
        )
        for row in rows:
            assert row.rot_err_deg < 1e-4

    def test_row_count_and_determinism(self):
        args = dict(
            scene=single_plane_scene(points=300),
            motion=BENCH_MOTION,
            r_values=[0, 10],
            mu_values=[0.1, 0.5],
            trials=2,
            seed=5,
        )
        rows1 = bench_noise_sweep(**args)
        rows2 = bench_noise_sweep(**args)
        assert len(rows1) == 2 * 2 * 2 * 2
        for a, b in zip(rows1, rows2):
            assert a == b


class TestSpecValidation:
    def test_noise_spec_bounds(self):
        with pytest.raises(InvalidInputError):
            NoiseSpec(magnitude_r=-1.0)
        with pytest.raises(InvalidInputError):
            NoiseSpec(ratio_mu=1.5)

    def test_lighting_ordering(self):
        with pytest.raises(InvalidInputError):
            LightingProxySpec(
                off_plane_outlier_fraction=0.1, in_plane_outlier_fraction=0.5
            )

    def test_scene_requires_positive_offsets(self):
        with pytest.raises(InvalidSceneError):
            SceneSpec(
                planes=(PlaneSpec(normal=(0, 0, 1), offset=-1.0),), seed=0
            )
