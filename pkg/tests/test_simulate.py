"""Scene construction, sweep distortion, prior degradation, and
misalignment statistics tests.

The sweep tests verify the closed-form rolling-shutter model: a return
captured at time t is displaced from its true surface by exactly
velocity * t, and with zero ego motion every return lies on a surface.
"""

import numpy as np
import pytest

from depthalign.geom import (Intrinsics, RigidTransform, perturb_extrinsics,
                             render_sparse_depth)
from depthalign.simulate import (BACKGROUND, BBox2D, Cuboid, MissingSourceId,
                                 Plane, Scene, SceneSpec, SpecError,
                                 boundary_error_stats, box_iou, build_scene,
                                 camera_extrinsics, degrade_priors,
                                 ground_truth_boxes, lidar_sweep,
                                 random_scene_spec, raycast_pixels,
                                 render_true_views)

K = Intrinsics(220.0, 220.0, 128.0, 96.0, 256, 192)


def spec_from(cuboids, planes, ego=(0, 0, 0), sweep=0.1, na=600, ne=24,
              seed=0):
    return SceneSpec(seed=seed, cuboids=cuboids, planes=planes,
                     ego_velocity=np.asarray(ego, dtype=np.float64),
                     sweep_duration=sweep, rays_azimuth=na, rays_elevation=ne)


def ground(z=-1.6):
    return Plane(center=(0.0, 0.0, z), extent=(120.0, 120.0, 0.0))


def back_wall():
    return Plane(center=(45.0, 0.0, 3.2), extent=(0.0, 110.0, 9.6))


class TestBuildScene:
    def test_background_only(self):
        scene = build_scene(spec_from([], [ground()]))
        assert scene.n_foreground == 0
        assert len(scene.planes) == 1

    def test_counts_match_spec(self):
        spec = random_scene_spec(3, K, n_plates=5)
        scene = build_scene(spec)
        assert len(scene.cuboids) == len(spec.cuboids) == 5
        assert len(scene.planes) == len(spec.planes) == 2

    def test_determinism(self):
        a = random_scene_spec(11, K).to_json()
        b = random_scene_spec(11, K).to_json()
        assert a == b

    def test_generated_cuboids_disjoint(self):
        spec = random_scene_spec(3, K, n_plates=5)
        scene = build_scene(spec)
        for i in range(5):
            for j in range(i + 1, 5):
                overlap = np.minimum(scene.highs[i], scene.highs[j]) - \
                    np.maximum(scene.lows[i], scene.lows[j])
                assert not np.all(overlap > 0)

    def test_intersecting_cuboids_rejected(self):
        a = Cuboid(0, center=(10, 0, 0), extent=(2, 2, 2))
        b = Cuboid(1, center=(10.5, 0.5, 0), extent=(2, 2, 2))
        with pytest.raises(SpecError):
            build_scene(spec_from([a, b], [ground()]))

    def test_out_of_bounds_rejected(self):
        far = Cuboid(0, center=(70, 0, 0), extent=(2, 2, 2))
        with pytest.raises(SpecError):
            build_scene(spec_from([far], [ground()]))

    def test_plane_needs_one_zero_extent(self):
        solid = Plane.__new__(Plane)
        object.__setattr__(solid, "center", np.zeros(3))
        object.__setattr__(solid, "extent", np.array([1.0, 1.0, 1.0]))
        with pytest.raises(SpecError):
            build_scene(spec_from([], [solid]))

    def test_json_round_trip_exact_field_names(self):
        spec = random_scene_spec(4, K, n_plates=3)
        data = spec.to_json()
        assert set(data) == {"seed", "cuboids", "planes", "egoVelocity",
                             "sweepDuration", "lidar"}
        assert set(data["lidar"]) == {"raysAzimuth", "raysElevation"}
        assert set(data["cuboids"][0]) == {"class", "center", "extent"}
        clone = SceneSpec.from_json(data)
        assert clone.to_json() == data

    def test_unknown_fields_rejected(self):
        data = random_scene_spec(4, K).to_json()
        data["extra"] = 1
        with pytest.raises(SpecError):
            SceneSpec.from_json(data)


class TestLidarSweep:
    def test_zero_motion_points_on_surfaces(self):
        spec = random_scene_spec(0, K, n_plates=3, ego_speed=0.0)
        scene = build_scene(spec)
        cloud = lidar_sweep(scene, spec.ego_velocity, spec.sweep_duration,
                            600, 24)
        assert len(cloud) > 0
        lo = scene.lows[cloud.source_ids]
        hi = scene.highs[cloud.source_ids]
        inside = np.maximum(lo - cloud.positions, cloud.positions - hi)
        assert np.max(inside) < 1e-9

    def test_displacement_equals_speed_times_time(self):
        # Recorded point + velocity * t must land back on the source
        # surface (the constant-velocity rolling-shutter closed form).
        spec = random_scene_spec(1, K, n_plates=3, ego_speed=10.0)
        scene = build_scene(spec)
        cloud = lidar_sweep(scene, spec.ego_velocity, spec.sweep_duration,
                            600, 24)
        true_points = cloud.positions + cloud.timestamps[:, None] * \
            spec.ego_velocity[None, :]
        lo = scene.lows[cloud.source_ids]
        hi = scene.highs[cloud.source_ids]
        inside = np.maximum(lo - true_points, true_points - hi)
        assert np.max(inside) < 1e-8
        displacement = np.linalg.norm(
            true_points - cloud.positions, axis=1)
        np.testing.assert_allclose(
            displacement, 10.0 * cloud.timestamps, atol=1e-9)

    def test_end_of_sweep_displacement_magnitude(self):
        # A wall behind the vehicle is revisited by the last rays of the
        # sweep; their displacement approaches speed * sweep_duration.
        wall = Plane(center=(-20.0, 0.0, 0.0), extent=(0.0, 40.0, 10.0))
        scene = build_scene(spec_from([], [wall], ego=(10, 0, 0)))
        cloud = lidar_sweep(scene, np.array([10.0, 0, 0]), 0.1, 500, 5,
                            elev_min_deg=-2, elev_max_deg=2)
        last = np.argmax(cloud.timestamps)
        expected = 10.0 * cloud.timestamps[last]
        assert expected > 0.095  # nearly a full sweep
        true_pt = cloud.positions[last] + \
            np.array([10.0, 0, 0]) * cloud.timestamps[last]
        np.testing.assert_allclose(true_pt - cloud.positions[last],
                                   [expected, 0, 0], atol=1e-12)

    def test_doubling_azimuth_rays_doubles_count(self):
        # Four walls surround the sensor, so every azimuth produces a hit.
        walls = [Plane(center=(30, 0, 0), extent=(0, 60, 10)),
                 Plane(center=(-30, 0, 0), extent=(0, 60, 10)),
                 Plane(center=(0, 30, 0), extent=(60, 0, 10)),
                 Plane(center=(0, -30, 0), extent=(60, 0, 10))]
        scene = build_scene(spec_from([], walls))
        n1 = len(lidar_sweep(scene, np.zeros(3), 0.1, 400, 8,
                             elev_min_deg=-4, elev_max_deg=4))
        n2 = len(lidar_sweep(scene, np.zeros(3), 0.1, 800, 8,
                             elev_min_deg=-4, elev_max_deg=4))
        assert abs(n2 - 2 * n1) <= 0.05 * 2 * n1

    def test_timestamps_within_sweep(self):
        spec = random_scene_spec(2, K, n_plates=2)
        scene = build_scene(spec)
        cloud = lidar_sweep(scene, spec.ego_velocity, 0.1, 300, 16)
        assert cloud.timestamps.min() >= 0.0
        assert cloud.timestamps.max() < 0.1

    def test_determinism_bit_identical(self):
        spec = random_scene_spec(5, K, n_plates=3)
        scene = build_scene(spec)
        a = lidar_sweep(scene, spec.ego_velocity, 0.1, 500, 16, seed=3)
        b = lidar_sweep(scene, spec.ego_velocity, 0.1, 500, 16, seed=3)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.timestamps, b.timestamps)
        np.testing.assert_array_equal(a.source_ids, b.source_ids)

    def test_class_ids_recorded(self):
        spec = random_scene_spec(6, K, n_plates=3)
        scene = build_scene(spec)
        cloud = lidar_sweep(scene, np.zeros(3), 0.1, 800, 32)
        fg = cloud.source_ids < scene.n_foreground
        assert np.all(cloud.class_ids[~fg] == BACKGROUND)
        assert np.all(cloud.class_ids[fg] >= 0)
        assert fg.any() and (~fg).any()


class TestGroundTruthBoxes:
    def test_cuboid_behind_camera_no_box(self):
        behind = Cuboid(0, center=(-20, 0, 0), extent=(2, 2, 2))
        scene = build_scene(spec_from([behind], [ground()]))
        t = camera_extrinsics(np.zeros(3), 0.1)
        assert ground_truth_boxes(scene, K, t) == []

    def test_axis_centered_cuboid_box_centered(self):
        cube = Cuboid(0, center=(20, 0, 0), extent=(2, 2, 2))
        scene = build_scene(spec_from([cube], []))
        t = camera_extrinsics(np.zeros(3), 0.1)
        (box,) = ground_truth_boxes(scene, K, t)
        assert abs((box.u_min + box.u_max) / 2 - K.cx) <= 1.0
        assert abs((box.v_min + box.v_max) / 2 - K.cy) <= 1.0

    def test_pinhole_similar_triangles_width(self):
        # 2 m cube 20 m ahead: the near face (19 m) bounds the box, so the
        # half width is fx * 1 / 19.
        cube = Cuboid(0, center=(20, 0, 0), extent=(2, 2, 2))
        scene = build_scene(spec_from([cube], []))
        k = Intrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)
        t = camera_extrinsics(np.zeros(3), 0.1)
        (box,) = ground_truth_boxes(scene, k, t)
        half = 100.0 * 1.0 / 19.0
        np.testing.assert_allclose(box.u_max - box.u_min, 2 * half, atol=1e-9)
        np.testing.assert_allclose(box.v_max - box.v_min, 2 * half, atol=1e-9)

    def test_plate_box_matches_projection(self):
        spec = random_scene_spec(7, K, n_plates=4)
        scene = build_scene(spec)
        t = camera_extrinsics(spec.ego_velocity, spec.sweep_duration)
        boxes = ground_truth_boxes(scene, K, t)
        assert len(boxes) == 4
        for box in boxes:
            assert 0 <= box.u_min < box.u_max <= K.width - 1
            assert 0 <= box.v_min < box.v_max <= K.height - 1
            assert not box.is_spurious


class TestDegradePriors:
    def _boxes(self, n, seed=0):
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            u0 = rng.uniform(0, K.width - 30)
            v0 = rng.uniform(0, K.height - 30)
            out.append(BBox2D(u0, v0, u0 + rng.uniform(5, 25),
                              v0 + rng.uniform(5, 25),
                              int(rng.integers(0, 10))))
        return out

    def test_zero_rates_identity(self):
        boxes = self._boxes(20)
        out = degrade_priors(boxes, 0.0, 0.0, 0.0, seed=4,
                             width=K.width, height=K.height)
        assert len(out) == 20
        for a, b in zip(out, boxes):
            assert (a.u_min, a.v_min, a.u_max, a.v_max, a.class_id) == \
                (b.u_min, b.v_min, b.u_max, b.v_max, b.class_id)

    def test_total_dropout(self):
        out = degrade_priors(self._boxes(20), 1.0, 0.0, 0.0, seed=4,
                             width=K.width, height=K.height)
        assert out == []

    def test_binomial_survivor_bound(self):
        # 1000 boxes at 10% drop rate: survivors within 3 sigma of 900.
        boxes = self._boxes(1000)
        for seed in range(3):
            out = degrade_priors(boxes, 0.1, 0.0, 0.0, seed=seed,
                                 width=K.width, height=K.height)
            survivors = sum(1 for b in out if not b.is_spurious)
            assert abs(survivors - 900) <= 30

    def test_jitter_bounded_and_valid(self):
        boxes = self._boxes(50, seed=1)
        out = degrade_priors(boxes, 0.0, 0.0, 2.0, seed=9,
                             width=K.width, height=K.height)
        assert len(out) == 50
        for a, b in zip(out, boxes):
            for new, old in ((a.u_min, b.u_min), (a.v_min, b.v_min),
                             (a.u_max, b.u_max), (a.v_max, b.v_max)):
                assert abs(new - old) <= 2.0 + 1e-12
            assert a.u_min < a.u_max and a.v_min < a.v_max

    def test_spurious_properties(self):
        boxes = self._boxes(40, seed=2)
        out = degrade_priors(boxes, 0.0, 0.5, 0.0, seed=5,
                             width=K.width, height=K.height)
        spurious = [b for b in out if b.is_spurious]
        assert len(out) == 40 + len(spurious)
        assert spurious, "expected some spurious boxes at 50% rate"
        for s in spurious:
            assert 0 <= s.class_id < 10
            assert all(box_iou(s, b) < 0.1 for b in boxes)
            assert 0 <= s.u_min < s.u_max <= K.width - 1

    def test_deterministic(self):
        boxes = self._boxes(30, seed=3)
        a = degrade_priors(boxes, 0.2, 0.2, 1.5, seed=8, width=K.width,
                           height=K.height)
        b = degrade_priors(boxes, 0.2, 0.2, 1.5, seed=8, width=K.width,
                           height=K.height)
        assert [(x.u_min, x.v_min, x.u_max, x.v_max, x.class_id,
                 x.is_spurious) for x in a] == \
            [(x.u_min, x.v_min, x.u_max, x.v_max, x.class_id,
              x.is_spurious) for x in b]

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            degrade_priors([], -0.1, 0.0, 0.0, 0, width=10, height=10)


def run_sim(seed, rot_noise_deg, ego_speed):
    spec = random_scene_spec(seed, K, n_plates=5, ego_speed=ego_speed)
    scene = build_scene(spec)
    cloud = lidar_sweep(scene, spec.ego_velocity, spec.sweep_duration,
                        spec.rays_azimuth, spec.rays_elevation)
    t_true = camera_extrinsics(spec.ego_velocity, spec.sweep_duration)
    t_render = perturb_extrinsics(t_true, rot_noise_deg, 0.0, seed=seed)
    d_raw = render_sparse_depth(cloud, K, t_render)
    boxes = ground_truth_boxes(scene, K, t_true)
    return scene, d_raw, boxes, t_true


class TestBoundaryErrorStats:
    def test_perfect_calibration_no_misplacement(self):
        scene, d_raw, boxes, t_true = run_sim(0, 0.0, 0.0)
        stats = boundary_error_stats(d_raw, scene, K, t_true, boxes, 4.0)
        assert stats.misplaced_count == 0
        assert stats.total_count > 0

    def test_noise_concentrates_misplacement_at_boundaries(self):
        scene, d_raw, boxes, t_true = run_sim(0, 0.5, 10.0)
        stats = boundary_error_stats(d_raw, scene, K, t_true, boxes, 4.0)
        assert stats.misplaced_count > 0
        assert stats.boundary_fraction >= 0.8
        assert stats.mean_abs_error_misplaced > stats.mean_abs_error_correct

    def test_background_only_scene(self):
        scene = build_scene(spec_from([], [ground(), back_wall()]))
        cloud = lidar_sweep(scene, np.zeros(3), 0.1, 600, 24)
        t_true = camera_extrinsics(np.zeros(3), 0.1)
        d_raw = render_sparse_depth(cloud, K, t_true)
        stats = boundary_error_stats(d_raw, scene, K, t_true, [], 4.0)
        assert stats.misplaced_count == 0

    def test_missing_source_id(self):
        scene, d_raw, boxes, t_true = run_sim(1, 0.0, 0.0)
        stripped = type(d_raw)(d_raw.depth.copy(), None)
        with pytest.raises(MissingSourceId):
            boundary_error_stats(stripped, scene, K, t_true, boxes, 4.0)


class TestTrueViews:
    def test_true_depth_matches_projection_of_static_cloud(self):
        # With zero motion, rendered LiDAR depths agree exactly with the
        # ray-cast true depth wherever both see the same fronto-parallel
        # surface (plates and the back wall have constant camera depth, so
        # sub-pixel ray offsets cannot change it).
        scene, d_raw, boxes, t_true = run_sim(2, 0.0, 0.0)
        depth_img, class_img, src_img = render_true_views(scene, K, t_true)
        rows, cols = np.nonzero(d_raw.depth)
        same = src_img[rows, cols] == d_raw.source_id[rows, cols]
        flat = scene.highs[:, 0] - scene.lows[:, 0] == 0
        sel = same & flat[d_raw.source_id[rows, cols]]
        assert np.count_nonzero(sel) > 1000
        np.testing.assert_allclose(d_raw.depth[rows, cols][sel],
                                   depth_img[rows, cols][sel], atol=1e-9)

    def test_class_image_consistent_with_sources(self):
        scene, d_raw, boxes, t_true = run_sim(3, 0.0, 0.0)
        _, class_img, src_img = render_true_views(scene, K, t_true)
        fg = (src_img >= 0) & (src_img < scene.n_foreground)
        assert np.all(class_img[fg] >= 0)
        assert np.all(class_img[~fg] < 0)

    def test_raycast_depth_is_camera_frame_z(self):
        wall = Plane(center=(30.0, 0.0, 0.0), extent=(0.0, 80.0, 30.0))
        scene = build_scene(spec_from([], [wall]))
        t = camera_extrinsics(np.zeros(3), 0.1)
        depth, _, _ = raycast_pixels(
            scene, K, t, np.array([K.cx, 10.0]), np.array([K.cy, 20.0]))
        # Every pixel ray reaches the wall plane x=30 -> camera z = 30.
        np.testing.assert_allclose(depth, 30.0, atol=1e-9)
