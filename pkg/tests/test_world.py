"""Scene generation, Lidar sampling, teacher rendering, and BEV labels."""

from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from bevlab.geometry import (CameraModel, RigidTransform, cast_rays,
                             pixel_rays, project_points)
from bevlab.targets import GridSpec
from bevlab.world import (BARRIER, VEHICLE, Box, Scene, TeacherEmbedding,
                          WorldConfig, build_camera_rig, build_sample,
                          generate_scene, make_bev_labels, render_teacher,
                          sample_lidar)

CFG = WorldConfig()


def surface_distance(points, scene):
    """Distance from each point to the nearest scene surface.

    Ground is the z=0 plane; each box contributes |signed distance| to
    its boundary (exact SDF of an oriented box).
    """
    d = np.abs(points[:, 2])
    for box in scene.boxes:
        cy, sy = np.cos(box.yaw), np.sin(box.yaw)
        rot = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        local = (points - box.center) @ rot
        q = np.abs(local) - box.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        d = np.minimum(d, np.abs(outside + inside))
    return d


def scenes_equal(a, b):
    if len(a.boxes) != len(b.boxes):
        return False
    return all(
        np.array_equal(x.center, y.center)
        and np.array_equal(x.half_extents, y.half_extents)
        and x.yaw == y.yaw and x.class_id == y.class_id
        for x, y in zip(a.boxes, b.boxes))


class TestGenerateScene:
    def test_deterministic(self):
        assert scenes_equal(generate_scene(7, CFG), generate_scene(7, CFG))

    def test_zero_boxes_gives_ground_only(self):
        cfg = replace(CFG, n_boxes=(0, 0))
        assert generate_scene(3, cfg).boxes == []

    def test_boxes_stay_inside_grid(self):
        for seed in range(30):
            for box in generate_scene(seed, CFG).boxes:
                r = np.hypot(box.half_extents[0], box.half_extents[1])
                assert abs(box.center[0]) + r <= 8.0 + 1e-12
                assert abs(box.center[1]) + r <= 8.0 + 1e-12
                assert box.center[2] == box.half_extents[2]  # rests on ground

    def test_some_box_visible_from_rig(self):
        cams = build_camera_rig(CFG)
        for seed in range(30):
            centers = np.stack([b.center for b in generate_scene(seed, CFG).boxes])
            assert any(project_points(centers, cam)[2].any() for cam in cams)

    def test_every_scene_has_a_vehicle(self):
        for seed in range(50):
            classes = [b.class_id for b in generate_scene(seed, CFG).boxes]
            assert VEHICLE in classes

    def test_vehicle_prob_zero_means_no_vehicles(self):
        cfg = replace(CFG, vehicle_prob=0.0)
        for seed in range(10):
            assert all(b.class_id == BARRIER
                       for b in generate_scene(seed, cfg).boxes)

    def test_centers_cover_quadrants_uniformly(self):
        """Chi-square sanity on box-center quadrants over 100 seeds."""
        centers = np.concatenate([
            np.stack([b.center[:2] for b in generate_scene(s, CFG).boxes])
            for s in range(100)])
        quadrant = (centers[:, 0] > 0).astype(int) * 2 + (centers[:, 1] > 0)
        counts = np.bincount(quadrant, minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01


class TestSampleLidar:
    def test_ground_only_points_have_zero_z(self):
        scene = generate_scene(0, replace(CFG, n_boxes=(0, 0)))
        pts = sample_lidar(scene, 500, seed=1)
        assert pts.shape == (500, 3)
        assert np.all(pts[:, 2] == 0.0)

    def test_single_point(self):
        pts = sample_lidar(generate_scene(0, CFG), 1, seed=2)
        assert pts.shape == (1, 3)

    def test_nonpositive_count_rejected(self):
        with pytest.raises(ValueError):
            sample_lidar(generate_scene(0, CFG), 0, seed=0)

    def test_unit_box_gets_area_proportional_share(self):
        """Point share of one unit box vs. ground, 3-sigma binomial bound."""
        box = Box(np.array([2.0, -1.0, 0.5]), np.array([0.5, 0.5, 0.5]),
                  0.0, VEHICLE)
        scene = Scene([box], (-8.0, 8.0), (-8.0, 8.0), seed=0)
        n = 20000
        pts = sample_lidar(scene, n, seed=3)
        # box points are the ones off the ground plane
        on_box = int((pts[:, 2] > 1e-9).sum())
        p = 5.0 / (256.0 + 5.0)  # exposed box area over total area
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(on_box - n * p) <= 3 * sigma

    def test_points_lie_on_surfaces(self):
        for seed in (0, 4):
            scene = generate_scene(seed, CFG)
            pts = sample_lidar(scene, 512, seed=seed + 10)
            assert surface_distance(pts, scene).max() < 1e-6

    def test_deterministic(self):
        scene = generate_scene(1, CFG)
        assert np.array_equal(sample_lidar(scene, 256, seed=5),
                              sample_lidar(scene, 256, seed=5))


# a projection can be valid yet occluded (back faces, ground behind a box),
# so the matched fraction depends on how cluttered the scene is
@pytest.mark.parametrize("n_boxes,min_matched", [((1, 1), 0.5), (CFG.n_boxes, 0.1)])
def test_projection_and_ray_cast_agree_on_lidar_points(n_boxes, min_matched):
    """A visible Lidar point, re-shot through its own pixel, is hit at its
    own range (or something strictly nearer occludes it)."""
    cfg = replace(CFG, n_boxes=n_boxes)
    scene = generate_scene(3, cfg)
    pts = sample_lidar(scene, 256, seed=9)
    matched = total = 0
    for cam in build_camera_rig(cfg):
        uv, _, valid = project_points(pts, cam)
        if not valid.any():
            continue
        origin, dirs = pixel_rays(cam, uv[valid, 0], uv[valid, 1])
        hit, t, _ = cast_rays(np.broadcast_to(origin, dirs.shape), dirs, scene)
        dist = np.linalg.norm(pts[valid] - origin, axis=1)
        assert hit.all()
        assert np.all(t <= dist + 0.05)  # never hits *behind* the point
        matched += int((np.abs(t - dist) < 0.05).sum())
        total += int(valid.sum())
    assert total > 100
    assert matched / total > min_matched


class TestTeacher:
    def test_make_draws_distinct_unit_vectors(self):
        for seed in range(4):
            emb = TeacherEmbedding.make(16, seed=seed)
            norms = np.linalg.norm(emb.class_vectors, axis=1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-12)
            gram = emb.class_vectors @ emb.class_vectors.T
            assert (gram - np.diag(np.diag(gram))).max() < 0.5

    def test_similar_vectors_rejected(self):
        v = np.zeros((2, 8))
        v[:, 0] = 1.0
        with pytest.raises(ValueError):
            TeacherEmbedding(v)

    def test_impossible_request_raises(self):
        # 40 nearly-orthogonal directions do not fit in 3 dims
        with pytest.raises(ValueError):
            TeacherEmbedding.make(3, n_classes=40, seed=0)

    def test_feature_at_known_positions(self):
        emb = TeacherEmbedding.make(16, seed=0)
        e = emb.class_vectors[VEHICLE]
        at_origin = emb.feature_at(np.array([VEHICLE]), np.zeros((1, 3)))[0]
        np.testing.assert_allclose(at_origin, e, atol=1e-15)
        # sin(omega . p) = 1 at p = (pi/(2*0.9), 0, 0)
        p = np.array([[np.pi / (2 * 0.9), 0.0, 0.0]])
        peak = emb.feature_at(np.array([VEHICLE]), p)[0]
        np.testing.assert_allclose(peak, 1.25 * e, atol=1e-12)

    def test_sky_camera_renders_zeros(self):
        scene = generate_scene(0, replace(CFG, n_boxes=(0, 0)))
        rot = np.array([[0.0, -1.0, 0.0],   # x_cam
                        [1.0, 0.0, 0.0],    # y_cam
                        [0.0, 0.0, 1.0]])   # optical axis: straight up
        center = np.array([0.0, 0.0, 2.0])
        cam = CameraModel(48.0, 48.0, 47.5, 31.5, 96, 64, 24, 16,
                          RigidTransform(rot, -rot @ center))
        fmap = render_teacher(scene, cam, TeacherEmbedding.make(16))
        assert fmap.shape == (16, 16, 24)
        assert np.all(fmap == 0.0)

    def test_vehicle_face_dominates_central_cell(self):
        emb = TeacherEmbedding.make(16, seed=0)
        wall = Box(np.array([4.0, 0.0, 1.25]), np.array([0.5, 3.0, 1.25]),
                   0.0, VEHICLE)
        scene = Scene([wall], (-8.0, 8.0), (-8.0, 8.0), seed=0)
        cam = build_camera_rig(CFG)[0]  # looks along +x
        fmap = render_teacher(scene, cam, emb)
        center = fmap[:, cam.feat_height // 2, cam.feat_width // 2]
        cos = center @ emb.class_vectors[VEHICLE] / np.linalg.norm(center)
        assert cos >= 1.0 - emb.alpha

    def test_hit_norms_stay_in_modulation_band(self):
        emb = TeacherEmbedding.make(16, seed=1)
        scene = generate_scene(2, CFG)
        for cam in build_camera_rig(CFG):
            fmap = render_teacher(scene, cam, emb)
            norms = np.linalg.norm(fmap, axis=0).ravel()
            hits = norms > 0
            assert hits.any()
            assert norms[hits].min() >= 1 - emb.alpha - 1e-12
            assert norms[hits].max() <= 1 + emb.alpha + 1e-12

    def test_render_deterministic(self):
        emb = TeacherEmbedding.make(16, seed=2)
        scene = generate_scene(4, CFG)
        cam = build_camera_rig(CFG)[1]
        assert np.array_equal(render_teacher(scene, cam, emb),
                              render_teacher(scene, cam, emb))


class TestBevLabels:
    def test_no_boxes_all_background(self):
        scene = Scene([], (-8.0, 8.0), (-8.0, 8.0), seed=0)
        assert np.all(make_bev_labels(scene, GridSpec.desk()) == 0)

    def test_axis_aligned_footprint_block(self):
        """4m x 2m vehicle at the origin on a 0.5 m grid -> 8x4 cell block."""
        grid = GridSpec((-8.0, 8.0), (-8.0, 8.0), (0.0, 4.0), 32, 32, 8)
        box = Box(np.array([0.0, 0.0, 0.5]), np.array([2.0, 1.0, 0.5]),
                  0.0, VEHICLE)
        labels = make_bev_labels(Scene([box], (-8, 8), (-8, 8), 0), grid)
        assert labels.sum() == 32
        expect = np.zeros((32, 32), dtype=np.int64)
        expect[14:18, 12:20] = 1
        assert np.array_equal(labels, expect)

    def test_diamond_footprint_count(self):
        # unit-half square at 45 degrees: |x|+|y| <= sqrt(2) covers the four
        # cell centers at (+-0.5, +-0.5) on the 1 m desk grid and nothing else
        box = Box(np.array([0.0, 0.0, 0.5]), np.array([1.0, 1.0, 0.5]),
                  np.pi / 4, VEHICLE)
        labels = make_bev_labels(Scene([box], (-8, 8), (-8, 8), 0), GridSpec.desk())
        assert labels.sum() == 4
        assert np.all(labels[7:9, 7:9] == 1)

    def test_half_turn_leaves_labels_unchanged(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            center = np.array([*rng.uniform(-5, 5, 2), 0.7])
            half = np.array([*rng.uniform(0.5, 2.5, 2), 0.7])
            yaw = float(rng.uniform(0, 2 * np.pi))
            a = Box(center, half, yaw, VEHICLE)
            b = Box(center, half, yaw + np.pi, VEHICLE)
            ga = make_bev_labels(Scene([a], (-8, 8), (-8, 8), 0), GridSpec.desk())
            gb = make_bev_labels(Scene([b], (-8, 8), (-8, 8), 0), GridSpec.desk())
            assert np.array_equal(ga, gb)

    def test_barriers_are_background(self):
        box = Box(np.array([0.0, 0.0, 0.5]), np.array([2.0, 1.0, 0.5]),
                  0.0, BARRIER)
        labels = make_bev_labels(Scene([box], (-8, 8), (-8, 8), 0), GridSpec.desk())
        assert np.all(labels == 0)


class TestRigAndSamples:
    def test_rig_layout(self):
        cams = build_camera_rig(CFG)
        assert len(cams) == 4
        for k, cam in enumerate(cams):
            yaw = np.pi / 2 * k
            np.testing.assert_allclose(cam.extrinsic.rotation[2],
                                       [np.cos(yaw), np.sin(yaw), 0.0], atol=1e-15)
            np.testing.assert_allclose(
                cam.center(), [0.5 * np.cos(yaw), 0.5 * np.sin(yaw), 1.6], atol=1e-12)
            assert (cam.width, cam.height) == (96, 64)
            assert (cam.feat_width, cam.feat_height) == (24, 16)
            # focal 48 on a 96-wide image: 90 degree horizontal FOV
            assert np.isclose(2 * np.degrees(np.arctan(cam.width / (2 * cam.fx))), 90.0)

    def test_build_sample_contract(self):
        emb = TeacherEmbedding.make(CFG.n_y, seed=0)
        scene = generate_scene(5, CFG)
        sample = build_sample(scene, CFG, emb, seed=5)
        assert sample.point_cloud.shape == (CFG.n_lidar_points, 3)
        assert len(sample.teacher_maps) == 4
        for fmap in sample.teacher_maps:
            assert fmap.shape == (CFG.n_y, 16, 24)
            assert np.isfinite(fmap).all()
        assert sample.bev_labels.shape == (16, 16)
        assert set(np.unique(sample.bev_labels)) <= {0, 1}
        again = build_sample(scene, CFG, emb, seed=5)
        assert np.array_equal(sample.point_cloud, again.point_cloud)
        assert all(np.array_equal(a, b) for a, b in
                   zip(sample.teacher_maps, again.teacher_maps))
