"""Tests for cloud fusion, leveling, dominant direction and scale recovery"""

import numpy as np
import pytest
from plyfile import PlyData

from cloud_builder import (
    CategoryHeight,
    LabeledPointCloud,
    SceneAlignment,
    align_scene,
    axis_align,
    build_cloud,
    estimate_dominant_direction,
    estimate_up,
    export_ply,
    reconstructed_heights,
    recover_scale,
)
from errors import InsufficientPointsError, InvalidInputError
from geometry import CameraIntrinsics, CameraPose, RigidTransform, project, rotation_between, rotation_z
from object_extract import Box
from scene_ingest import load_manifest
from synth_oracle import CEILING, FLOOR, WALL, export_manifest


def surface_distance(point, primitive):
    """Unsigned distance from a point to the surface of a box or vertical cylinder"""
    if isinstance(primitive, Box):
        q = np.abs(np.asarray(point) - primitive.center) - np.asarray(primitive.size) / 2
    else:
        radial = np.hypot(point[0] - primitive.center_xy[0], point[1] - primitive.center_xy[1]) - primitive.radius
        mid = 0.5 * (primitive.z_min + primitive.z_max)
        q = np.array([radial, abs(point[2] - mid) - 0.5 * (primitive.z_max - primitive.z_min)])
    outside = np.linalg.norm(np.maximum(q, 0.0))
    return abs(outside + min(q.max(), 0.0))


def wall_distance(point, polygon):
    best = np.inf
    for k in range(len(polygon)):
        a, b = np.asarray(polygon[k]), np.asarray(polygon[(k + 1) % len(polygon)])
        t = np.clip(np.dot(point[:2] - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
        best = min(best, np.linalg.norm(point[:2] - (a + t * (b - a))))
    return best


def test_minimal_cloud(minimal_manifest):
    manifest = load_manifest(minimal_manifest)
    cloud = build_cloud(manifest, stride=1)
    assert len(cloud) == 11
    # pixel (1, 1) sits at 1 m; fx = 2, cx = 1.5; row 0 lost its invalid pixel (3, 0)
    index = 3 + 1
    np.testing.assert_allclose(cloud.positions[index], [-0.25, 0.0, 1.0])
    assert cloud.labels[index] == 4
    assert set(cloud.frames.tolist()) == {0}


def test_stride_lattice_count(minimal_manifest):
    manifest = load_manifest(minimal_manifest)
    assert len(build_cloud(manifest, stride=2)) == 2 * 2
    assert len(build_cloud(manifest, stride=4)) == 1
    with pytest.raises(InvalidInputError):
        build_cloud(manifest, stride=0)


def test_synthetic_points_lie_on_surfaces(scene0, scene0_cloud):
    _, cloud = scene0_cloud
    for point, label in zip(cloud.positions[::97], cloud.labels[::97]):
        if label == FLOOR:
            assert abs(point[2]) < 1e-4
        elif label == CEILING:
            assert abs(point[2] - scene0.room.height) < 1e-4
        elif label == WALL:
            assert wall_distance(point, scene0.room.polygon) < 1e-4
        else:
            candidates = [o.primitive for o in scene0.primitives if o.label == label]
            assert min(surface_distance(point, p) for p in candidates) < 1e-4


def test_estimate_up_on_level_scene(scene0_cloud):
    manifest, cloud = scene0_cloud
    up = estimate_up(cloud, manifest.label_ids(["floor"]))
    np.testing.assert_allclose(up, [0.0, 0.0, 1.0], atol=1e-5)


def test_estimate_up_needs_floor():
    cloud = LabeledPointCloud(np.zeros((10, 3)), np.ones(10, dtype=np.int64), np.zeros(10, dtype=np.int64))
    with pytest.raises(InsufficientPointsError):
        estimate_up(cloud, [1])


def test_estimate_up_sign_follows_scene_mass():
    rng = np.random.default_rng(0)
    floor = np.column_stack([rng.uniform(0, 3, 200), rng.uniform(0, 3, 200), np.zeros(200)])
    stuff = np.column_stack([rng.uniform(0, 3, 100), rng.uniform(0, 3, 100), rng.uniform(-2, -0.1, 100)])
    cloud = LabeledPointCloud(np.vstack([floor, stuff]), np.array([1] * 200 + [2] * 100),
                              np.zeros(300, dtype=np.int64))
    np.testing.assert_allclose(estimate_up(cloud, [1]), [0.0, 0.0, -1.0], atol=1e-9)


def test_dominant_direction_axis_aligned(scene0_cloud):
    manifest, cloud = scene0_cloud
    yaw = estimate_dominant_direction(cloud, manifest.label_ids(["wall"]))
    assert min(yaw, 90.0 - yaw) < 0.5


def test_dominant_direction_of_turned_walls():
    """Two perpendicular walls turned by 20 degrees"""
    t = np.linspace(0, 4, 400)
    wall_a = np.column_stack([t, np.zeros_like(t)])
    wall_b = np.column_stack([np.zeros_like(t), t])
    xy = np.vstack([wall_a, wall_b]) @ rotation_z(20.0)[:2, :2].T
    points = np.column_stack([xy, np.full(len(xy), 1.0)])
    cloud = LabeledPointCloud(points, np.full(len(points), 2), np.zeros(len(points), dtype=np.int64))
    assert estimate_dominant_direction(cloud, [2]) == pytest.approx(20.0, abs=0.5)


def test_axis_align_uses_the_smaller_turn():
    cloud = LabeledPointCloud(np.array([[1.0, 0.0, 0.5]]), np.array([1]), np.array([0]))
    _, small = axis_align(cloud, (0, 0, 1), 30.0)
    np.testing.assert_allclose(small.rotation, rotation_z(-30.0), atol=1e-12)
    _, wrapped = axis_align(cloud, (0, 0, 1), 80.0)
    np.testing.assert_allclose(wrapped.rotation, rotation_z(10.0), atol=1e-12)


def test_axis_align_drops_floor_to_zero():
    positions = np.array([[0, 0, 1.2], [1, 0, 1.2], [0, 1, 1.2], [0, 0, 3.0]])
    cloud = LabeledPointCloud(positions, np.array([1, 1, 1, 2]), np.zeros(4, dtype=np.int64))
    aligned, alignment = axis_align(cloud, (0, 0, 1), 0.0, floor_ids=[1])
    assert alignment.offset == pytest.approx(1.2)
    np.testing.assert_allclose(aligned.positions[:, 2], [0, 0, 0, 1.8])


def test_recover_scale():
    estimate = recover_scale({"ceiling": CategoryHeight(1.2, 100)}, {"ceiling": 2.4})
    assert estimate.scale == pytest.approx(2.0)
    assert estimate.provenance == (("ceiling", 100),)
    assert not estimate.warning


def test_recover_scale_median_of_categories():
    heights = {"ceiling": CategoryHeight(1.2, 10), "desk": CategoryHeight(0.25, 10), "door": CategoryHeight(1.0, 5)}
    estimate = recover_scale(heights, {"ceiling": 2.4, "desk": 0.75, "door": 2.0})
    # ratios 2.0, 3.0 and 2.0
    assert estimate.scale == pytest.approx(2.0)


def test_recover_scale_without_reference():
    estimate = recover_scale({"sofa": CategoryHeight(0.8, 10)}, {"ceiling": 2.4})
    assert estimate.scale == 1.0
    assert estimate.warning


def test_reconstructed_heights():
    z = np.linspace(0.0, 1.0, 101)
    positions = np.column_stack([np.zeros(202), np.zeros(202), np.concatenate([z, z + 2.0])])
    labels = np.array([7] * 101 + [3] * 101)
    cloud = LabeledPointCloud(positions, labels, np.zeros(202, dtype=np.int64))
    heights = reconstructed_heights(cloud, {3: "ceiling", 7: "desk"}, ["ceiling", "desk"], ["ceiling"])
    assert heights["ceiling"].height == pytest.approx(2.5)
    assert heights["desk"].height == pytest.approx(0.9)


def test_alignment_round_trip_and_poses():
    alignment = SceneAlignment(rotation_between((0.1, -0.2, 1.0), (0, 0, 1)), 0.7, 2.5)
    points = np.random.default_rng(4).normal(size=(6, 3))
    np.testing.assert_allclose(alignment.to_reconstruction(alignment.to_aligned(points)), points, atol=1e-12)
    assert SceneAlignment.from_dict(alignment.to_dict()).to_dict() == alignment.to_dict()

    K = CameraIntrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)
    pose = CameraPose(rotation_z(15.0), np.array([0.1, 0.2, 3.0]))
    aligned_pose = alignment.pose_to_aligned(pose)
    point = np.array([0.2, -0.1, 0.4])
    raw = project(point, pose, K)
    moved = project(alignment.to_aligned([point])[0], aligned_pose, K)
    assert moved.pixel.i == pytest.approx(raw.pixel.i)
    assert moved.pixel.j == pytest.approx(raw.pixel.j)
    assert moved.z == pytest.approx(2.5 * raw.z)


def test_alignment_rejects_bad_scale():
    with pytest.raises(InvalidInputError):
        SceneAlignment(np.eye(3), 0.0, 0.0)


def _align(manifest_path):
    manifest = load_manifest(manifest_path)
    cloud = build_cloud(manifest)
    return align_scene(cloud, manifest.labels, manifest.label_ids(["floor"]), manifest.label_ids(["wall"]),
                       manifest.reference_heights)


def test_half_scale_export_recovers_scale(tmp_path, scene0):
    tilt = RigidTransform(rotation_between((0.05, 0.1, 1.0), (0, 0, 1)) @ rotation_z(25.0), np.array([1.0, -2.0, 0.5]))
    path = export_manifest(scene0, str(tmp_path), scale=2.0, recon_transform=tilt)
    aligned, alignment = _align(path)
    assert alignment.scale == pytest.approx(2.0, rel=1e-6)
    floor = aligned.positions[aligned.labels == FLOOR]
    assert np.max(np.abs(floor[:, 2])) < 1e-3


def test_noisy_export_recovers_scale_within_two_percent(tmp_path, scene0):
    path = export_manifest(scene0, str(tmp_path), scale=2.0, noise=0.01, noise_seed=5)
    _, alignment = _align(path)
    assert alignment.scale == pytest.approx(2.0, rel=0.02)


def test_export_ply(tmp_path, scene0_cloud):
    _, cloud = scene0_cloud
    path = str(tmp_path / "cloud.ply")
    export_ply(cloud, path)
    vertex = PlyData.read(path)["vertex"]
    assert vertex.count == len(cloud)
    assert int(vertex["label"][0]) == int(cloud.labels[0])


def toy_room(seed=3):
    """Floor on z = 0, two detached walls along x and y, and a cabinet face above the floor"""
    rng = np.random.default_rng(seed)
    floor = np.column_stack([rng.uniform(0, 4, 900), rng.uniform(0, 5, 900), np.zeros(900)])
    s, z = np.meshgrid(np.linspace(0.3, 3.7, 171), [0.5, 1.0, 1.5, 2.0])
    wall_x = np.column_stack([s.ravel(), np.zeros(s.size), z.ravel()])
    wall_y = np.column_stack([np.full(s.size, 4.0), s.ravel() + 0.8, z.ravel()])
    cabinet = np.column_stack([np.full(60, 1.0), rng.uniform(2, 2.5, 60), rng.uniform(0.1, 1.2, 60)])
    positions = np.vstack([floor, wall_x, wall_y, cabinet])
    labels = np.array([1] * 900 + [2] * (2 * s.size) + [4] * 60)
    return LabeledPointCloud(positions, labels, np.zeros(len(labels), dtype=np.int64))


def realign(cloud):
    up = estimate_up(cloud, [1])
    leveled = cloud.positions @ rotation_between(up, (0, 0, 1)).T
    yaw = estimate_dominant_direction(cloud.with_positions(leveled), [2])
    return axis_align(cloud, up, yaw, floor_ids=[1])


PRE_ROTATION = rotation_z(20.0) @ rotation_between((0, 0, 1), (0.05, -0.08, 1.0))


def test_estimate_up_on_tilted_floor():
    room = toy_room()
    tilted = room.with_positions(room.positions @ PRE_ROTATION.T)
    np.testing.assert_allclose(estimate_up(tilted, [1]), PRE_ROTATION @ [0.0, 0.0, 1.0], atol=1e-6)


def test_estimate_up_tolerates_outliers():
    room = toy_room()
    rng = np.random.default_rng(11)
    # 100 stray floor-labelled points against 900 true ones
    stray = np.column_stack([rng.uniform(0, 4, 100), rng.uniform(0, 5, 100), rng.uniform(0, 2.5, 100)])
    labels = np.concatenate([room.labels, np.ones(100, dtype=np.int64)])
    noisy = LabeledPointCloud(np.vstack([room.positions, stray]), labels, np.zeros(len(labels), dtype=np.int64))
    up = estimate_up(noisy, [1])
    assert np.degrees(np.arccos(np.clip(up[2], -1.0, 1.0))) < 2.0


def test_axis_align_undoes_a_known_rotation():
    room = toy_room()
    turned = room.with_positions(room.positions @ PRE_ROTATION.T)
    aligned, alignment = realign(turned)
    np.testing.assert_allclose(alignment.rotation, PRE_ROTATION.T, atol=1e-6)
    assert alignment.offset == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(aligned.positions, room.positions, atol=1e-6)


def test_aligning_twice_changes_nothing():
    room = toy_room()
    once, _ = realign(room.with_positions(room.positions @ PRE_ROTATION.T))
    twice, alignment = realign(once)
    np.testing.assert_allclose(alignment.rotation, np.eye(3), atol=1e-6)
    assert alignment.offset == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(twice.positions, once.positions, atol=1e-6)
