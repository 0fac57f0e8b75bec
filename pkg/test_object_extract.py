"""Tests for voxel grouping, primitive fitting, RANSAC, room outline and the objects file"""

import math

import numpy as np
import pytest

from cloud_builder import LabeledPointCloud, align_scene, build_cloud
from config import ExtractConfig
from conftest import read_fixture, varied_params
from errors import FitFailedError, InsufficientPointsError, InvalidInputError, MalformedFileError, NoFloorError
from object_extract import (
    Box,
    ObjectCandidate,
    VerticalCylinder,
    assign_ids,
    choose_primitive,
    connected_components,
    extract_objects,
    extract_room,
    fit_box,
    fit_circle,
    fit_cylinder,
    footprint_rim,
    format_objects,
    parse_objects,
    ransac_fit,
    read_objects,
    shoelace,
    voxelize,
    write_objects,
)
from scene_ingest import load_manifest
from synth_oracle import export_manifest, generate_scene


def cloud_of(positions, labels):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    return LabeledPointCloud(positions, np.asarray(labels, dtype=np.int64), np.zeros(len(positions), dtype=np.int64))


def circle_points(cx, cy, r, n):
    angles = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    return np.column_stack([cx + r * np.cos(angles), cy + r * np.sin(angles)])


def floor_cloud(mask_fn, width, depth, spacing=0.02):
    xs = np.arange(spacing / 2, width, spacing)
    ys = np.arange(spacing / 2, depth, spacing)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    keep = mask_fn(xx, yy)
    positions = np.column_stack([xx[keep], yy[keep], np.zeros(int(keep.sum()))])
    return cloud_of(positions, np.ones(len(positions)))


# --- voxels --------------------------------------------------------------

def test_majority_tie_goes_to_smaller_label():
    cloud = cloud_of([[0.1, 0.1, 0.1]] * 2 + [[0.2, 0.2, 0.2]] * 2, [5, 5, 3, 3])
    grid = voxelize(cloud, 1.0, min_points=1)
    assert len(grid) == 1
    assert grid.majority.tolist() == [3]
    assert grid.cells[(0, 0, 0)] == {3: 2, 5: 2}


def test_sparse_voxels_are_dropped():
    cloud = cloud_of([[0.5, 0.5, 0.5]] * 3 + [[2.5, 0.5, 0.5]] * 2, [4] * 5)
    grid = voxelize(cloud, 1.0, min_points=3)
    assert len(grid) == 1
    assert grid.dropped == 2
    assert grid.point_cell.tolist() == [0, 0, 0, -1, -1]


def test_components_join_diagonals_and_split_labels():
    positions = [[0.5, 0.5, 0.5], [1.5, 1.5, 1.5], [2.5, 2.5, 2.5], [5.5, 0.5, 0.5]]
    grid = voxelize(cloud_of(positions, [4, 4, 5, 4]), 1.0, min_points=1)
    clusters = connected_components(grid)
    assert [(c.label, c.voxel_count) for c in clusters] == [(4, 2), (4, 1), (5, 1)]


def test_box_fit_contains_members():
    points = np.random.default_rng(2).uniform([0, 0, 0], [1.0, 0.5, 0.02], size=(200, 3))
    box = fit_box(points, 0.05)
    assert box.size[2] == pytest.approx(0.05)
    lo = np.asarray(box.center) - np.asarray(box.size) / 2
    hi = np.asarray(box.center) + np.asarray(box.size) / 2
    assert np.all(points >= lo - 1e-9) and np.all(points <= hi + 1e-9)


def test_box_fit_single_point_is_one_voxel():
    box = fit_box(np.array([[1.0, 2.0, 0.3]]), 0.05)
    assert box.center == pytest.approx((1.0, 2.0, 0.3))
    assert box.size == pytest.approx((0.05, 0.05, 0.05))


def test_voxelize_accounts_for_every_point():
    rng = np.random.default_rng(4)
    positions = rng.uniform(0.0, 1.0, (500, 3))
    grid = voxelize(cloud_of(positions, rng.integers(4, 7, 500)), 0.2, min_points=5)
    assert grid.dropped > 0
    assert int(grid.counts.sum()) + grid.dropped == 500
    assert int((grid.point_cell >= 0).sum()) == int(grid.counts.sum())
    assert np.bincount(grid.point_cell[grid.point_cell >= 0], minlength=len(grid)).tolist() == grid.counts.tolist()


def _flood_components(keys, labels):
    """Same-label groups under 26-adjacency, by union-find over all cell pairs"""
    parent = list(range(len(keys)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if labels[i] == labels[j] and np.max(np.abs(keys[i] - keys[j])) <= 1:
                parent[find(i)] = find(j)
    groups = {}
    for i in range(len(keys)):
        groups.setdefault(find(i), set()).add(tuple(keys[i].tolist()))
    return {frozenset(g) for g in groups.values()}


def test_components_match_union_find():
    rng = np.random.default_rng(9)
    cells = np.unique(rng.integers(0, 6, (90, 3)), axis=0)
    labels = rng.integers(4, 6, len(cells))
    grid = voxelize(cloud_of(cells + 0.5, labels), 1.0, min_points=1)
    found = {frozenset(tuple(k) for k in grid.keys[c.cells].tolist()) for c in connected_components(grid)}
    assert found == _flood_components(grid.keys, grid.majority)
    assert sum(c.voxel_count for c in connected_components(grid)) == len(grid)


# --- circles and RANSAC --------------------------------------------------

def test_circle_fit_exact():
    cx, cy, r, rms = fit_circle(circle_points(1.0, 2.0, 0.5, 8))
    assert (cx, cy, r) == pytest.approx((1.0, 2.0, 0.5), abs=1e-9)
    assert rms < 1e-9


def test_circle_fit_noisy():
    xy = circle_points(1.0, 2.0, 0.5, 200) + np.random.default_rng(0).normal(0.0, 0.01, (200, 2))
    _, _, r, _ = fit_circle(xy)
    assert r == pytest.approx(0.5, abs=0.02)


def test_circle_fit_degenerate():
    with pytest.raises(FitFailedError):
        fit_circle([[0, 0], [1, 1], [2, 2], [3, 3]])
    with pytest.raises(FitFailedError):
        fit_circle([[0, 0], [1, 1]])


def test_cylinder_fit_takes_z_extent():
    ring = circle_points(0.5, -1.0, 0.3, 24)
    points = np.vstack([np.column_stack([ring, np.full(len(ring), z)]) for z in (0.0, 0.35, 0.7)])
    cylinder, rms = fit_cylinder(points)
    assert cylinder.center_xy == pytest.approx((0.5, -1.0), abs=1e-9)
    assert cylinder.radius == pytest.approx(0.3, abs=1e-9)
    assert (cylinder.z_min, cylinder.z_max) == pytest.approx((0.0, 0.7))
    assert rms < 1e-9

    with pytest.raises(FitFailedError):
        fit_cylinder(np.column_stack([ring, np.zeros(len(ring))]))


def test_ransac_circle_with_outliers():
    rng = np.random.default_rng(11)
    inliers = circle_points(0.0, 0.0, 1.0, 70)
    outliers = rng.uniform(-2.0, 2.0, (30, 2))
    result = ransac_fit(np.vstack([inliers, outliers]), "circle", iterations=200, tolerance=0.02, seed=3)
    assert result.model.radius == pytest.approx(1.0, rel=0.02)
    assert result.inlier_count >= 70


def test_ransac_without_outliers_matches_least_squares():
    xy = circle_points(0.3, -0.4, 0.8, 40)
    result = ransac_fit(xy, "circle", iterations=20, tolerance=0.01)
    cx, cy, r, _ = fit_circle(xy)
    assert (result.model.cx, result.model.cy, result.model.radius) == pytest.approx((cx, cy, r), abs=1e-6)


def test_ransac_plane():
    rng = np.random.default_rng(5)
    plane = np.column_stack([rng.uniform(0, 2, 300), rng.uniform(0, 2, 300), np.full(300, 0.5)])
    noise = rng.uniform(0, 2, (60, 3))
    result = ransac_fit(np.vstack([plane, noise]), "plane", iterations=100, tolerance=0.005)
    normal = np.asarray(result.model.normal)
    assert abs(normal[2]) == pytest.approx(1.0, abs=1e-4)
    assert abs(result.model.offset) == pytest.approx(0.5, abs=1e-3)


def test_ransac_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        ransac_fit(np.zeros((10, 2)), "sphere", iterations=10, tolerance=0.1)
    with pytest.raises(InsufficientPointsError):
        ransac_fit(np.zeros((2, 2)), "circle", iterations=10, tolerance=0.1)


def _cylinder_surface(cx, cy, r, height, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0, 2 * math.pi, n)
    z = rng.uniform(0, height, n)
    return np.column_stack([cx + r * np.cos(angles), cy + r * np.sin(angles), z])


def _box_surface(size, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    points = rng.uniform(-0.5, 0.5, (n, 3)) * size
    face = rng.integers(0, 2, n)
    points[np.arange(n), face] = np.sign(points[np.arange(n), face]) * size[face] / 2
    return points + np.array([0.0, 0.0, size[2] / 2])


def test_choose_primitive():
    round_points = _cylinder_surface(1.0, 1.0, 0.4, 0.7)
    chosen = choose_primitive(round_points, "round table", ["round table"], 0.5, 0.05)
    assert isinstance(chosen, VerticalCylinder)
    assert chosen.radius == pytest.approx(0.4, rel=0.02)
    assert chosen.z_max == pytest.approx(0.7, abs=0.01)

    assert isinstance(choose_primitive(round_points, "cabinet", ["round table"], 0.5, 0.05), Box)
    square = _box_surface(np.array([1.0, 1.0, 0.7]))
    assert isinstance(choose_primitive(square, "round table", ["round table"], 0.5, 0.05), Box)


def _cut_table(cx, cy, r, height, cut):
    """Top cap and side of a round table, keeping only y <= cy + cut * r"""
    xs = np.arange(cx - r, cx + r, 0.01)
    ys = np.arange(cy - r, cy + r, 0.01)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    cap = np.column_stack([xx[disk], yy[disk], np.full(int(disk.sum()), height)])
    angles = np.linspace(0.0, 2.0 * math.pi, 90, endpoint=False)
    side = np.vstack([np.column_stack([cx + r * np.cos(angles), cy + r * np.sin(angles), np.full(90, z)])
                      for z in np.linspace(0.0, height, 8)])
    points = np.vstack([cap, side])
    return points[points[:, 1] <= cy + cut * r]


def test_partly_seen_round_table_stays_a_cylinder():
    points = _cut_table(2.8, 4.1, 0.3, 0.75, cut=0.4)
    chosen = choose_primitive(points, "round table", ["round table"], 0.5, 0.05)
    assert isinstance(chosen, VerticalCylinder)
    assert chosen.center_xy == pytest.approx((2.8, 4.1), abs=0.02)
    assert chosen.radius == pytest.approx(0.3, rel=0.05)
    assert chosen.z_max == pytest.approx(0.75)

    box = fit_box(points, 0.05)
    assert abs(box.center[1] - 4.1) > 0.05


def test_gross_misfit_falls_back_to_box():
    bar = _box_surface(np.array([2.0, 0.1, 0.7]))
    _, rms = fit_cylinder(footprint_rim(bar), z_points=bar)
    assert rms > 5 * 0.5 * 0.05
    chosen = choose_primitive(bar, "round table", ["round table"], 0.5, 0.05)
    assert isinstance(chosen, Box)
    assert chosen.size[0] == pytest.approx(2.0, abs=0.01)


def test_assign_ids_drops_small_clusters():
    box = Box((0.0, 0.0, 0.5), (1.0, 1.0, 1.0))
    candidates = [ObjectCandidate(box, 12, 4), ObjectCandidate(box, 3, 5), ObjectCandidate(box, 8, 6)]
    objects = assign_ids(candidates, min_voxels=8)
    assert [(o.id, o.label) for o in objects] == [(1, 4), (2, 6)]


# --- room ----------------------------------------------------------------

def test_rectangular_room_area():
    cloud = floor_cloud(lambda x, y: np.ones_like(x, dtype=bool), 4.0, 5.0)
    room = extract_room(voxelize(cloud, 0.05), [1])
    assert room.area == pytest.approx(20.0, abs=0.9)
    assert len(room.polygon) == 4
    assert shoelace(room.polygon) > 0


def test_l_shaped_room_area():
    cloud = floor_cloud(lambda x, y: (y < 2.5) | (x < 2.0), 4.0, 5.0)
    room = extract_room(voxelize(cloud, 0.05), [1])
    assert room.area == pytest.approx(15.0, abs=0.9)
    assert len(room.polygon) == 6


def test_room_needs_floor():
    cloud = cloud_of(np.random.default_rng(0).uniform(0, 1, (100, 3)), np.full(100, 2))
    with pytest.raises(NoFloorError):
        extract_room(voxelize(cloud, 0.05, min_points=1), [1], [2])


def test_shoelace_orientation():
    square = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert shoelace(square) == 1.0
    assert shoelace(square[::-1]) == -1.0


# --- objects file --------------------------------------------------------

def test_format_objects_matches_fixture(reference_objects, reference_room):
    text = format_objects(reference_objects, reference_room, {"scene": "fixture"})
    assert text == read_fixture("objects.txt")


def test_objects_file_parses_back(tmp_path, reference_objects, reference_room):
    path = str(tmp_path / "objects.txt")
    write_objects(path, reference_objects, reference_room, {"scene": "fixture"})
    objects, room, header = read_objects(path)
    assert objects == reference_objects
    assert room == reference_room
    assert header == {"scene": "fixture"}


def test_negative_zero_is_not_printed():
    obj = assign_ids([ObjectCandidate(Box((-0.001, 0.0, 0.5), (1.0, 1.0, 1.0)), 10, 4)])[0]
    assert "center=0.00,0.00,0.50" in format_objects([obj])


def test_malformed_objects_line():
    with pytest.raises(MalformedFileError, match="line 2"):
        parse_objects("# scene=x\n1 box center=0,0,0 size=1,1,1 label=4\n")


# --- recovery on rendered scenes -----------------------------------------

def recover(manifest_path):
    config = ExtractConfig()
    manifest = load_manifest(manifest_path)
    cloud = build_cloud(manifest, config.stride)
    aligned, _ = align_scene(cloud, manifest.labels, manifest.label_ids(config.floor_categories),
                             manifest.label_ids(config.wall_categories), manifest.reference_heights)
    _, objects = extract_objects(aligned, manifest.labels, config.voxel_size, config.min_points_per_voxel,
                                 config.min_voxels_per_object, config.structural_categories,
                                 config.round_categories, config.residual_threshold)
    return objects


def mismatches(truth, objects):
    """Ground-truth objects that no recovered object of the same label reproduces"""
    misses = []
    for expected in truth:
        same = [o for o in objects if o.label == expected.label]
        if not same:
            misses.append((expected.id, "missing"))
            continue
        found = min(same, key=lambda o: np.linalg.norm(np.subtract(o.center, expected.center)))
        p, q = expected.primitive, found.primitive
        if isinstance(p, Box):
            if not isinstance(q, Box):
                misses.append((expected.id, "kind"))
            elif np.linalg.norm(np.subtract(q.center, p.center)) > 0.05:
                misses.append((expected.id, "center"))
            elif np.max(np.abs(np.subtract(q.size, p.size))) > 0.1:
                misses.append((expected.id, "size"))
        elif not isinstance(q, VerticalCylinder):
            misses.append((expected.id, "kind"))
        elif abs(q.radius - p.radius) > 0.1 * p.radius:
            misses.append((expected.id, "radius"))
    return misses


def test_recovers_scene_objects(scene0, exported_scene):
    objects = recover(exported_scene)
    assert len(objects) == len(scene0.primitives)
    assert mismatches(scene0.primitives, objects) == []
    for expected in scene0.primitives:
        if isinstance(expected.primitive, VerticalCylinder):
            found = min((o for o in objects if o.label == expected.label),
                        key=lambda o: np.linalg.norm(np.subtract(o.center[:2], expected.center[:2])))
            assert np.linalg.norm(np.subtract(found.primitive.center_xy, expected.primitive.center_xy)) < 0.05


@pytest.mark.slow
def test_recovery_over_fifty_scenes(tmp_path):
    clean = 0
    for seed in range(50):
        scene = generate_scene(seed, varied_params(seed))
        objects = recover(export_manifest(scene, str(tmp_path / f"s{seed}")))
        clean += len(objects) == len(scene.primitives) and not mismatches(scene.primitives, objects)
    assert clean >= 48
