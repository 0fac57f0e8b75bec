"""
Object Extraction
Majority-label voxelization, 26-connected same-label grouping, box and
vertical-cylinder fitting, RANSAC model fitting and the rectilinear room
boundary. Everything here works in the aligned metric frame.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from skimage import measure

from cloud_builder import LabeledPointCloud
from errors import FitFailedError, InsufficientPointsError, InvalidInputError, MalformedFileError, NoFloorError

logger = logging.getLogger(__name__)

CONNECTIVITY = np.ones((3, 3, 3), dtype=bool)

# partial-rim cylinder recovery
GROSS_MISFIT = 5.0
RIM_RANSAC_ITERATIONS = 200
RIM_INLIER_FRACTION = 0.5
RIM_OUTSIDE_FRACTION = 0.05


# --- voxel grid ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Sparse grid of occupied cells, each with a full label histogram

    keys are integer (x, y, z) cell indices sorted lexicographically; point_cell
    maps every input point to its retained cell or -1 if its cell was dropped.
    """

    origin: np.ndarray
    voxel_size: float
    keys: np.ndarray
    histograms: Tuple[Dict[int, int], ...]
    counts: np.ndarray
    majority: np.ndarray
    point_cell: np.ndarray
    dropped: int = 0

    def __len__(self):
        return len(self.keys)

    @property
    def cells(self) -> Dict[Tuple[int, int, int], Dict[int, int]]:
        return {tuple(int(v) for v in key): hist for key, hist in zip(self.keys, self.histograms)}

    def cell_centers(self, cell_ids: Optional[np.ndarray] = None) -> np.ndarray:
        keys = self.keys if cell_ids is None else self.keys[cell_ids]
        return self.origin + (keys + 0.5) * self.voxel_size


def voxelize(cloud: LabeledPointCloud, voxel_size: float, min_points: int = 3) -> VoxelGrid:
    if not voxel_size > 0:
        raise InvalidInputError(f"voxel size must be positive, got {voxel_size}")
    if len(cloud) == 0:
        return VoxelGrid(np.zeros(3), float(voxel_size), np.zeros((0, 3), dtype=np.int64), (),
                         np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    origin = np.floor(cloud.positions.min(axis=0) / voxel_size) * voxel_size
    index = np.maximum(np.floor((cloud.positions - origin) / voxel_size).astype(np.int64), 0)
    keys, inverse, counts = np.unique(index, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)

    # (cell, label) pairs come back sorted by cell then label, so the first
    # maximum per cell is the smallest label id among the tied ones
    pairs, pair_counts = np.unique(np.column_stack([inverse, cloud.labels]), axis=0, return_counts=True)
    histograms: List[Dict[int, int]] = [{} for _ in range(len(keys))]
    majority = np.zeros(len(keys), dtype=np.int64)
    best = np.zeros(len(keys), dtype=np.int64)
    for (cell, label), n in zip(pairs.tolist(), pair_counts.tolist()):
        histograms[cell][label] = n
        if n > best[cell]:
            best[cell] = n
            majority[cell] = label

    keep = counts >= min_points
    remap = np.full(len(keys), -1, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    dropped = int(counts[~keep].sum())
    if dropped:
        logger.debug(f"Dropped {dropped} points in {int((~keep).sum())} sparse voxels")
    return VoxelGrid(
        origin=origin,
        voxel_size=float(voxel_size),
        keys=keys[keep],
        histograms=tuple(h for h, k in zip(histograms, keep) if k),
        counts=counts[keep],
        majority=majority[keep],
        point_cell=remap[inverse],
        dropped=dropped,
    )


@dataclass(frozen=True, eq=False)
class VoxelCluster:
    label: int
    cells: np.ndarray

    @property
    def voxel_count(self) -> int:
        return len(self.cells)


def connected_components(grid: VoxelGrid) -> List[VoxelCluster]:
    """Maximal 26-connected groups of cells sharing a majority label

    Ordered by (min z index, min x index, min y index), then label, then the
    smallest member key.
    """
    if len(grid) == 0:
        return []
    lo = grid.keys.min(axis=0)
    local = grid.keys - lo
    shape = tuple(local.max(axis=0) + 1)

    clusters = []
    for label in np.unique(grid.majority).tolist():
        members = np.flatnonzero(grid.majority == label)
        volume = np.zeros(shape, dtype=bool)
        volume[tuple(local[members].T)] = True
        labeled, n = ndimage.label(volume, structure=CONNECTIVITY)
        component = labeled[tuple(local[members].T)]
        for c in range(1, n + 1):
            clusters.append(VoxelCluster(int(label), members[component == c]))

    def order(cluster: VoxelCluster):
        keys = grid.keys[cluster.cells]
        first = min(tuple(k) for k in keys.tolist())
        return (int(keys[:, 2].min()), int(keys[:, 0].min()), int(keys[:, 1].min()), cluster.label, first)

    return sorted(clusters, key=order)


def cluster_points(grid: VoxelGrid, cloud: LabeledPointCloud, cluster: VoxelCluster) -> np.ndarray:
    """Member points of a cluster that carry the cluster's own label"""
    inside = np.isin(grid.point_cell, cluster.cells)
    points = cloud.positions[inside & (cloud.labels == cluster.label)]
    return points if len(points) else cloud.positions[inside]


# --- primitives ----------------------------------------------------------

@dataclass(frozen=True)
class Box:
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]

    kind = "box"

    def __post_init__(self):
        if min(self.size) <= 0:
            raise InvalidInputError(f"box sides must be positive, got {self.size}")

    @property
    def space_diagonal(self) -> float:
        return math.sqrt(sum(s * s for s in self.size))


@dataclass(frozen=True)
class VerticalCylinder:
    center_xy: Tuple[float, float]
    radius: float
    z_min: float
    z_max: float

    kind = "cylinder"

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidInputError(f"cylinder radius must be positive, got {self.radius}")
        if self.z_max <= self.z_min:
            raise InvalidInputError(f"cylinder needs z_max > z_min, got [{self.z_min}, {self.z_max}]")

    @property
    def center(self) -> Tuple[float, float, float]:
        """Axis midpoint"""
        return (self.center_xy[0], self.center_xy[1], 0.5 * (self.z_min + self.z_max))

    @property
    def space_diagonal(self) -> float:
        return math.hypot(2.0 * self.radius, self.z_max - self.z_min)


Primitive = Union[Box, VerticalCylinder]


@dataclass(frozen=True)
class SceneObject:
    id: int
    primitive: Primitive
    voxel_count: int
    label: int

    @property
    def center(self) -> Tuple[float, float, float]:
        return tuple(self.primitive.center)


def fit_box(points: np.ndarray, voxel_size: float) -> Box:
    """Axis-aligned bounds of the points; each side at least one voxel"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise InsufficientPointsError("cannot fit a box to an empty cluster")
    lo, hi = points.min(axis=0), points.max(axis=0)
    size = np.maximum(hi - lo, voxel_size)
    center = 0.5 * (lo + hi)
    return Box(tuple(float(v) for v in center), tuple(float(v) for v in size))


def fit_circle(xy: np.ndarray) -> Tuple[float, float, float, float]:
    """Algebraic (Kasa) circle fit; returns (cx, cy, r, rms residual)

    Solves x^2 + y^2 = 2ax + 2by + c in the least-squares sense on centered
    coordinates, so r = sqrt(a^2 + b^2 + c).
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if len(xy) < 3:
        raise FitFailedError(f"circle fit needs at least 3 points, got {len(xy)}")
    mean = xy.mean(axis=0)
    u = xy - mean
    A = np.column_stack([2.0 * u[:, 0], 2.0 * u[:, 1], np.ones(len(u))])
    b = (u ** 2).sum(axis=1)
    solution, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < 3:
        raise FitFailedError("degenerate circle fit (points are collinear or coincident)")
    a, bb, c = solution
    r2 = a * a + bb * bb + c
    if not r2 > 0:
        raise FitFailedError("circle fit produced a non-positive squared radius")
    r = math.sqrt(r2)
    center = mean + np.array([a, bb])
    rms = float(np.sqrt(np.mean((np.linalg.norm(xy - center, axis=1) - r) ** 2)))
    return float(center[0]), float(center[1]), r, rms


def fit_cylinder(points: np.ndarray, z_points: Optional[np.ndarray] = None) -> Tuple[VerticalCylinder, float]:
    """Circle fit on the xy projection, z extent from z_points (defaults to points)"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cx, cy, r, rms = fit_circle(points[:, :2])
    z = (points if z_points is None else np.asarray(z_points, dtype=np.float64).reshape(-1, 3))[:, 2]
    if z.max() <= z.min():
        raise FitFailedError("cylinder cluster has no vertical extent")
    return VerticalCylinder((cx, cy), r, float(z.min()), float(z.max())), rms


def footprint_rim(points: np.ndarray, sectors: int = 72) -> np.ndarray:
    """Outermost point per angular sector around the xy centroid"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    offset = points[:, :2] - points[:, :2].mean(axis=0)
    radius = np.hypot(offset[:, 0], offset[:, 1])
    sector = np.floor((np.arctan2(offset[:, 1], offset[:, 0]) + math.pi) / (2 * math.pi) * sectors)
    sector = np.clip(sector.astype(np.int64), 0, sectors - 1)
    order = np.lexsort((-radius, sector))
    first = np.ones(len(order), dtype=bool)
    first[1:] = sector[order][1:] != sector[order][:-1]
    return points[order[first]]


def choose_primitive(
    points: np.ndarray,
    category: str,
    round_categories: Sequence[str],
    residual_threshold: float,
    voxel_size: float,
) -> Primitive:
    """Vertical cylinder for round categories whose rim fits a circle well, else a box

    A rim that misses the threshold but stays under GROSS_MISFIT times it gets a
    second chance: a RANSAC circle over the rim, accepted when its inliers fit
    within the threshold and the rest of the rim lies inside it. That is the
    shape of a partly observed disk, whose cut edge is a chord.
    """
    box = fit_box(points, voxel_size)
    if category not in round_categories:
        return box
    limit = residual_threshold * voxel_size
    try:
        rim = footprint_rim(points)
        cylinder, rms = fit_cylinder(rim, z_points=points)
    except (FitFailedError, InvalidInputError) as e:
        logger.debug(f"Cylinder fit for {category} failed ({e}); using box")
        return box
    if rms <= limit:
        return cylinder
    if rms >= GROSS_MISFIT * limit:
        logger.debug(f"Cylinder residual {rms:.4f} for {category} is a gross misfit; using box")
        return box

    partial = _partial_rim_cylinder(rim, points, limit, 0.5 * voxel_size)
    if partial is not None:
        logger.debug(f"Cylinder for {category} recovered from a partial rim (full residual {rms:.4f})")
        return partial
    logger.debug(f"Cylinder residual {rms:.4f} for {category} above threshold; using box")
    return box


def _partial_rim_cylinder(rim: np.ndarray, points: np.ndarray, limit: float,
                          tolerance: float) -> Optional[VerticalCylinder]:
    try:
        consensus = ransac_fit(rim[:, :2], "circle", RIM_RANSAC_ITERATIONS, tolerance)
    except (FitFailedError, InsufficientPointsError):
        return None
    if consensus.inlier_count < RIM_INLIER_FRACTION * len(rim):
        return None
    try:
        cylinder, rms = fit_cylinder(rim[consensus.inliers], z_points=points)
    except (FitFailedError, InvalidInputError):
        return None
    if rms > limit:
        return None
    cx, cy = cylinder.center_xy
    outside = np.hypot(rim[:, 0] - cx, rim[:, 1] - cy) > cylinder.radius + tolerance
    if outside.mean() > RIM_OUTSIDE_FRACTION:
        return None
    return cylinder


# --- RANSAC --------------------------------------------------------------

@dataclass(frozen=True)
class CircleModel:
    cx: float
    cy: float
    radius: float

    def residuals(self, points: np.ndarray) -> np.ndarray:
        return np.abs(np.hypot(points[:, 0] - self.cx, points[:, 1] - self.cy) - self.radius)


@dataclass(frozen=True)
class PlaneModel:
    """normal . p = offset, with a unit normal"""

    normal: Tuple[float, float, float]
    offset: float

    def residuals(self, points: np.ndarray) -> np.ndarray:
        return np.abs(points[:, :3] @ np.asarray(self.normal) - self.offset)


@dataclass(frozen=True, eq=False)
class RansacResult:
    model: Union[CircleModel, PlaneModel]
    inliers: np.ndarray

    @property
    def inlier_count(self) -> int:
        return int(self.inliers.sum())


def _fit_circle_model(points: np.ndarray) -> CircleModel:
    cx, cy, r, _ = fit_circle(points[:, :2])
    return CircleModel(cx, cy, r)


def _fit_plane_model(points: np.ndarray) -> PlaneModel:
    points = points[:, :3]
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if len(s) < 2 or s[1] <= 1e-12 * max(s[0], 1.0):
        raise FitFailedError("degenerate plane sample (points are collinear)")
    normal = vt[-1]
    return PlaneModel(tuple(float(v) for v in normal), float(normal @ centroid))


_MODELS = {
    "circle": (_fit_circle_model, 3, 2),
    "plane": (_fit_plane_model, 3, 3),
}


def ransac_fit(points: np.ndarray, kind: str, iterations: int, tolerance: float, seed: int = 0) -> RansacResult:
    """Best-consensus model over random minimal samples, refit on its inliers"""
    if kind not in _MODELS:
        raise InvalidInputError(f"unknown RANSAC model kind {kind!r}")
    if iterations < 1:
        raise InvalidInputError(f"RANSAC needs at least one iteration, got {iterations}")
    fit, sample_size, dims = _MODELS[kind]
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < dims:
        raise InvalidInputError(f"{kind} fitting needs (N, {dims}) points")
    if len(points) < sample_size:
        raise InsufficientPointsError(f"{kind} fitting needs at least {sample_size} points, got {len(points)}")

    rng = np.random.default_rng(seed)
    best_model, best_inliers = None, None
    for _ in range(iterations):
        sample = rng.choice(len(points), size=sample_size, replace=False)
        try:
            model = fit(points[sample])
        except FitFailedError:
            continue
        inliers = model.residuals(points) <= tolerance
        if best_inliers is None or inliers.sum() > best_inliers.sum():
            best_model, best_inliers = model, inliers

    if best_model is None or best_inliers.sum() < sample_size:
        raise FitFailedError(f"no {kind} model found in {iterations} iterations")
    return RansacResult(fit(points[best_inliers]), best_inliers)


# --- room boundary -------------------------------------------------------

@dataclass(frozen=True)
class RoomBoundary:
    """Counter-clockwise simple polygon in meters (aligned frame)"""

    polygon: Tuple[Tuple[float, float], ...]
    area: float
    height: float

    def __post_init__(self):
        if len(self.polygon) < 3 or not self.area > 0:
            raise InvalidInputError("room polygon needs at least 3 vertices and positive area")


def shoelace(polygon: Sequence[Sequence[float]]) -> float:
    """Signed area; positive for counter-clockwise vertex order"""
    p = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _is_half(value: float) -> bool:
    return abs(value - math.floor(value) - 0.5) < 1e-6


def _rectilinear(contour: np.ndarray) -> List[Tuple[float, float]]:
    """Snap a marching-squares contour of a binary bitmap onto cell edges

    Each contour vertex lies on exactly one cell-edge line (its half-integer
    coordinate); a diagonal step between two vertices is replaced by the corner
    where their edge lines meet.
    """
    vertices = [tuple(v) for v in contour[:-1]] if np.allclose(contour[0], contour[-1]) else [tuple(v) for v in contour]
    out: List[Tuple[float, float]] = []
    for k, a in enumerate(vertices):
        b = vertices[(k + 1) % len(vertices)]
        out.append(a)
        if abs(a[0] - b[0]) > 1e-9 and abs(a[1] - b[1]) > 1e-9:
            row = a[0] if _is_half(a[0]) else b[0]
            col = a[1] if _is_half(a[1]) else b[1]
            out.append((row, col))

    points = [(round(r * 2) / 2, round(c * 2) / 2) for r, c in out if _is_half(r) and _is_half(c)]
    deduped = [p for k, p in enumerate(points) if p != points[k - 1]] if len(points) > 1 else points

    changed = True
    while changed and len(deduped) > 3:
        changed = False
        for k in range(len(deduped)):
            prev, cur, nxt = deduped[k - 1], deduped[k], deduped[(k + 1) % len(deduped)]
            if (prev[0] == cur[0] == nxt[0]) or (prev[1] == cur[1] == nxt[1]):
                del deduped[k]
                changed = True
                break
    return deduped


def extract_room(
    grid: VoxelGrid,
    floor_ids: Sequence[int],
    wall_ids: Sequence[int] = (),
    closing: int = 2,
    scale: float = 1.0,
) -> RoomBoundary:
    """Rectilinear outline of the closed floor occupancy, with wall-top height"""
    floor = np.isin(grid.majority, list(floor_ids))
    if not floor.any():
        raise NoFloorError("no floor voxels in the scene")
    wall = np.isin(grid.majority, list(wall_ids))
    footprint_cells = grid.keys[floor | wall]

    lo = footprint_cells[:, :2].min(axis=0)
    extent = footprint_cells[:, :2].max(axis=0) - lo + 1
    pad = closing + 1
    bitmap = np.zeros(tuple(extent + 2 * pad), dtype=bool)
    bitmap[tuple((footprint_cells[:, :2] - lo + pad).T)] = True
    if closing > 0:
        bitmap = ndimage.binary_closing(bitmap, structure=np.ones((3, 3), dtype=bool), iterations=closing)
    bitmap = ndimage.binary_fill_holes(bitmap)

    contours = measure.find_contours(bitmap.astype(np.float64), 0.5)
    if not contours:
        raise NoFloorError("floor occupancy has no outline")
    outline = _rectilinear(max(contours, key=lambda c: abs(shoelace(c))))

    cells = np.asarray(outline) - pad + lo
    xy = grid.origin[:2] + (cells + 0.5) * grid.voxel_size
    if shoelace(xy) < 0:
        xy = xy[::-1]
    area = abs(shoelace(xy)) * scale * scale
    polygon = tuple((float(x) * scale, float(y) * scale) for x, y in xy)

    height = 0.0
    if wall.any():
        wall_keys = grid.keys[wall]
        columns, inverse = np.unique(wall_keys[:, :2], axis=0, return_inverse=True)
        tops = np.full(len(columns), -1, dtype=np.int64)
        np.maximum.at(tops, inverse.reshape(-1), wall_keys[:, 2])
        top_z = grid.origin[2] + (tops + 1) * grid.voxel_size
        height = float(np.percentile(top_z, 95)) * scale
    else:
        logger.warning("No wall voxels; room height reported as 0")

    logger.info(f"Room outline: {len(polygon)} vertices, area {area:.2f} m2, height {height:.2f} m")
    return RoomBoundary(polygon, area, height)


# --- objects -------------------------------------------------------------

@dataclass(frozen=True)
class ObjectCandidate:
    primitive: Primitive
    voxel_count: int
    label: int


def assign_ids(candidates: Sequence[ObjectCandidate], min_voxels: int = 8) -> List[SceneObject]:
    """Drop small candidates and number the rest 1..N in the given order"""
    kept = [c for c in candidates if c.voxel_count >= min_voxels]
    if len(kept) < len(candidates):
        logger.debug(f"Dropped {len(candidates) - len(kept)} clusters below {min_voxels} voxels")
    return [SceneObject(k, c.primitive, c.voxel_count, c.label) for k, c in enumerate(kept, start=1)]


def extract_objects(
    cloud: LabeledPointCloud,
    labels: Dict[int, str],
    voxel_size: float = 0.05,
    min_points: int = 3,
    min_voxels: int = 8,
    structural: Sequence[str] = ("floor", "wall", "ceiling"),
    round_categories: Sequence[str] = ("round table",),
    residual_threshold: float = 0.5,
) -> Tuple[VoxelGrid, List[SceneObject]]:
    """Voxelize, group and fit every non-structural cluster"""
    grid = voxelize(cloud, voxel_size, min_points)
    candidates = []
    for cluster in connected_components(grid):
        category = labels.get(cluster.label, "")
        if category in structural:
            continue
        points = cluster_points(grid, cloud, cluster)
        primitive = choose_primitive(points, category, round_categories, residual_threshold, voxel_size)
        candidates.append(ObjectCandidate(primitive, cluster.voxel_count, cluster.label))
    objects = assign_ids(candidates, min_voxels)
    logger.info(f"Extracted {len(objects)} objects from {len(grid)} voxels")
    return grid, objects


# --- objects file --------------------------------------------------------

def _fmt(value: float) -> str:
    return f"{round(float(value), 2) + 0.0:.2f}"


def _vec(values: Sequence[float]) -> str:
    return ",".join(_fmt(v) for v in values)


def format_objects(objects: Sequence[SceneObject], room: Optional[RoomBoundary] = None,
                   header: Optional[Dict[str, str]] = None) -> str:
    lines = []
    if header:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in header.items()))
    for obj in objects:
        p = obj.primitive
        if isinstance(p, Box):
            body = f"box center={_vec(p.center)} size={_vec(p.size)}"
        else:
            body = f"cylinder center={_vec(p.center_xy)} radius={_fmt(p.radius)} z={_fmt(p.z_min)},{_fmt(p.z_max)}"
        lines.append(f"{obj.id} {body} voxels={obj.voxel_count} label={obj.label}")
    if room is not None:
        polygon = ";".join(_vec(v) for v in room.polygon)
        lines.append(f"room area={_fmt(room.area)} height={_fmt(room.height)} polygon={polygon}")
    return "\n".join(lines) + "\n"


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def parse_objects(text: str) -> Tuple[List[SceneObject], Optional[RoomBoundary], Dict[str, str]]:
    objects, room, header = [], None, {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            header.update(dict(item.split("=", 1) for item in line[1:].split() if "=" in item))
            continue
        try:
            head, *items = line.split()
            values = dict(item.split("=", 1) for item in items[1:] if "=" in item)
            if head == "room":
                values = dict(item.split("=", 1) for item in items)
                polygon = tuple(_floats(v) for v in values["polygon"].split(";"))
                room = RoomBoundary(polygon, float(values["area"]), float(values["height"]))
                continue
            kind = items[0]
            if kind == "box":
                primitive = Box(_floats(values["center"]), _floats(values["size"]))
            elif kind == "cylinder":
                z_min, z_max = _floats(values["z"])
                primitive = VerticalCylinder(_floats(values["center"]), float(values["radius"]), z_min, z_max)
            else:
                raise ValueError(f"unknown primitive {kind!r}")
            objects.append(SceneObject(int(head), primitive, int(values["voxels"]), int(values["label"])))
        except (KeyError, ValueError, IndexError) as e:
            raise MalformedFileError(f"objects line {number}: {e}")
    return objects, room, header


def write_objects(path: str, objects: Sequence[SceneObject], room: Optional[RoomBoundary] = None,
                  header: Optional[Dict[str, str]] = None):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_objects(objects, room, header))


def read_objects(path: str) -> Tuple[List[SceneObject], Optional[RoomBoundary], Dict[str, str]]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_objects(f.read())
