"""
Labeled Point Cloud Builder
Fuses depth frames into a world-space labeled cloud, levels it on the floor,
turns it to the dominant wall direction and recovers metric scale from
reference object heights.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from plyfile import PlyData, PlyElement
from scipy.spatial import cKDTree

from errors import InsufficientPointsError, InvalidInputError
from geometry import CameraPose, rotation_between, rotation_z, unproject_pixels
from scene_ingest import Frame, SceneManifest

logger = logging.getLogger(__name__)

MIN_FLOOR_POINTS = 50
MIN_WALL_POINTS = 100
UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    """World-space points with the semantic label and source frame of each"""

    positions: np.ndarray
    labels: np.ndarray
    frames: np.ndarray

    def __post_init__(self):
        n = len(self.positions)
        if self.positions.shape != (n, 3) or self.labels.shape != (n,) or self.frames.shape != (n,):
            raise InvalidInputError("positions must be (N, 3) with (N,) labels and frames")
        if n and not np.all(np.isfinite(self.positions)):
            raise InvalidInputError("point positions must be finite")

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls) -> "LabeledPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def mask(self, label_ids: Iterable[int]) -> np.ndarray:
        return np.isin(self.labels, list(label_ids))

    def select(self, mask: np.ndarray) -> "LabeledPointCloud":
        return LabeledPointCloud(self.positions[mask], self.labels[mask], self.frames[mask])

    def with_positions(self, positions: np.ndarray) -> "LabeledPointCloud":
        return LabeledPointCloud(np.asarray(positions, dtype=np.float64), self.labels, self.frames)


@dataclass(frozen=True, eq=False)
class SceneAlignment:
    """Reconstruction frame to aligned metric frame: p' = scale * (R @ p - [0, 0, offset])"""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    offset: float = 0.0
    scale: float = 1.0
    provenance: Tuple[Tuple[str, int], ...] = ()
    scale_warning: bool = False

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3) or np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6:
            raise InvalidInputError("alignment rotation must be orthonormal")
        if not self.scale > 0:
            raise InvalidInputError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", R)

    def to_aligned(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * (points @ self.rotation.T - np.array([0.0, 0.0, self.offset]))

    def to_reconstruction(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points / self.scale + np.array([0.0, 0.0, self.offset])) @ self.rotation

    def pose_to_aligned(self, pose: CameraPose) -> CameraPose:
        """Camera extrinsics expressed against the aligned metric frame"""
        R = pose.R @ self.rotation.T
        t = self.scale * (R @ np.array([0.0, 0.0, self.offset]) + pose.t)
        return CameraPose(R, t)

    def to_dict(self) -> Dict:
        return {
            "rotation": [[float(v) for v in row] for row in self.rotation],
            "offset": float(self.offset),
            "scale": float(self.scale),
            "provenance": [[c, int(n)] for c, n in self.provenance],
            "scale_warning": bool(self.scale_warning),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SceneAlignment":
        return cls(
            np.array(data["rotation"], dtype=np.float64),
            float(data["offset"]),
            float(data["scale"]),
            tuple((str(c), int(n)) for c, n in data.get("provenance", [])),
            bool(data.get("scale_warning", False)),
        )


class CategoryHeight(NamedTuple):
    height: float
    count: int


@dataclass(frozen=True)
class ScaleEstimate:
    scale: float
    provenance: Tuple[Tuple[str, int], ...]
    ratios: Dict[str, float]
    warning: bool = False


# --- fusion --------------------------------------------------------------

def _frame_points(index: int, frame: Frame, depth_scale: float, stride: int):
    depth = frame.load_depth(depth_scale)
    labels = frame.load_labels()
    rows = np.arange(0, depth.height, stride)
    cols = np.arange(0, depth.width, stride)
    jj, ii = np.meshgrid(rows, cols, indexing="ij")
    keep = depth.valid[jj, ii] & (labels[jj, ii] != 0)
    pixels = np.column_stack([ii[keep], jj[keep]]).astype(np.float64)
    positions = unproject_pixels(pixels, depth.depths[jj, ii][keep], frame.pose, frame.intrinsics)
    point_labels = labels[jj, ii][keep].astype(np.int64)
    return positions, point_labels, np.full(len(positions), index, dtype=np.int64)


def build_cloud(manifest: SceneManifest, stride: int = 1, jobs: int = 4) -> LabeledPointCloud:
    """One point per valid, labeled pixel on the stride lattice, in frame then row-major order"""
    if stride < 1:
        raise InvalidInputError(f"pixel stride must be >= 1, got {stride}")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        parts = list(pool.map(
            lambda item: _frame_points(item[0], item[1], manifest.depth_scale, stride),
            enumerate(manifest.frames),
        ))
    if not parts:
        return LabeledPointCloud.empty()
    cloud = LabeledPointCloud(
        np.concatenate([p[0] for p in parts]).reshape(-1, 3),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
    )
    if len(cloud) == 0:
        logger.warning(f"Scene {manifest.scene_id}: no valid labeled pixels, cloud is empty")
    else:
        logger.info(f"Built cloud with {len(cloud)} points from {len(manifest.frames)} frames")
    return cloud


def export_ply(cloud: LabeledPointCloud, path: str):
    """Binary little-endian PLY with per-vertex label id and source frame"""
    vertex = np.empty(len(cloud), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                         ("label", "<u2"), ("frame", "<u2")])
    vertex["x"], vertex["y"], vertex["z"] = cloud.positions.T
    vertex["label"] = cloud.labels
    vertex["frame"] = cloud.frames
    PlyData([PlyElement.describe(vertex, "vertex")], text=False, byte_order="<").write(path)


# --- alignment -----------------------------------------------------------

def _plane_normal(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, vectors = np.linalg.eigh(centered.T @ centered / len(points))
    return vectors[:, 0], centroid


def estimate_up(cloud: LabeledPointCloud, floor_ids: Sequence[int], min_points: int = MIN_FLOOR_POINTS) -> np.ndarray:
    """Unit floor normal from a covariance plane fit with one 3-sigma trimming pass"""
    floor_mask = cloud.mask(floor_ids)
    floor = cloud.positions[floor_mask]
    if len(floor) < max(3, min_points):
        raise InsufficientPointsError(f"need at least {min_points} floor points, got {len(floor)}")

    normal, centroid = _plane_normal(floor)
    residuals = (floor - centroid) @ normal
    sigma = residuals.std()
    if sigma > 0:
        keep = np.abs(residuals) <= 3.0 * sigma
        if 3 <= keep.sum() < len(floor):
            normal, centroid = _plane_normal(floor[keep])

    others = cloud.positions[~floor_mask]
    side = (others - centroid) @ normal
    above, below = int(np.sum(side > 0)), int(np.sum(side < 0))
    if above < below or (above == below and normal[2] < 0):
        normal = -normal
    return normal / np.linalg.norm(normal)


def _xy_cells(xy: np.ndarray, cell: float) -> np.ndarray:
    """Mean position of the points in each occupied xy cell"""
    keys = np.floor(xy / cell).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 2))
    np.add.at(sums, inverse, xy)
    return sums / counts[:, None]


def estimate_dominant_direction(
    cloud: LabeledPointCloud,
    wall_ids: Sequence[int],
    min_points: int = MIN_WALL_POINTS,
    neighbors: int = 8,
    cell: float = 0.02,
    window: int = 5,
) -> float:
    """Yaw in [0, 90) degrees maximizing wall tangents within +-window of {yaw, yaw + 90}"""
    walls = cloud.positions[cloud.mask(wall_ids)]
    if len(walls) < min_points:
        raise InsufficientPointsError(f"need at least {min_points} wall points, got {len(walls)}")

    centers = _xy_cells(walls[:, :2], cell)
    k = min(neighbors, len(centers))
    if k < 3:
        raise InsufficientPointsError("wall points collapse to fewer than 3 horizontal cells")
    _, idx = cKDTree(centers).query(centers, k=k)
    local = centers[idx]
    local = local - local.mean(axis=1, keepdims=True)
    values, vectors = np.linalg.eigh(np.einsum("nki,nkj->nij", local, local) / k)
    linear = (values[:, 1] > 0) & (values[:, 0] <= 0.25 * values[:, 1])
    tangents = vectors[linear, :, 1]
    if len(tangents) == 0:
        raise InsufficientPointsError("no locally linear wall structure found")

    angles = np.mod(np.degrees(np.arctan2(tangents[:, 1], tangents[:, 0])), 90.0)
    counts = np.bincount(np.floor(angles + 0.5).astype(np.int64) % 90, minlength=90)
    votes = sum(np.roll(counts, -d) for d in range(-window, window + 1))
    best = int(np.argmax(votes))

    offsets = np.mod(angles - best + 45.0, 90.0) - 45.0
    near = np.abs(offsets) <= window
    yaw = float(np.mod(best + offsets[near].mean(), 90.0))
    if 90.0 - yaw < 1e-9:
        yaw = 0.0
    logger.debug(f"Dominant direction {yaw:.3f} deg from {int(near.sum())} of {len(angles)} tangents")
    return yaw


def axis_align(
    cloud: LabeledPointCloud,
    up: Sequence[float],
    yaw: float,
    floor_ids: Optional[Sequence[int]] = None,
) -> Tuple[LabeledPointCloud, SceneAlignment]:
    """Rotate up onto +z and the dominant direction onto +x, then drop the floor to z = 0

    yaw and yaw + 90 describe the same alignment; the smaller turn is used.
    """
    yaw = float(yaw) % 90.0
    turn = yaw if yaw < 45.0 else yaw - 90.0
    R = rotation_z(-turn) @ rotation_between(up, UP)
    positions = cloud.positions @ R.T
    offset = 0.0
    if floor_ids is not None:
        floor = cloud.mask(floor_ids)
        if floor.any():
            offset = float(np.median(positions[floor, 2]))
    positions[:, 2] -= offset
    return cloud.with_positions(positions), SceneAlignment(rotation=R, offset=offset)


# --- scale ---------------------------------------------------------------

def reconstructed_heights(
    cloud: LabeledPointCloud,
    labels: Dict[int, str],
    categories: Iterable[str],
    absolute_categories: Iterable[str] = ("ceiling",),
) -> Dict[str, CategoryHeight]:
    """Per-category height in the aligned (floor at z = 0) reconstruction frame

    Absolute categories use the median z; others the 5th-95th percentile spread.
    """
    absolute = set(absolute_categories)
    heights = {}
    for category in sorted(set(categories)):
        ids = [i for i, name in labels.items() if name == category]
        z = cloud.positions[cloud.mask(ids), 2] if ids else np.zeros(0)
        if len(z) == 0:
            continue
        if category in absolute:
            height = float(np.percentile(z, 50))
        else:
            height = float(np.percentile(z, 95) - np.percentile(z, 5))
        if height > 0:
            heights[category] = CategoryHeight(height, len(z))
        else:
            logger.warning(f"Ignoring reference category {category}: non-positive height {height}")
    return heights


def recover_scale(heights: Dict[str, CategoryHeight], reference_heights: Dict[str, float]) -> ScaleEstimate:
    """Median over present reference categories of real height / reconstructed height"""
    ratios = {
        category: reference_heights[category] / measured.height
        for category, measured in sorted(heights.items())
        if category in reference_heights
    }
    if not ratios:
        logger.warning("No reference category found in scene; keeping scale 1.0")
        return ScaleEstimate(1.0, (), {}, warning=True)
    provenance = tuple((c, heights[c].count) for c in ratios)
    scale = float(np.median(list(ratios.values())))
    logger.info(f"Recovered scale {scale:.6f} from {', '.join(ratios)}")
    return ScaleEstimate(scale, provenance, ratios)


def align_scene(
    cloud: LabeledPointCloud,
    labels: Dict[int, str],
    floor_ids: Sequence[int],
    wall_ids: Sequence[int],
    reference_heights: Dict[str, float],
    absolute_categories: Iterable[str] = ("ceiling",),
) -> Tuple[LabeledPointCloud, SceneAlignment]:
    """Level, turn, lift and scale a raw cloud into the aligned metric frame"""
    up = estimate_up(cloud, floor_ids)
    leveled = cloud.with_positions(cloud.positions @ rotation_between(up, UP).T)
    yaw = estimate_dominant_direction(leveled, wall_ids)
    aligned, alignment = axis_align(cloud, up, yaw, floor_ids)

    heights = reconstructed_heights(aligned, labels, reference_heights, absolute_categories)
    estimate = recover_scale(heights, reference_heights)
    alignment = SceneAlignment(alignment.rotation, alignment.offset, estimate.scale,
                               estimate.provenance, estimate.warning)
    logger.info(f"Aligned scene: up={np.round(up, 4).tolist()} yaw={yaw:.2f} deg scale={estimate.scale:.4f}")
    return aligned.with_positions(aligned.positions * estimate.scale), alignment


def category_points(cloud: LabeledPointCloud, labels: Dict[int, str]) -> List[Tuple[str, int]]:
    """(category, point count) pairs, largest first, for summaries"""
    ids, counts = np.unique(cloud.labels, return_counts=True)
    pairs = [(labels.get(int(i), "unlabeled"), int(n)) for i, n in zip(ids, counts)]
    return sorted(pairs, key=lambda p: (-p[1], p[0]))
