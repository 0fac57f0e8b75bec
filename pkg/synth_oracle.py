"""
Synthetic Scene Oracle
Procedural rooms (rectangular or L-shaped) furnished with boxes and vertical
cylinders, exact depth/label rendering by analytic ray casting, a ray-cast
visibility oracle and manifest export. Ground truth for the whole pipeline.

Randomness comes from SplitMix64 (Steele, Lea and Flood's 64-bit mixer) so a
seed names the same scene on every platform.
"""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from errors import InfeasibleParamsError, InvalidInputError
from eval_harness import (
    DIRECTIONS,
    ROUTE_ACTIONS,
    GeometryObject,
    Question,
    SceneGeometry,
    appearance_options,
    heading_angle,
    letter,
    solve,
    write_questions,
)
from geometry import BEHIND, CameraIntrinsics, CameraPose, RigidTransform, compose, invert, look_at, project
from object_extract import Box, RoomBoundary, VerticalCylinder, shoelace
from scene_ingest import DepthMap, Frame, SceneManifest, encode_depth, encode_labels, write_manifest

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
HIT_EPS = 1e-9
CAMERA_HEIGHT = 1.5
CAMERA_INSET = 0.35
LOOK_HEIGHT = 1.0

FLOOR, WALL, CEILING = 1, 2, 3
LABELS = {
    1: "floor", 2: "wall", 3: "ceiling", 4: "cabinet", 5: "bed", 6: "sofa", 7: "desk",
    8: "chair", 9: "bookshelf", 10: "round table", 11: "trash bin",
}
LABEL_IDS = {name: i for i, name in LABELS.items()}

# footprint (x, y) and height ranges in meters
BOX_SIZES = {
    "cabinet": ((0.4, 0.8), (0.4, 0.6), (0.8, 1.8)),
    "bed": ((1.4, 2.0), (0.9, 1.6), (0.4, 0.6)),
    "sofa": ((1.4, 2.0), (0.7, 0.9), (0.7, 0.9)),
    "desk": ((0.8, 1.4), (0.5, 0.8), (0.7, 0.8)),
    "chair": ((0.4, 0.5), (0.4, 0.5), (0.8, 1.0)),
    "bookshelf": ((0.6, 1.0), (0.3, 0.4), (1.2, 1.9)),
}
CYLINDER_SIZES = {
    "round table": ((0.3, 0.6), (0.7, 0.78)),
    "trash bin": ((0.15, 0.25), (0.3, 0.6)),
}

PALETTE = {
    0: (0, 0, 0), 1: (150, 120, 90), 2: (225, 222, 210), 3: (245, 245, 245), 4: (120, 80, 40),
    5: (70, 110, 170), 6: (160, 60, 60), 7: (190, 150, 100), 8: (60, 140, 80), 9: (110, 70, 120),
    10: (210, 170, 60), 11: (90, 90, 90),
}


class SplitMix64:
    """64-bit SplitMix generator; uniform() uses the top 53 bits"""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * (1.0 / (1 << 53)))

    def below(self, n: int) -> int:
        """Integer in [0, n) (modulo reduction)"""
        return self.next_u64() % n

    def choice(self, items: Sequence):
        return items[self.below(len(items))]


@dataclass(frozen=True)
class SceneParams:
    n_boxes: int = 3
    n_cylinders: int = 1
    room_width: float = 4.0
    room_depth: float = 5.0
    room_height: float = 2.6
    l_shape: bool = False
    n_cameras: int = 4
    # at 480 columns a top surface seen from 3 m at 14 degrees still lands a pixel row in every 5 cm voxel
    image_width: int = 480
    image_height: int = 360
    fov_deg: float = 70.0
    margin: float = 0.3
    gap: float = 0.3
    max_tries: int = 10000

    def __post_init__(self):
        if self.n_boxes < 0 or self.n_cylinders < 0:
            raise InfeasibleParamsError("object counts must be non-negative")
        if self.n_cameras < 1:
            raise InfeasibleParamsError("at least one camera is required")
        if min(self.room_width, self.room_depth) <= 2 * self.margin + 2 * CAMERA_INSET:
            raise InfeasibleParamsError("room too small for the wall margin")
        if self.room_height <= CAMERA_HEIGHT:
            raise InfeasibleParamsError(f"room height must exceed the camera height {CAMERA_HEIGHT} m")
        if not 10.0 <= self.fov_deg <= 150.0:
            raise InfeasibleParamsError("field of view must be in [10, 150] degrees")


@dataclass(frozen=True)
class RoomSpec:
    rects: Tuple[Tuple[float, float, float, float], ...]
    polygon: Tuple[Tuple[float, float], ...]
    height: float

    @property
    def area(self) -> float:
        return shoelace(self.polygon)

    @property
    def centroid(self) -> Tuple[float, float]:
        total = sum((x1 - x0) * (y1 - y0) for x0, y0, x1, y1 in self.rects)
        cx = sum((x1 - x0) * (y1 - y0) * (x0 + x1) / 2 for x0, y0, x1, y1 in self.rects) / total
        cy = sum((x1 - x0) * (y1 - y0) * (y0 + y1) / 2 for x0, y0, x1, y1 in self.rects) / total
        return cx, cy

    def boundary(self) -> RoomBoundary:
        return RoomBoundary(self.polygon, self.area, self.height)

    def contains(self, x: float, y: float, clearance: float = 0.0) -> bool:
        return any(x0 + clearance <= x <= x1 - clearance and y0 + clearance <= y <= y1 - clearance
                   for x0, y0, x1, y1 in self.rects)


@dataclass(frozen=True)
class SynthObject:
    id: int
    category: str
    primitive: object

    @property
    def label(self) -> int:
        return LABEL_IDS[self.category]

    @property
    def center(self) -> Tuple[float, float, float]:
        return tuple(self.primitive.center)

    def footprint(self) -> Tuple[float, float, float, float]:
        p = self.primitive
        if isinstance(p, Box):
            return (p.center[0] - p.size[0] / 2, p.center[1] - p.size[1] / 2,
                    p.center[0] + p.size[0] / 2, p.center[1] + p.size[1] / 2)
        return (p.center_xy[0] - p.radius, p.center_xy[1] - p.radius,
                p.center_xy[0] + p.radius, p.center_xy[1] + p.radius)


@dataclass(frozen=True)
class SynthCamera:
    intrinsics: CameraIntrinsics
    pose: CameraPose


@dataclass(frozen=True)
class SynthScene:
    seed: int
    params: SceneParams
    room: RoomSpec
    primitives: Tuple[SynthObject, ...]
    cameras: Tuple[SynthCamera, ...]

    @property
    def labels(self) -> Dict[int, str]:
        return dict(LABELS)


class Visibility(Enum):
    VISIBLE = "visible"
    OCCLUDED = "occluded"
    OUT_OF_VIEW = "out-of-view"


# --- ray intersections ---------------------------------------------------
# o is one (3,) origin, d is (N, 3) directions; each returns (N,) ray
# parameters with inf for a miss. With d = R^T (x, y, 1) the parameter is the
# camera-space depth.

def intersect_horizontal(o: np.ndarray, d: np.ndarray, z: float, upward: bool) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (z - o[2]) / d[:, 2]
    facing = d[:, 2] > 0 if upward else d[:, 2] < 0
    return np.where(facing & (t > HIT_EPS), t, np.inf)


def intersect_wall(o: np.ndarray, d: np.ndarray, p0, p1, height: float) -> np.ndarray:
    ex, ey = p1[0] - p0[0], p1[1] - p0[1]
    wx, wy = p0[0] - o[0], p0[1] - o[1]
    denom = d[:, 0] * ey - d[:, 1] * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / denom
        s = (wx * d[:, 1] - wy * d[:, 0]) / denom
    z = o[2] + t * d[:, 2]
    hit = (np.abs(denom) > 1e-15) & (t > HIT_EPS) & (s >= 0) & (s <= 1) & (z >= 0) & (z <= height)
    return np.where(hit, t, np.inf)


def intersect_box(o: np.ndarray, d: np.ndarray, box: Box) -> np.ndarray:
    """Slab test against an axis-aligned box"""
    lo = np.asarray(box.center) - np.asarray(box.size) / 2
    hi = np.asarray(box.center) + np.asarray(box.size) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    near = np.nanmax(np.fmin(t1, t2), axis=1)
    far = np.nanmin(np.fmax(t1, t2), axis=1)
    hit = (near <= far) & (near > HIT_EPS)
    return np.where(hit, near, np.inf)


def intersect_cylinder(o: np.ndarray, d: np.ndarray, cylinder: VerticalCylinder) -> np.ndarray:
    """Side (quadratic in xy) and both caps of a vertical cylinder"""
    cx, cy = cylinder.center_xy
    r = cylinder.radius
    ox, oy = o[0] - cx, o[1] - cy
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (ox * d[:, 0] + oy * d[:, 1])
    c = ox * ox + oy * oy - r * r
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a)
    z_side = o[2] + t_side * d[:, 2]
    side = (a > 1e-15) & (disc >= 0) & (t_side > HIT_EPS) & (z_side >= cylinder.z_min) & (z_side <= cylinder.z_max)
    best = np.where(side, t_side, np.inf)

    for z_cap in (cylinder.z_min, cylinder.z_max):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = (z_cap - o[2]) / d[:, 2]
        px = ox + t_cap * d[:, 0]
        py = oy + t_cap * d[:, 1]
        cap = (t_cap > HIT_EPS) & (px * px + py * py <= r * r)
        best = np.where(cap & (t_cap < best), t_cap, best)
    return best


def _entities(scene: SynthScene) -> List[Tuple[int, int, object]]:
    """(label id, object id or 0, intersector) for every surface in the scene"""
    room = scene.room
    out = [
        (FLOOR, 0, lambda o, d: intersect_horizontal(o, d, 0.0, upward=False)),
        (CEILING, 0, lambda o, d: intersect_horizontal(o, d, room.height, upward=True)),
    ]
    polygon = room.polygon
    for k in range(len(polygon)):
        p0, p1 = polygon[k], polygon[(k + 1) % len(polygon)]
        out.append((WALL, 0, lambda o, d, p0=p0, p1=p1: intersect_wall(o, d, p0, p1, room.height)))
    for obj in scene.primitives:
        if isinstance(obj.primitive, Box):
            out.append((obj.label, obj.id, lambda o, d, p=obj.primitive: intersect_box(o, d, p)))
        else:
            out.append((obj.label, obj.id, lambda o, d, p=obj.primitive: intersect_cylinder(o, d, p)))
    return out


def cast(scene: SynthScene, origin: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest hit per ray: (t, label id, object id); label 0 and t = inf on a miss"""
    entities = _entities(scene)
    hits = np.vstack([fn(origin, directions) for _, _, fn in entities])
    nearest = np.argmin(hits, axis=0)
    t = hits[nearest, np.arange(hits.shape[1])]
    labels = np.array([e[0] for e in entities])[nearest]
    ids = np.array([e[1] for e in entities])[nearest]
    miss = ~np.isfinite(t)
    return t, np.where(miss, 0, labels), np.where(miss, 0, ids)


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    depth: DepthMap
    labels: np.ndarray
    object_ids: np.ndarray

    def image(self) -> Image.Image:
        """Flat-shaded RGB, one solid color per label"""
        lut = np.zeros((max(PALETTE) + 1, 3), dtype=np.uint8)
        for label, color in PALETTE.items():
            lut[label] = color
        return Image.fromarray(lut[np.clip(self.labels, 0, len(lut) - 1)], mode="RGB")


def pixel_rays(camera: SynthCamera) -> np.ndarray:
    """World-space ray per pixel center in row-major order, scaled to unit camera z"""
    K = camera.intrinsics
    jj, ii = np.meshgrid(np.arange(K.height), np.arange(K.width), indexing="ij")
    cam = np.column_stack([((ii - K.cx) / K.fx).reshape(-1), ((jj - K.cy) / K.fy).reshape(-1),
                           np.ones(K.width * K.height)])
    return cam @ camera.pose.R


def render_frame(scene: SynthScene, camera: SynthCamera) -> RenderedFrame:
    K = camera.intrinsics
    t, labels, ids = cast(scene, camera.pose.center, pixel_rays(camera))
    shape = (K.height, K.width)
    return RenderedFrame(
        DepthMap.from_array(np.where(np.isfinite(t), t, 0.0).reshape(shape)),
        labels.reshape(shape).astype(np.uint16),
        ids.reshape(shape).astype(np.int64),
    )


def visibility_oracle(scene: SynthScene, obj: SynthObject, camera: SynthCamera) -> Visibility:
    """Exact ray to the object center; visible iff the first hit is the object or lies beyond the center"""
    projection = project(obj.center, camera.pose, camera.intrinsics)
    if projection is BEHIND or not projection.pixel.in_bounds(camera.intrinsics.width, camera.intrinsics.height):
        return Visibility.OUT_OF_VIEW
    origin = camera.pose.center
    direction = (np.asarray(obj.center) - origin).reshape(1, 3)
    t, _, ids = cast(scene, origin, direction)
    if ids[0] == obj.id or t[0] >= 1.0:
        return Visibility.VISIBLE
    return Visibility.OCCLUDED


# --- generation ----------------------------------------------------------

def make_room(params: SceneParams) -> RoomSpec:
    W, D, H = params.room_width, params.room_depth, params.room_height
    if params.l_shape:
        rects = ((0.0, 0.0, W, D / 2), (0.0, D / 2, W / 2, D))
        polygon = ((0.0, 0.0), (W, 0.0), (W, D / 2), (W / 2, D / 2), (W / 2, D), (0.0, D))
    else:
        rects = ((0.0, 0.0, W, D),)
        polygon = ((0.0, 0.0), (W, 0.0), (W, D), (0.0, D))
    return RoomSpec(rects, polygon, H)


def make_intrinsics(params: SceneParams) -> CameraIntrinsics:
    f = (params.image_width / 2.0) / math.tan(math.radians(params.fov_deg) / 2.0)
    return CameraIntrinsics(f, f, (params.image_width - 1) / 2.0, (params.image_height - 1) / 2.0,
                            params.image_width, params.image_height)


def camera_positions(room: RoomSpec, count: int) -> List[Tuple[float, float]]:
    """Inset room corners (convex first), then inset edge midpoints, cycled to count"""
    polygon = room.polygon
    convex, concave, mids = [], [], []
    for k, v in enumerate(polygon):
        prev, nxt = polygon[k - 1], polygon[(k + 1) % len(polygon)]
        e1 = (v[0] - prev[0], v[1] - prev[1])
        e2 = (nxt[0] - v[0], nxt[1] - v[1])
        n1 = np.array([-e1[1], e1[0]]) / math.hypot(*e1)
        n2 = np.array([-e2[1], e2[0]]) / math.hypot(*e2)
        corner = tuple(float(c) for c in np.asarray(v) + CAMERA_INSET * (n1 + n2))
        (convex if e1[0] * e2[1] - e1[1] * e2[0] > 0 else concave).append(corner)
        mid = np.array([(v[0] + nxt[0]) / 2, (v[1] + nxt[1]) / 2]) + CAMERA_INSET * n2
        mids.append(tuple(float(c) for c in mid))
    candidates = convex + mids + concave
    return [candidates[k % len(candidates)] for k in range(count)]


def make_cameras(room: RoomSpec, params: SceneParams) -> Tuple[SynthCamera, ...]:
    K = make_intrinsics(params)
    cx, cy = room.centroid
    cameras = []
    for x, y in camera_positions(room, params.n_cameras):
        pose = look_at((x, y, CAMERA_HEIGHT), (cx, cy, LOOK_HEIGHT))
        cameras.append(SynthCamera(K, pose))
    return tuple(cameras)


def _separated(a, b, gap: float) -> bool:
    return a[2] + gap <= b[0] or b[2] + gap <= a[0] or a[3] + gap <= b[1] or b[3] + gap <= a[1]


def _sample_object(rng: SplitMix64, object_id: int, cylinder: bool, room: RoomSpec, margin: float) -> SynthObject:
    x0, y0, x1, y1 = room.rects[rng.below(len(room.rects))]
    if cylinder:
        category = rng.choice(sorted(CYLINDER_SIZES))
        (r_lo, r_hi), (h_lo, h_hi) = CYLINDER_SIZES[category]
        r = rng.uniform(r_lo, r_hi)
        h = rng.uniform(h_lo, h_hi)
        cx = rng.uniform(x0 + margin + r, x1 - margin - r)
        cy = rng.uniform(y0 + margin + r, y1 - margin - r)
        return SynthObject(object_id, category, VerticalCylinder((cx, cy), r, 0.0, h))
    category = rng.choice(sorted(BOX_SIZES))
    (sx_lo, sx_hi), (sy_lo, sy_hi), (h_lo, h_hi) = BOX_SIZES[category]
    sx, sy, h = rng.uniform(sx_lo, sx_hi), rng.uniform(sy_lo, sy_hi), rng.uniform(h_lo, h_hi)
    if rng.below(2):
        sx, sy = sy, sx
    cx = rng.uniform(x0 + margin + sx / 2, x1 - margin - sx / 2)
    cy = rng.uniform(y0 + margin + sy / 2, y1 - margin - sy / 2)
    return SynthObject(object_id, category, Box((cx, cy, h / 2), (sx, sy, h)))


def _fits(obj: SynthObject, placed: Sequence[SynthObject], room: RoomSpec, cameras: Sequence[SynthCamera],
          params: SceneParams) -> bool:
    fx0, fy0, fx1, fy1 = obj.footprint()
    if fx1 <= fx0 or fy1 <= fy0:
        return False
    inside = any(x0 + params.margin <= fx0 and fx1 <= x1 - params.margin and
                 y0 + params.margin <= fy0 and fy1 <= y1 - params.margin
                 for x0, y0, x1, y1 in room.rects)
    if not inside:
        return False
    if not all(_separated(obj.footprint(), other.footprint(), params.gap) for other in placed):
        return False
    for camera in cameras:
        x, y, _ = camera.pose.center
        if fx0 - params.gap <= x <= fx1 + params.gap and fy0 - params.gap <= y <= fy1 + params.gap:
            return False
    return True


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> SynthScene:
    """Deterministic furnished room; every object's center is visible from some camera"""
    rng = SplitMix64(seed)
    room = make_room(params)
    cameras = make_cameras(room, params)
    kinds = [False] * params.n_boxes + [True] * params.n_cylinders

    tries = 0
    while True:
        placed: List[SynthObject] = []
        for k, is_cylinder in enumerate(kinds, start=1):
            while True:
                tries += 1
                if tries > params.max_tries:
                    raise InfeasibleParamsError(
                        f"could not place {len(kinds)} objects within {params.max_tries} tries (seed {seed})"
                    )
                # rects too narrow for the sampled size produce empty ranges; _fits rejects them
                candidate = _sample_object(rng, k, is_cylinder, room, params.margin)
                if _fits(candidate, placed, room, cameras, params):
                    placed.append(candidate)
                    break
        scene = SynthScene(seed, params, room, tuple(placed), cameras)
        unseen = [o.id for o in placed
                  if all(visibility_oracle(scene, o, c) is not Visibility.VISIBLE for c in cameras)]
        if not unseen:
            logger.info(f"Generated scene seed={seed} with {len(placed)} objects after {tries} tries")
            return scene
        logger.debug(f"Objects {unseen} unseen by every camera; resampling layout")
        tries += 1


# --- ground truth --------------------------------------------------------

def first_seen(scene: SynthScene) -> Dict[int, int]:
    """Object id -> index of the first camera that sees its center"""
    seen = {}
    for index, camera in enumerate(scene.cameras):
        for obj in scene.primitives:
            if obj.id not in seen and visibility_oracle(scene, obj, camera) is Visibility.VISIBLE:
                seen[obj.id] = index
    return seen


def scene_geometry(scene: SynthScene) -> SceneGeometry:
    objects = []
    for obj in scene.primitives:
        p = obj.primitive
        size = tuple(p.size) if isinstance(p, Box) else (2 * p.radius, 2 * p.radius, p.z_max - p.z_min)
        objects.append(GeometryObject(obj.category, tuple(obj.center), size))
    seen = first_seen(scene)
    by_category: Dict[str, int] = {}
    for obj in scene.primitives:
        if obj.id in seen:
            by_category[obj.category] = min(by_category.get(obj.category, seen[obj.id]), seen[obj.id])
    return SceneGeometry(objects, scene.room.area, by_category)


def _primitive_to_dict(p) -> Dict:
    if isinstance(p, Box):
        return {"kind": "box", "center": list(p.center), "size": list(p.size)}
    return {"kind": "cylinder", "center_xy": list(p.center_xy), "radius": p.radius, "z_min": p.z_min, "z_max": p.z_max}


def _primitive_from_dict(data: Dict):
    if data["kind"] == "box":
        return Box(tuple(data["center"]), tuple(data["size"]))
    return VerticalCylinder(tuple(data["center_xy"]), data["radius"], data["z_min"], data["z_max"])


def _camera_to_dict(camera: SynthCamera) -> Dict:
    K = camera.intrinsics
    return {
        "K": [float(v) for v in K.matrix.reshape(-1)],
        "Rt": [float(v) for v in np.hstack([camera.pose.R, camera.pose.t.reshape(3, 1)]).reshape(-1)],
        "width": K.width,
        "height": K.height,
    }


def _camera_from_dict(data: Dict) -> SynthCamera:
    return SynthCamera(CameraIntrinsics.from_matrix(data["K"], data["width"], data["height"]),
                       CameraPose.from_matrix(data["Rt"]))


def scene_to_dict(scene: SynthScene) -> Dict:
    return {
        "seed": scene.seed,
        "params": asdict(scene.params),
        "room": {"rects": [list(r) for r in scene.room.rects], "polygon": [list(v) for v in scene.room.polygon],
                 "height": scene.room.height, "area": scene.room.area},
        "objects": [{"id": o.id, "category": o.category, "label": o.label, **_primitive_to_dict(o.primitive)}
                    for o in scene.primitives],
        "cameras": [_camera_to_dict(c) for c in scene.cameras],
    }


def scene_from_dict(data: Dict) -> SynthScene:
    room = data["room"]
    return SynthScene(
        seed=int(data["seed"]),
        params=SceneParams(**data["params"]),
        room=RoomSpec(tuple(tuple(r) for r in room["rects"]), tuple(tuple(v) for v in room["polygon"]),
                      room["height"]),
        primitives=tuple(SynthObject(o["id"], o["category"], _primitive_from_dict(o)) for o in data["objects"]),
        cameras=tuple(_camera_from_dict(c) for c in data["cameras"]),
    )


def load_ground_truth(path: str) -> SynthScene:
    with open(path, "r", encoding="utf-8") as f:
        return scene_from_dict(json.load(f)["scene"])


# --- questions -----------------------------------------------------------

def _unique_categories(scene: SynthScene) -> List[str]:
    counts: Dict[str, int] = {}
    for obj in scene.primitives:
        counts[obj.category] = counts.get(obj.category, 0) + 1
    return sorted(c for c, n in counts.items() if n == 1)


def generate_questions(scene: SynthScene, scene_id: str, seed: int = 0) -> List[Question]:
    """One question per task where the scene supports an unambiguous one

    Configurational questions keep every decision at least 15 degrees (or
    0.3 m) away from its boundary, so small geometric errors cannot flip them.
    """
    rng = SplitMix64(seed ^ scene.seed)
    geometry = scene_geometry(scene)
    unique = _unique_categories(scene)
    centers = {c: geometry.unique(c).center for c in unique}
    questions: List[Question] = []

    def add(task: str, prompt: str, oracle: Dict, options: Optional[List[str]] = None):
        q = Question(f"{scene_id}-{task}", scene_id, task, prompt, 1.0 if options is None else "A",
                     options or [], oracle)
        answer = solve(q, geometry)
        q.truth = letter(answer) if options is not None else float(answer)
        questions.append(q)

    categories = sorted({o.category for o in scene.primitives})
    if categories:
        c = rng.choice(categories)
        add("object_count", f"How many {c} objects are in this room?", {"category": c})

    if len(unique) >= 2:
        a = unique[rng.below(len(unique))]
        others = [c for c in unique if c != a]
        b = rng.choice(others)
        add("abs_distance", f"What is the distance between the {a} and the {b} (center to center), in meters?",
            {"a": a, "b": b})
    if unique:
        c = rng.choice(unique)
        add("object_size", f"What is the length of the longest dimension of the {c}, in centimeters?",
            {"category": c})
    add("room_size", "What is the floor area of this room, in square meters?", {})

    def dist(a: str, b: str) -> float:
        return float(np.linalg.norm(np.subtract(centers[a], centers[b])))

    for target in unique:
        options = [c for c in unique if c != target][:4]
        if len(options) < 2:
            break
        ranked = sorted(dist(target, c) for c in options)
        if ranked[1] - ranked[0] >= 0.3:
            add("rel_distance", f"Which of these objects is closest to the {target} (center to center)?",
                {"target": target}, options)
            break

    triples = [(a, b, c) for a in unique for b in unique for c in unique if len({a, b, c}) == 3]
    for a, b, c in triples:
        if min(dist(a, b), dist(a, c)) < 0.5:
            continue
        angle = heading_angle(centers[a], centers[b], centers[c])
        if min(abs(angle), abs(abs(angle) - 135.0), 180.0 - abs(angle)) >= 15.0:
            add("rel_direction",
                f"If I am standing by the {a} and facing the {b}, is the {c} to my left, right, or back?",
                {"standing": a, "facing": b, "query": c}, list(DIRECTIONS))
            break
    for a, b, c in triples:
        if min(dist(a, b), dist(a, c)) < 0.5:
            continue
        angle = heading_angle(centers[a], centers[b], centers[c])
        if min(abs(abs(angle) - 45.0), abs(abs(angle) - 135.0)) >= 15.0:
            add("route_plan",
                f"I am standing by the {a} and facing the {b}. What should my first move be to walk to the {c}?",
                {"start": a, "facing": b, "goal": c}, list(ROUTE_ACTIONS))
            break

    seen = [c for c in unique if c in geometry.first_seen]
    for k in range(len(seen)):
        group = seen[k:k + 3]
        if len(group) == 3 and len({geometry.first_seen[c] for c in group}) == 3:
            add("appr_order", f"In which order do these objects first appear across the images: {', '.join(group)}?",
                {"categories": group}, appearance_options(group))
            break
    return questions


# --- export --------------------------------------------------------------

def export_manifest(
    scene: SynthScene,
    out_dir: str,
    scale: float = 1.0,
    noise: float = 0.0,
    noise_seed: int = 0,
    recon_transform: Optional[RigidTransform] = None,
    scene_id: Optional[str] = None,
    jobs: int = 4,
) -> str:
    """Render every camera and write a manifest as an external reconstruction would

    Reconstruction coordinates are recon_transform(world) / scale, depths are
    (depth + N(0, noise)) / scale as float32 rasters, and the ground truth goes
    to ground_truth.json next to the manifest.
    """
    if not scale > 0:
        raise InvalidInputError(f"reconstruction scale must be positive, got {scale}")
    if noise < 0:
        raise InvalidInputError(f"noise sigma must be >= 0, got {noise}")
    scene_id = scene_id or f"synth_{scene.seed:04d}"
    transform = recon_transform or RigidTransform.identity()
    for sub in ("images", "depth", "labels"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    noise_rng = np.random.default_rng(SplitMix64(noise_seed).next_u64())
    noise_fields = [noise_rng.normal(0.0, noise, (c.intrinsics.height, c.intrinsics.width)) if noise > 0 else None
                    for c in scene.cameras]

    def work(item) -> Frame:
        index, camera = item
        rendered = render_frame(scene, camera)
        stem = f"frame_{index:03d}"
        image_path = os.path.join(out_dir, "images", stem + ".png")
        depth_path = os.path.join(out_dir, "depth", stem + ".depth")
        label_path = os.path.join(out_dir, "labels", stem + ".png")
        rendered.image().save(image_path, format="PNG")

        depths = rendered.depth.depths
        if noise_fields[index] is not None:
            depths = np.where(rendered.depth.valid, np.maximum(depths + noise_fields[index], 1e-3), 0.0)
        encode_depth(DepthMap(depths / scale, rendered.depth.valid), depth_path, scale=1.0)
        encode_labels(rendered.labels, label_path)

        recon = compose(camera.pose, invert(transform))
        pose = CameraPose(recon.R, recon.t / scale)
        return Frame(image_path, depth_path, label_path, camera.intrinsics, pose)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        frames = list(pool.map(work, enumerate(scene.cameras)))

    manifest = SceneManifest(scene_id, tuple(frames), scene.labels, {"ceiling": scene.room.height}, 1.0, "right")
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest, manifest_path)

    truth = {
        "scene": scene_to_dict(scene),
        "reconstruction": {
            "scale": scale,
            "noise": noise,
            "transform": [float(v) for v in transform.as_matrix()[:3].reshape(-1)],
        },
    }
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as f:
        json.dump(truth, f, indent=2)
        f.write("\n")

    write_questions(os.path.join(out_dir, "questions.jsonl"), generate_questions(scene, scene_id))
    logger.info(f"Exported {scene_id} ({len(frames)} frames, scale {scale}, noise {noise}) to {out_dir}")
    return manifest_path
