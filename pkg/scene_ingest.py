"""
Scene Manifest Ingestion
Loads and validates the per-frame images, depth maps, label maps and calibration
produced by external reconstruction and segmentation models.

Manifest schema (UTF-8 JSON, paths relative to the manifest file):

    {
      "scene_id": "kitchen_01",
      "depth_scale": 0.001,
      "handedness": "right",
      "labels": {"1": "floor", "2": "wall"},
      "reference_heights": {"ceiling": 2.4},
      "frames": [
        {"image": "images/000.png", "depth": "depth/000.png", "labels": "labels/000.png",
         "K": [fx, 0, cx, 0, fy, cy, 0, 0, 1],
         "Rt": [r00, r01, r02, t0, r10, r11, r12, t1, r20, r21, r22, t2],
         "width": 640, "height": 480}
      ]
    }

Depth rasters are 16-bit PNG (raw x depth_scale = meters) or, for files ending
in .depth, little-endian float32 with a uint32 width/height header. Label
rasters are 16-bit PNG; id 0 means unlabeled.
"""

import json
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from errors import (
    DimensionMismatchError,
    FrameError,
    InvalidInputError,
    InvalidRotationError,
    MalformedFileError,
    MissingFileError,
    UnknownLabelError,
)
from geometry import CameraIntrinsics, CameraPose

logger = logging.getLogger(__name__)

DEFAULT_DEPTH_SCALE = 0.001
FLOAT_DEPTH_SUFFIX = ".depth"
FLOAT_HEADER = struct.Struct("<II")


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel z-depth (meters, along the camera forward axis) plus validity mask"""

    depths: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.depths.shape != self.valid.shape or self.depths.ndim != 2:
            raise InvalidInputError("depth and mask must be matching 2D rasters")
        good = self.depths[self.valid]
        if good.size and not (np.all(np.isfinite(good)) and np.all(good > 0)):
            raise InvalidInputError("valid depths must be positive and finite")

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    @property
    def height(self) -> int:
        return self.depths.shape[0]

    @classmethod
    def from_array(cls, depths: np.ndarray) -> "DepthMap":
        depths = np.asarray(depths, dtype=np.float64)
        valid = np.isfinite(depths) & (depths > 0)
        return cls(np.where(valid, depths, 0.0), valid)

    def lookup(self, col: int, row: int) -> Optional[float]:
        """Depth at an integer pixel, or None when invalid or outside the raster"""
        if not (0 <= col < self.width and 0 <= row < self.height) or not self.valid[row, col]:
            return None
        return float(self.depths[row, col])


@dataclass(frozen=True)
class Frame:
    image_path: str
    depth_path: str
    label_path: str
    intrinsics: CameraIntrinsics
    pose: CameraPose

    def load_depth(self, scale: float) -> DepthMap:
        return decode_depth(self.depth_path, scale)

    def load_labels(self) -> np.ndarray:
        return decode_labels(self.label_path)


@dataclass(frozen=True)
class SceneManifest:
    scene_id: str
    frames: Tuple[Frame, ...]
    labels: Dict[int, str]
    reference_heights: Dict[str, float] = field(default_factory=dict)
    depth_scale: float = DEFAULT_DEPTH_SCALE
    handedness: str = "right"
    path: Optional[str] = field(default=None, compare=False)

    def label_ids(self, categories) -> List[int]:
        """Label ids whose category name is in categories, ascending"""
        wanted = set(categories)
        return sorted(i for i, name in self.labels.items() if name in wanted)

    def category(self, label_id: int) -> str:
        return self.labels.get(label_id, "unlabeled")


# --- raster codecs -------------------------------------------------------

def _read_png16(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in ("I;16", "I;16B", "I;16L", "I", "L"):
                raise MalformedFileError(f"expected single-channel 16-bit PNG, got mode {img.mode}: {path}")
            raster = np.array(img)
    except FileNotFoundError:
        raise MissingFileError(f"file not found: {path}")
    except OSError as e:
        raise MalformedFileError(f"cannot decode {path}: {e}")
    if raster.ndim != 2 or raster.min(initial=0) < 0 or raster.max(initial=0) > 0xFFFF:
        raise MalformedFileError(f"raster out of 16-bit range: {path}")
    return raster.astype(np.uint16)


def _write_png16(raster: np.ndarray, path: str):
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise InvalidInputError("raster must be 2D")
    if raster.size and (raster.min() < 0 or raster.max() > 0xFFFF):
        raise InvalidInputError("raster values must fit in 16 bits")
    Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint16)).save(path, format="PNG")


def _read_float_raster(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise MissingFileError(f"file not found: {path}")
    if len(blob) < FLOAT_HEADER.size:
        raise MalformedFileError(f"truncated float raster header: {path}")
    width, height = FLOAT_HEADER.unpack_from(blob)
    expected = FLOAT_HEADER.size + 4 * width * height
    if len(blob) != expected:
        raise MalformedFileError(f"float raster {path}: {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype="<f4", offset=FLOAT_HEADER.size).reshape(height, width)


def decode_depth(path: str, scale: float = DEFAULT_DEPTH_SCALE) -> DepthMap:
    """Decode a depth raster into meters; raw zero (or non-finite) means invalid"""
    if not scale > 0:
        raise InvalidInputError(f"depth scale must be positive, got {scale}")
    if path.endswith(FLOAT_DEPTH_SUFFIX):
        raw = _read_float_raster(path).astype(np.float64)
        valid = np.isfinite(raw) & (raw > 0)
    else:
        raw = _read_png16(path).astype(np.float64)
        valid = raw > 0
    return DepthMap(np.where(valid, raw * scale, 0.0), valid)


def encode_depth(depth: DepthMap, path: str, scale: float = DEFAULT_DEPTH_SCALE):
    """Inverse of decode_depth; invalid pixels are written as zero"""
    values = np.where(depth.valid, depth.depths, 0.0)
    if path.endswith(FLOAT_DEPTH_SUFFIX):
        raw = (values / scale).astype("<f4")
        with open(path, "wb") as f:
            f.write(FLOAT_HEADER.pack(depth.width, depth.height))
            f.write(raw.tobytes())
    else:
        raw = np.rint(values / scale)
        if raw.size and raw.max() > 0xFFFF:
            raise InvalidInputError(f"depth exceeds 16-bit range at scale {scale}")
        _write_png16(raw.astype(np.uint16), path)


def decode_labels(path: str) -> np.ndarray:
    return _read_png16(path)


def encode_labels(labels: np.ndarray, path: str):
    _write_png16(labels, path)


def _raster_size(path: str) -> Tuple[int, int]:
    """(width, height) of a raster without decoding its pixels"""
    if path.endswith(FLOAT_DEPTH_SUFFIX):
        try:
            with open(path, "rb") as f:
                header = f.read(FLOAT_HEADER.size)
        except FileNotFoundError:
            raise MissingFileError(f"file not found: {path}")
        if len(header) != FLOAT_HEADER.size:
            raise MalformedFileError(f"truncated float raster header: {path}")
        return FLOAT_HEADER.unpack(header)
    try:
        with Image.open(path) as img:
            return img.size
    except FileNotFoundError:
        raise MissingFileError(f"file not found: {path}")
    except OSError as e:
        raise MalformedFileError(f"cannot decode {path}: {e}")


# --- manifest ------------------------------------------------------------

def _unique_keys(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise MalformedFileError(f"duplicate key in manifest: {key!r}")
        out[key] = value
    return out


def _parse_frame(index: int, raw: Dict, base_dir: str) -> Frame:
    try:
        paths = {k: os.path.join(base_dir, raw[k]) for k in ("image", "depth", "labels")}
        K = raw["K"]
        Rt = raw["Rt"]
        width, height = int(raw["width"]), int(raw["height"])
    except (KeyError, TypeError, ValueError) as e:
        raise FrameError(f"malformed frame entry: {e}", index)
    if len(K) != 9 or len(Rt) != 12:
        raise FrameError("K must have 9 values and Rt 12 values", index)
    try:
        intrinsics = CameraIntrinsics.from_matrix(K, width, height)
    except InvalidInputError as e:
        raise FrameError(f"invalid intrinsics: {e}", index)
    try:
        pose = CameraPose.from_matrix(Rt)
    except InvalidRotationError as e:
        raise InvalidRotationError(str(e), index)
    return Frame(paths["image"], paths["depth"], paths["labels"], intrinsics, pose)


def _validate_frame(index: int, frame: Frame, known_labels: set):
    for path in (frame.image_path, frame.depth_path, frame.label_path):
        if not os.path.exists(path):
            raise MissingFileError(f"frame {index}: missing file {path}")
    expected = (frame.intrinsics.width, frame.intrinsics.height)
    for path in (frame.image_path, frame.depth_path, frame.label_path):
        size = tuple(_raster_size(path))
        if size != expected:
            raise DimensionMismatchError(
                f"raster is {size[0]}x{size[1]} but intrinsics say {expected[0]}x{expected[1]}", index, path
            )
    labels = decode_labels(frame.label_path)
    unknown = sorted(set(np.unique(labels).tolist()) - known_labels - {0})
    if unknown:
        raise UnknownLabelError(f"label ids {unknown} not in label table", index, frame.label_path)


def load_manifest(path: str, jobs: int = 4) -> SceneManifest:
    """Load a manifest and validate every frame; never repairs data"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f, object_pairs_hook=_unique_keys)
    except FileNotFoundError:
        raise MissingFileError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise MalformedFileError(f"manifest is not valid JSON: {path}: {e}")

    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        scene_id = str(raw["scene_id"])
        frames_raw = raw["frames"]
        labels = {int(k): str(v) for k, v in raw.get("labels", {}).items()}
        reference_heights = {str(k): float(v) for k, v in raw.get("reference_heights", {}).items()}
        depth_scale = float(raw.get("depth_scale", DEFAULT_DEPTH_SCALE))
        handedness = str(raw.get("handedness", "right"))
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFileError(f"manifest {path}: bad or missing field: {e}")

    if not isinstance(frames_raw, list) or not frames_raw:
        raise MalformedFileError(f"manifest {path}: at least one frame required")
    if 0 in labels:
        raise MalformedFileError("label id 0 is reserved for unlabeled")
    if not depth_scale > 0:
        raise MalformedFileError(f"depth_scale must be positive, got {depth_scale}")
    if handedness not in ("right", "left"):
        raise MalformedFileError(f"handedness must be 'right' or 'left', got {handedness!r}")

    frames = [_parse_frame(i, f, base_dir) for i, f in enumerate(frames_raw)]
    known = set(labels)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        # list() re-raises the first failing frame in frame order
        list(pool.map(lambda item: _validate_frame(item[0], item[1], known), enumerate(frames)))

    logger.info(f"Loaded manifest {scene_id} with {len(frames)} frames")
    return SceneManifest(scene_id, tuple(frames), labels, reference_heights, depth_scale, handedness,
                         os.path.abspath(path))


def manifest_to_dict(manifest: SceneManifest, base_dir: str) -> Dict:
    frames = []
    for frame in manifest.frames:
        K = frame.intrinsics.matrix
        Rt = np.hstack([frame.pose.R, frame.pose.t.reshape(3, 1)])
        frames.append({
            "image": os.path.relpath(frame.image_path, base_dir),
            "depth": os.path.relpath(frame.depth_path, base_dir),
            "labels": os.path.relpath(frame.label_path, base_dir),
            "K": [float(v) for v in K.reshape(-1)],
            "Rt": [float(v) for v in Rt.reshape(-1)],
            "width": frame.intrinsics.width,
            "height": frame.intrinsics.height,
        })
    return {
        "scene_id": manifest.scene_id,
        "depth_scale": manifest.depth_scale,
        "handedness": manifest.handedness,
        "labels": {str(k): v for k, v in sorted(manifest.labels.items())},
        "reference_heights": dict(sorted(manifest.reference_heights.items())),
        "frames": frames,
    }


def write_manifest(manifest: SceneManifest, path: str):
    """Serialize a manifest; frame paths are stored relative to the manifest's directory"""
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest_to_dict(manifest, base_dir), f, indent=2)
        f.write("\n")
