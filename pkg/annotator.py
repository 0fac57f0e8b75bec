"""
Frame Annotator
Projects object centers into each frame, culls centers hidden behind the
frame's depth map and draws numeric ID markers onto the images.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from PIL import Image, ImageDraw, ImageFont
from PIL.PngImagePlugin import PngInfo

from cloud_builder import SceneAlignment
from errors import DimensionMismatchError, MissingFileError
from geometry import BEHIND, PixelCoord, project
from object_extract import Primitive, SceneObject
from scene_ingest import DepthMap, Frame, SceneManifest

logger = logging.getLogger(__name__)

# unit steps of the label nudge spiral, clockwise from east (image y points down)
NUDGE_DIRECTIONS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
MAX_NUDGE_STEPS = 3


class CullReason(Enum):
    BEHIND_CAMERA = "behind-camera"
    OUT_OF_BOUNDS = "out-of-bounds"
    OCCLUDED = "occluded"


@dataclass(frozen=True)
class Annotation:
    object_id: int
    frame_index: int
    pixel: Optional[PixelCoord]
    z: Optional[float]
    reason: Optional[CullReason] = None

    @property
    def culled(self) -> bool:
        return self.reason is not None


@dataclass(frozen=True)
class OcclusionPolicy:
    """tau(object) = max(min_tolerance, diagonal_fraction * space diagonal), in meters"""

    min_tolerance: float = 0.1
    diagonal_fraction: float = 0.5

    def tolerance(self, primitive: Primitive, scale: float = 1.0) -> float:
        """Tolerance in reconstruction units for a scene with the given metric scale"""
        return max(self.min_tolerance, self.diagonal_fraction * primitive.space_diagonal) / scale


@dataclass(frozen=True)
class MarkerStyle:
    marker_radius: int = 5
    padding: int = 2
    marker_color: Tuple[int, int, int] = (255, 32, 32)
    text_color: Tuple[int, int, int] = (255, 255, 255)
    box_color: Tuple[int, int, int] = (0, 0, 0)


@dataclass(frozen=True)
class LabelPlacement:
    object_id: int
    box: Tuple[int, int, int, int]
    steps: int

    @property
    def centroid(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return 0.5 * (x0 + x1), 0.5 * (y0 + y1)


def annotate_frame(
    objects: Sequence[SceneObject],
    frame: Frame,
    depth: DepthMap,
    alignment: SceneAlignment,
    policy: OcclusionPolicy = OcclusionPolicy(),
    frame_index: int = 0,
) -> List[Annotation]:
    """Project each object center and decide whether its mark is drawn

    Culled when behind the camera, outside the raster, or deeper than the
    depth map at the nearest pixel by more than the object's tolerance. An
    invalid depth pixel never culls.
    """
    K = frame.intrinsics
    annotations = []
    for obj in objects:
        center = alignment.to_reconstruction([obj.center])[0]
        projection = project(center, frame.pose, K)
        if projection is BEHIND:
            annotations.append(Annotation(obj.id, frame_index, None, None, CullReason.BEHIND_CAMERA))
            continue
        pixel, z = projection
        if not pixel.in_bounds(K.width, K.height):
            annotations.append(Annotation(obj.id, frame_index, pixel, z, CullReason.OUT_OF_BOUNDS))
            continue
        col, row = pixel.to_index()
        surface = depth.lookup(min(col, K.width - 1), min(row, K.height - 1))
        if surface is not None and z > surface + policy.tolerance(obj.primitive, alignment.scale):
            annotations.append(Annotation(obj.id, frame_index, pixel, z, CullReason.OCCLUDED))
        else:
            annotations.append(Annotation(obj.id, frame_index, pixel, z))
    return annotations


def _overlaps(a: Tuple[int, int, int, int], b: Tuple[int, int, int, int]) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _font() -> ImageFont.ImageFont:
    return ImageFont.load_default()


def render_annotations(
    image: Image.Image,
    annotations: Sequence[Annotation],
    style: MarkerStyle = MarkerStyle(),
) -> Tuple[Image.Image, List[LabelPlacement]]:
    """Draw a disk and a boxed id for every rendered annotation

    Label boxes that would overlap an earlier box are nudged along an
    8-direction spiral (up to three rings) and drawn in place if none is free.
    """
    out = image.copy()
    visible = [a for a in annotations if not a.culled]
    if not visible:
        return out, []

    draw = ImageDraw.Draw(out)
    font = _font()
    placed: List[LabelPlacement] = []
    for annotation in visible:
        x, y = annotation.pixel
        r = style.marker_radius
        draw.ellipse([x - r, y - r, x + r, y + r], fill=tuple(style.marker_color))

        text = str(annotation.object_id)
        left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
        w = right - left + 2 * style.padding
        h = bottom - top + 2 * style.padding

        def box_at(dx: int, dy: int) -> Tuple[int, int, int, int]:
            x0 = int(round(x - w / 2.0)) + dx
            y0 = int(round(y - h / 2.0)) + dy
            return (x0, y0, x0 + w, y0 + h)

        box, steps = box_at(0, 0), 0
        if any(_overlaps(box, p.box) for p in placed):
            for step in range(1, MAX_NUDGE_STEPS + 1):
                candidates = [box_at(ux * step * (w + 1), uy * step * (h + 1)) for ux, uy in NUDGE_DIRECTIONS]
                free = [c for c in candidates if not any(_overlaps(c, p.box) for p in placed)]
                if free:
                    box, steps = free[0], step
                    break

        draw.rectangle([box[0], box[1], box[2] - 1, box[3] - 1], fill=tuple(style.box_color))
        draw.text((box[0] + style.padding - left, box[1] + style.padding - top), text,
                  fill=tuple(style.text_color), font=font)
        placed.append(LabelPlacement(annotation.object_id, box, steps))
    return out, placed


def format_sidecar(annotations: Sequence[Annotation]) -> str:
    """One line per object: id i j culled reason"""
    lines = []
    for a in annotations:
        i = f"{a.pixel.i:.2f}" if a.pixel is not None else "-"
        j = f"{a.pixel.j:.2f}" if a.pixel is not None else "-"
        reason = a.reason.value if a.reason else "visible"
        lines.append(f"{a.object_id} {i} {j} {int(a.culled)} {reason}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_sidecar(text: str, frame_index: int = 0) -> List[Annotation]:
    annotations = []
    for line in text.splitlines():
        if not line.strip():
            continue
        oid, i, j, _, reason = line.split()
        pixel = PixelCoord(float(i), float(j)) if i != "-" else None
        annotations.append(Annotation(int(oid), frame_index, pixel, None,
                                      None if reason == "visible" else CullReason(reason)))
    return annotations


def _load_image(frame: Frame, index: int) -> Image.Image:
    try:
        with Image.open(frame.image_path) as img:
            image = img.convert("RGB")
    except FileNotFoundError:
        raise MissingFileError(f"frame {index}: missing image {frame.image_path}")
    if image.size != (frame.intrinsics.width, frame.intrinsics.height):
        raise DimensionMismatchError("image size does not match intrinsics", index, frame.image_path)
    return image


def annotate_scene(
    manifest: SceneManifest,
    objects: Sequence[SceneObject],
    alignment: SceneAlignment,
    out_dir: str,
    policy: OcclusionPolicy = OcclusionPolicy(),
    style: MarkerStyle = MarkerStyle(),
    config_hash: str = "",
    jobs: int = 4,
) -> List[str]:
    """Annotate every frame; writes frame_NNN.png plus a frame_NNN.txt sidecar"""
    os.makedirs(out_dir, exist_ok=True)

    def work(item) -> Tuple[str, int]:
        index, frame = item
        depth = frame.load_depth(manifest.depth_scale)
        annotations = annotate_frame(objects, frame, depth, alignment, policy, index)
        image, _ = render_annotations(_load_image(frame, index), annotations, style)
        stem = os.path.join(out_dir, f"frame_{index:03d}")
        info = PngInfo()
        info.add_text("gr3d-config", config_hash)
        image.save(stem + ".png", format="PNG", pnginfo=info)
        with open(stem + ".txt", "w", encoding="utf-8") as f:
            f.write(format_sidecar(annotations))
        return stem + ".png", sum(1 for a in annotations if not a.culled)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(work, enumerate(manifest.frames)))
    shown = sum(n for _, n in results)
    logger.info(f"Annotated {len(results)} frames ({shown} visible marks for {len(objects)} objects)")
    return [path for path, _ in results]


def visible_ids(sidecars: Sequence[str]) -> Dict[int, List[int]]:
    """Frame index -> object ids drawn in that frame, from sidecar files"""
    out = {}
    for index, path in enumerate(sidecars):
        with open(path, "r", encoding="utf-8") as f:
            out[index] = [a.object_id for a in parse_sidecar(f.read(), index) if not a.culled]
    return out
