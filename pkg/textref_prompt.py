"""
Textual References and Prompt Assembly
Turns extracted geometry into ID-indexed reference lines and builds the
prompt text for each mode. Both are pure functions of their inputs.
"""

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from errors import MalformedFileError
from geometry import CameraIntrinsics, CameraPose
from object_extract import Box, Primitive, RoomBoundary, SceneObject, VerticalCylinder

logger = logging.getLogger(__name__)


class PromptMode(Enum):
    FULL = "full"
    NO_ANNOTATION = "no-annotation"
    CAMERA_PARAMS = "camera-params"
    SCENE_DESCRIPTION = "scene-description"


INTRO = {
    PromptMode.FULL: (
        "The images show an indoor scene. Objects in the images are marked with numeric IDs. "
        "Each ID refers to the object with the same ID in the list of references below, "
        "which gives the object's 3D geometry."
    ),
    PromptMode.NO_ANNOTATION: (
        "The images show an indoor scene. The list of references below gives the 3D geometry "
        "of objects in the scene, each indexed by a numeric ID."
    ),
    PromptMode.CAMERA_PARAMS: (
        "The images show an indoor scene. The camera parameters of every image are listed below."
    ),
    PromptMode.SCENE_DESCRIPTION: (
        "The images show an indoor scene. Objects in the images are marked with numeric IDs. "
        "Each ID refers to the object with the same ID in the list of references below, "
        "which gives the object's 3D geometry."
    ),
}

DESCRIPTION_INTRO = (
    "Below is a description of an indoor scene, written from images in which objects were marked "
    "with numeric IDs, followed by the 3D geometry of those objects."
)

COORDINATES = (
    "All coordinates are metric (meters) in a {handedness}-handed coordinate system where +z points up "
    "and the floor lies at z=0. The x and y axes are aligned with the room walls."
)

ANSWER_INSTRUCTION = 'Give your final answer on a single line beginning with "ANSWER:".'

DESCRIBE_INSTRUCTION = (
    "Task: Describe the scene in detail, including the objects, their sizes and their spatial arrangement. "
    "Whenever you mention an object, its ID should be included next to the mention."
)

_BOX = re.compile(
    r"^\[(\d+)\] box center=\(([^)]*)\) size=\(([^)]*)\)$"
)
_CYLINDER = re.compile(
    r"^\[(\d+)\] cylinder center=\(([^)]*)\) radius=(\S+) z=\[([^\]]*)\]$"
)


def _num(value: float, precision: int) -> str:
    # +0.0 folds negative zero into zero
    return f"{round(float(value), precision) + 0.0:.{precision}f}"


def _tuple(values: Sequence[float], precision: int) -> str:
    return ",".join(_num(v, precision) for v in values)


@dataclass(frozen=True)
class ReferenceBlock:
    lines: Tuple[str, ...]

    @property
    def empty(self) -> bool:
        return not self.lines

    @property
    def ids(self) -> List[int]:
        return [_line_id(line) for line in self.lines]

    @property
    def text(self) -> str:
        return "\n".join(self.lines)


def _line_id(line: str) -> int:
    return int(line[1:line.index("]")])


def format_primitive(primitive: Primitive, precision: int = 2) -> str:
    if isinstance(primitive, Box):
        return f"box center=({_tuple(primitive.center, precision)}) size=({_tuple(primitive.size, precision)})"
    return (
        f"cylinder center=({_tuple(primitive.center_xy, precision)}) "
        f"radius={_num(primitive.radius, precision)} "
        f"z=[{_num(primitive.z_min, precision)},{_num(primitive.z_max, precision)}]"
    )


def serialize_refs(objects: Sequence[SceneObject], precision: int = 2) -> ReferenceBlock:
    """One line per object in ascending id order; geometry only, never categories"""
    lines = tuple(f"[{obj.id}] {format_primitive(obj.primitive, precision)}"
                  for obj in sorted(objects, key=lambda o: o.id))
    if not lines:
        logger.warning("No objects to reference; reference block is empty")
    return ReferenceBlock(lines)


def parse_refs(lines: Sequence[str]) -> List[Tuple[int, Primitive]]:
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        box = _BOX.match(line)
        cylinder = _CYLINDER.match(line)
        try:
            if box:
                center = tuple(float(v) for v in box.group(2).split(","))
                size = tuple(float(v) for v in box.group(3).split(","))
                out.append((int(box.group(1)), Box(center, size)))
            elif cylinder:
                cx, cy = (float(v) for v in cylinder.group(2).split(","))
                z_min, z_max = (float(v) for v in cylinder.group(4).split(","))
                out.append((int(cylinder.group(1)), VerticalCylinder((cx, cy), float(cylinder.group(3)), z_min, z_max)))
            else:
                raise ValueError("unrecognized reference line")
        except ValueError as e:
            raise MalformedFileError(f"bad reference line {line!r}: {e}")
    return out


@dataclass(frozen=True)
class CameraView:
    """One image's calibration, already expressed against the aligned metric frame"""

    intrinsics: CameraIntrinsics
    pose: CameraPose


def _room_section(room: Optional[RoomBoundary], precision: int, include_polygon: bool) -> str:
    if room is None:
        return "Room size: unknown."
    text = (f"Room size: {_num(room.area, precision)} square meters of floor area, "
            f"ceiling height {_num(room.height, precision)} meters.")
    if include_polygon:
        vertices = " ".join(f"({_tuple(v, precision)})" for v in room.polygon)
        text += f"\nRoom boundary polygon (x,y vertices in order): {vertices}"
    return text


def _references_section(references: ReferenceBlock) -> str:
    if references.empty:
        return "References: none"
    return "References (boxes are axis-aligned, cylinders are vertical):\n" + references.text


def _matrix(R, digits: int = 4) -> str:
    return "[" + ",".join("[" + ",".join(_num(v, digits) for v in row) + "]" for row in R) + "]"


def _cameras_section(cameras: Sequence[CameraView], precision: int) -> str:
    lines = ["Cameras (intrinsics in pixels; R and t map scene coordinates to camera coordinates, "
             "camera +z looks forward and +y points down in the image):"]
    for n, view in enumerate(cameras, start=1):
        K = view.intrinsics
        lines.append(
            f"Image {n}: fx={_num(K.fx, precision)} fy={_num(K.fy, precision)} "
            f"cx={_num(K.cx, precision)} cy={_num(K.cy, precision)} "
            f"R={_matrix(view.pose.R)} t=({_tuple(view.pose.t, precision)})"
        )
    return "\n".join(lines)


def _question_section(question: str) -> Optional[str]:
    question = question.strip()
    if not question:
        return None
    return f"Question: {question}\n{ANSWER_INSTRUCTION}"


def build_prompt(
    references: ReferenceBlock,
    room: Optional[RoomBoundary],
    question: str = "",
    mode: PromptMode = PromptMode.FULL,
    cameras: Sequence[CameraView] = (),
    handedness: str = "right",
    precision: int = 2,
    include_polygon: bool = False,
) -> str:
    """Sections, in order: intro, coordinates, room, references (or cameras), task"""
    mode = PromptMode(mode)
    sections = [
        INTRO[mode],
        COORDINATES.format(handedness=handedness),
        _room_section(room, precision, include_polygon),
    ]
    if mode is PromptMode.CAMERA_PARAMS:
        sections.append(_cameras_section(cameras, precision))
    else:
        sections.append(_references_section(references))

    if mode is PromptMode.SCENE_DESCRIPTION:
        task = DESCRIBE_INSTRUCTION
        if question.strip():
            task += f"\nThe description will be used to answer this question: {question.strip()}"
        sections.append(task)
    else:
        block = _question_section(question)
        if block:
            sections.append(block)
    return "\n\n".join(sections) + "\n"


def attach_question(prompt: str, question: str) -> str:
    """A question-less prompt plus its question section; equals build_prompt with that question"""
    block = _question_section(question)
    if block is None:
        return prompt
    return prompt.rstrip("\n") + "\n\n" + block + "\n"


def build_description_prompt(
    description: str,
    references: ReferenceBlock,
    room: Optional[RoomBoundary],
    question: str,
    handedness: str = "right",
    precision: int = 2,
    include_polygon: bool = False,
) -> str:
    """Second step of scene-description mode: answer from the ID-citing description, no images"""
    sections = [
        DESCRIPTION_INTRO,
        COORDINATES.format(handedness=handedness),
        _room_section(room, precision, include_polygon),
        _references_section(references),
        "Scene description:\n" + description.strip(),
    ]
    block = _question_section(question)
    if block:
        sections.append(block)
    return "\n\n".join(sections) + "\n"


@dataclass
class GR3DBundle:
    """Everything a query needs: prompt, images and the geometry behind them"""

    scene_id: str
    references: Tuple[str, ...]
    image_paths: Tuple[str, ...]
    room: Optional[RoomBoundary]
    scale: float
    mode: str
    prompt: str
    config_hash: str = ""
    references_empty: bool = False
    annotated_ids: Dict[int, List[int]] = field(default_factory=dict)

    def unreferenced_ids(self) -> List[int]:
        """Annotated ids lacking a reference line (must be empty)"""
        referenced = {_line_id(line) for line in self.references}
        drawn = {i for ids in self.annotated_ids.values() for i in ids}
        return sorted(drawn - referenced)

    def to_dict(self) -> Dict:
        return {
            "scene_id": self.scene_id,
            "references": list(self.references),
            "image_paths": list(self.image_paths),
            "room": None if self.room is None else {
                "polygon": [list(v) for v in self.room.polygon],
                "area": self.room.area,
                "height": self.room.height,
            },
            "scale": self.scale,
            "mode": self.mode,
            "prompt": self.prompt,
            "config_hash": self.config_hash,
            "references_empty": self.references_empty,
            "annotated_ids": {str(k): v for k, v in sorted(self.annotated_ids.items())},
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GR3DBundle":
        room = data.get("room")
        return cls(
            scene_id=data["scene_id"],
            references=tuple(data["references"]),
            image_paths=tuple(data["image_paths"]),
            room=None if room is None else RoomBoundary(
                tuple(tuple(v) for v in room["polygon"]), float(room["area"]), float(room["height"])),
            scale=float(data["scale"]),
            mode=data["mode"],
            prompt=data["prompt"],
            config_hash=data.get("config_hash", ""),
            references_empty=bool(data.get("references_empty", False)),
            annotated_ids={int(k): list(v) for k, v in data.get("annotated_ids", {}).items()},
        )
