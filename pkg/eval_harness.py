"""
Spatial Question Evaluation
Loads question sets, scores answers (multiple-choice accuracy and mean
relative accuracy), aggregates per-task means and renders the results table.
Also answers questions directly from scene geometry, which closes the
pipeline-to-score loop without a model in between.
"""

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidInputError, MalformedFileError

logger = logging.getLogger(__name__)

TASKS = (
    ("object_count", "Obj. Count", "numeric"),
    ("abs_distance", "Abs. Dist.", "numeric"),
    ("object_size", "Obj. Size", "numeric"),
    ("room_size", "Room Size", "numeric"),
    ("rel_distance", "Rel. Dist.", "mcq"),
    ("rel_direction", "Rel. Dir.", "mcq"),
    ("route_plan", "Route Plan", "mcq"),
    ("appr_order", "Appr. Order", "mcq"),
)
TASK_KIND = {name: kind for name, _, kind in TASKS}
TASK_TITLE = {name: title for name, title, _ in TASKS}

# mean relative accuracy thresholds, in percent
MRA_THRESHOLDS = tuple(range(50, 100, 5))

LEADING_LETTER = re.compile(r"^\(?([a-z])(?:[\).:\s]|$)")
STANDALONE_LETTER = re.compile(r"\b([A-Z])\b")
NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")

DIRECTIONS = ("left", "right", "back")
ROUTE_ACTIONS = ("go forward", "turn left", "turn right", "turn back")


def letter(index: int) -> str:
    return chr(ord("A") + index)


@dataclass
class Question:
    id: str
    scene_id: str
    task: str
    prompt: str
    truth: Any
    options: List[str] = field(default_factory=list)
    oracle: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASK_KIND:
            raise InvalidInputError(f"question {self.id}: unknown task {self.task!r}")
        if self.kind == "mcq":
            if len(self.options) < 2:
                raise InvalidInputError(f"question {self.id}: multiple choice needs at least 2 options")
            if self.truth not in [letter(i) for i in range(len(self.options))]:
                raise InvalidInputError(f"question {self.id}: truth {self.truth!r} is not an option letter")
        else:
            self.truth = float(self.truth)
            if not math.isfinite(self.truth):
                raise InvalidInputError(f"question {self.id}: numeric truth must be finite")

    @property
    def kind(self) -> str:
        return TASK_KIND[self.task]

    def full_prompt(self) -> str:
        """Question text with lettered options for multiple choice"""
        if self.kind != "mcq":
            return self.prompt
        options = " ".join(f"{letter(i)}. {text}" for i, text in enumerate(self.options))
        return f"{self.prompt} Options: {options}. Answer with the option letter."

    def to_dict(self) -> Dict:
        return {
            "id": self.id, "scene_id": self.scene_id, "task": self.task, "kind": self.kind,
            "prompt": self.prompt, "options": self.options, "truth": self.truth, "oracle": self.oracle,
        }


@dataclass
class ScoreRecord:
    question_id: str
    scene_id: str
    task: str
    answer: str
    truth: Any
    score: float
    unparseable: bool = False


@dataclass
class ScoreReport:
    task_means: Dict[str, float]
    overall: float
    counts: Dict[str, int]
    records: List[ScoreRecord]
    omitted: List[str] = field(default_factory=list)


# --- loading -------------------------------------------------------------

def question_from_dict(data: Dict) -> Question:
    return Question(
        id=str(data["id"]),
        scene_id=str(data["scene_id"]),
        task=data["task"],
        prompt=data["prompt"],
        truth=data["truth"],
        options=list(data.get("options", [])),
        oracle=dict(data.get("oracle", {})),
    )


def load_questions(path: str) -> List[Question]:
    questions = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                questions.append(question_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise MalformedFileError(f"{path}:{number}: {e}")
    logger.info(f"Loaded {len(questions)} questions from {path}")
    return questions


def write_questions(path: str, questions: Sequence[Question]):
    with open(path, "w", encoding="utf-8") as f:
        for q in questions:
            f.write(json.dumps(q.to_dict(), sort_keys=True) + "\n")


# --- scoring -------------------------------------------------------------

def extract_option(answer: str, n_options: int) -> Optional[str]:
    text = (answer or "").strip()
    valid = {letter(i) for i in range(n_options)}
    match = LEADING_LETTER.match(text.casefold())
    if match and match.group(1).upper() in valid:
        return match.group(1).upper()
    for candidate in STANDALONE_LETTER.findall(text):
        if candidate in valid:
            return candidate
    return None


def score_mcq(answer: str, question: Question) -> Tuple[int, bool]:
    """(1 or 0, unparseable flag)"""
    choice = extract_option(answer, len(question.options))
    if choice is None:
        return 0, True
    return int(choice == question.truth), False


def parse_number(answer: str) -> Optional[float]:
    match = NUMBER.search((answer or "").replace(",", ""))
    if not match:
        return None
    value = float(match.group(0))
    return value if math.isfinite(value) else None


def score_numeric(answer: float, truth: float) -> float:
    """Mean over thresholds t in {0.50, ..., 0.95} of [ |answer - truth| / truth < 1 - t ]

    Compared in exact rational arithmetic, so boundary cases are decided exactly.
    """
    if not truth > 0:
        raise InvalidInputError(f"numeric truth must be positive, got {truth}")
    error = abs(Fraction(answer) - Fraction(truth)) * 100
    passed = sum(1 for k in MRA_THRESHOLDS if error < (100 - k) * Fraction(truth))
    return passed / len(MRA_THRESHOLDS)


def score_answer(answer: str, question: Question) -> ScoreRecord:
    if question.kind == "mcq":
        score, unparseable = score_mcq(answer, question)
    else:
        value = parse_number(answer)
        unparseable = value is None
        score = 0.0 if unparseable else score_numeric(value, question.truth)
    return ScoreRecord(question.id, question.scene_id, question.task, answer, question.truth, float(score), unparseable)


def aggregate(records: Sequence[ScoreRecord]) -> ScoreReport:
    """Per-task means and their unweighted mean; empty task buckets are omitted"""
    if not records:
        raise InvalidInputError("cannot aggregate an empty record set")
    buckets: Dict[str, List[float]] = {name: [] for name, _, _ in TASKS}
    for record in records:
        buckets[record.task].append(record.score)
    means, counts, omitted = {}, {}, []
    for name, _, _ in TASKS:
        scores = buckets[name]
        if not scores:
            omitted.append(name)
            continue
        means[name] = math.fsum(scores) / len(scores)
        counts[name] = len(scores)
    if omitted:
        logger.warning(f"No records for tasks {', '.join(omitted)}; omitted from the average")
    overall = math.fsum(means.values()) / len(means)
    return ScoreReport(means, overall, counts, list(records), omitted)


def render_table(reports: Dict[str, ScoreReport]) -> str:
    """Markdown table, tasks as columns, scores x100; the best value per column in bold"""
    tasks = [name for name, _, _ in TASKS if any(name in r.task_means for r in reports.values())]
    columns = tasks + ["avg"]

    def value(report: ScoreReport, column: str) -> Optional[float]:
        if column == "avg":
            return round(100 * report.overall, 1)
        mean = report.task_means.get(column)
        return None if mean is None else round(100 * mean, 1)

    best = {}
    for column in columns:
        values = [v for v in (value(r, column) for r in reports.values()) if v is not None]
        best[column] = max(values) if values else None

    header = ["Method"] + [TASK_TITLE.get(c, "Avg.") for c in columns]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
    for method, report in reports.items():
        cells = [method]
        for column in columns:
            v = value(report, column)
            if v is None:
                cells.append("-")
            elif len(reports) > 1 and v == best[column]:
                cells.append(f"**{v:.1f}**")
            else:
                cells.append(f"{v:.1f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def records_csv(records: Sequence[ScoreRecord], config_hash: str = "") -> str:
    """Per-question scores as CSV text, each row tagged with the config that produced it"""
    buffer = io.StringIO(newline="")
    writer = csv.writer(buffer)
    writer.writerow(["question_id", "scene_id", "task", "answer", "truth", "score", "unparseable", "config_hash"])
    for r in records:
        writer.writerow([r.question_id, r.scene_id, r.task, r.answer, r.truth, f"{r.score:.4f}",
                         int(r.unparseable), config_hash])
    return buffer.getvalue()


def write_records(path: str, records: Sequence[ScoreRecord], config_hash: str = ""):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(records_csv(records, config_hash))


# --- answering from geometry ---------------------------------------------

@dataclass(frozen=True)
class GeometryObject:
    category: str
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]


@dataclass
class SceneGeometry:
    """What a perfect reader of the scene knows: objects, room area, first-sighting frames"""

    objects: List[GeometryObject]
    room_area: float
    first_seen: Dict[str, int] = field(default_factory=dict)

    def unique(self, category: str) -> GeometryObject:
        matches = [o for o in self.objects if o.category == category]
        if len(matches) != 1:
            raise InvalidInputError(f"category {category!r} occurs {len(matches)} times, expected once")
        return matches[0]

    def count(self, category: str) -> int:
        return sum(1 for o in self.objects if o.category == category)


def geometry_from_objects(objects, labels: Dict[int, str], room_area: float,
                          visible: Optional[Dict[int, List[int]]] = None) -> SceneGeometry:
    """SceneGeometry from extracted objects; first sightings come from per-frame visible ids"""
    geometry = []
    for obj in objects:
        p = obj.primitive
        size = tuple(p.size) if p.kind == "box" else (2 * p.radius, 2 * p.radius, p.z_max - p.z_min)
        geometry.append(GeometryObject(labels.get(obj.label, "unlabeled"), tuple(obj.center), size))
    first_seen: Dict[str, int] = {}
    by_id = {obj.id: labels.get(obj.label, "unlabeled") for obj in objects}
    for frame in sorted(visible or {}):
        for oid in visible[frame]:
            first_seen.setdefault(by_id.get(oid, ""), frame)
    return SceneGeometry(geometry, room_area, first_seen)


def _xy(point) -> np.ndarray:
    return np.asarray(point[:2], dtype=np.float64)


def heading_angle(origin, facing, target) -> float:
    """Signed angle in degrees from the facing direction to the target, counter-clockwise positive"""
    f = _xy(facing) - _xy(origin)
    v = _xy(target) - _xy(origin)
    return math.degrees(math.atan2(f[0] * v[1] - f[1] * v[0], f[0] * v[0] + f[1] * v[1]))


def direction_of(angle: float) -> str:
    """left / right / back relative to a facing direction (+z up, right-handed)"""
    if abs(angle) > 135.0:
        return "back"
    return "left" if angle > 0 else "right"


def route_action(angle: float) -> str:
    if abs(angle) <= 45.0:
        return "go forward"
    if abs(angle) > 135.0:
        return "turn back"
    return "turn left" if angle > 0 else "turn right"


def appearance_options(categories: Sequence[str]) -> List[str]:
    """Every ordering of the categories, as comma-separated option texts"""
    return [", ".join(p) for p in permutations(categories)]


def solve(question: Question, geometry: SceneGeometry) -> Any:
    """Exact answer from geometry: a number for numeric tasks, an option index for mcq"""
    args = question.oracle
    task = question.task
    if task == "object_count":
        return float(geometry.count(args["category"]))
    if task == "abs_distance":
        a, b = geometry.unique(args["a"]), geometry.unique(args["b"])
        return float(np.linalg.norm(np.subtract(a.center, b.center)))
    if task == "object_size":
        return 100.0 * max(geometry.unique(args["category"]).size)
    if task == "room_size":
        return float(geometry.room_area)
    if task == "rel_distance":
        target = geometry.unique(args["target"]).center
        distances = [np.linalg.norm(np.subtract(geometry.unique(c).center, target)) for c in question.options]
        return int(np.argmin(distances))
    if task == "rel_direction":
        angle = heading_angle(geometry.unique(args["standing"]).center,
                              geometry.unique(args["facing"]).center,
                              geometry.unique(args["query"]).center)
        return question.options.index(direction_of(angle))
    if task == "route_plan":
        angle = heading_angle(geometry.unique(args["start"]).center,
                              geometry.unique(args["facing"]).center,
                              geometry.unique(args["goal"]).center)
        return question.options.index(route_action(angle))
    if task == "appr_order":
        order = sorted(args["categories"], key=lambda c: geometry.first_seen.get(c, math.inf))
        return question.options.index(", ".join(order))
    raise InvalidInputError(f"no geometric solver for task {task!r}")


def answer_from_geometry(question: Question, geometry: SceneGeometry) -> str:
    solution = solve(question, geometry)
    if question.kind == "mcq":
        return letter(solution)
    if question.task == "object_count":
        return str(int(solution))
    return f"{solution:.4f}"
