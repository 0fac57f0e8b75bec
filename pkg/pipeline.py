"""
Pipeline Stage Runner
Runs synth, extract, annotate, prompt, ask and eval for one scene at a time.
Each stage writes into <work_dir>/<scene_id>/<stage>/ and leaves a stamp.json
recording a content hash of its inputs; re-running with unchanged inputs is a
no-op.
"""

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from annotator import MarkerStyle, OcclusionPolicy, annotate_scene, visible_ids
from cloud_builder import SceneAlignment, align_scene, build_cloud, category_points, export_ply
from config import PipelineConfig
from errors import GR3DError, InvalidInputError, MissingFileError
from eval_harness import (
    Question,
    ScoreRecord,
    aggregate,
    answer_from_geometry,
    geometry_from_objects,
    load_questions,
    records_csv,
    render_table,
    score_answer,
)
from llm_service import MLLMClient, QueryJob, ResponseCache, batch_query
from object_extract import extract_objects, extract_room, read_objects, write_objects
from scene_ingest import SceneManifest, load_manifest
from synth_oracle import SceneParams, export_manifest, generate_scene, load_ground_truth, scene_geometry
from textref_prompt import (
    CameraView,
    GR3DBundle,
    PromptMode,
    ReferenceBlock,
    attach_question,
    build_description_prompt,
    build_prompt,
    serialize_refs,
)

logger = logging.getLogger(__name__)

STAGES = ("synth", "extract", "annotate", "prompt", "ask", "eval")
ANSWER_SOURCES = ("answers", "oracle", "geometry")
STAMP = "stamp.json"


@dataclass
class StageResult:
    stage: str
    scene_id: str
    out_dir: str
    outputs: List[str] = field(default_factory=list)
    skipped: bool = False
    summary: str = ""


# --- stamps --------------------------------------------------------------

def file_digest(path: str) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    except FileNotFoundError:
        raise MissingFileError(f"stage input not found: {path}")
    return digest.hexdigest()


def stage_key(stage: str, config: PipelineConfig, inputs: Sequence[str], params: Optional[Dict] = None) -> str:
    """Hash of the config, every input file's bytes and any stage parameters"""
    material = {
        "stage": stage,
        "config": config.config_hash(),
        "inputs": [file_digest(p) for p in inputs],
        "params": params or {},
    }
    return hashlib.sha256(json.dumps(material, sort_keys=True).encode("utf-8")).hexdigest()


def is_fresh(out_dir: str, key: str) -> bool:
    try:
        with open(os.path.join(out_dir, STAMP), "r", encoding="utf-8") as f:
            stamp = json.load(f)
    except (FileNotFoundError, json.JSONDecodeError):
        return False
    if stamp.get("key") != key:
        return False
    for name, digest in stamp.get("outputs", {}).items():
        path = os.path.join(out_dir, name)
        if not os.path.exists(path) or file_digest(path) != digest:
            return False
    return True


def stamped_outputs(out_dir: str) -> List[str]:
    with open(os.path.join(out_dir, STAMP), "r", encoding="utf-8") as f:
        return [os.path.join(out_dir, name) for name in sorted(json.load(f)["outputs"])]


def write_stamp(out_dir: str, stage: str, key: str, config_hash: str, outputs: Sequence[str]):
    stamp = {
        "stage": stage,
        "key": key,
        "config_hash": config_hash,
        "outputs": {os.path.relpath(p, out_dir): file_digest(p) for p in sorted(outputs)},
    }
    with open(os.path.join(out_dir, STAMP), "w", encoding="utf-8") as f:
        json.dump(stamp, f, indent=2, sort_keys=True)
        f.write("\n")


def stage_dir(config: PipelineConfig, scene_id: str, stage: str) -> str:
    return os.path.join(config.paths.work_dir, scene_id, stage)


def _write_json(path: str, data: Dict):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_json(path: str) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise MissingFileError(f"missing stage output {path}; run the earlier stage first")


def manifest_inputs(manifest: SceneManifest) -> List[str]:
    paths = [manifest.path]
    for frame in manifest.frames:
        paths.extend([frame.image_path, frame.depth_path, frame.label_path])
    return paths


# --- synth ---------------------------------------------------------------

def run_synth(
    config: PipelineConfig,
    seed: int,
    params: SceneParams = SceneParams(),
    scale: float = 1.0,
    noise: float = 0.0,
    jobs: int = 4,
) -> StageResult:
    scene_id = f"synth_{seed:04d}"
    out_dir = stage_dir(config, scene_id, "synth")
    key = stage_key("synth", config, [], {"seed": seed, "params": asdict(params), "scale": scale, "noise": noise})
    if is_fresh(out_dir, key):
        return StageResult("synth", scene_id, out_dir, stamped_outputs(out_dir), skipped=True)

    scene = generate_scene(seed, params)
    manifest_path = export_manifest(scene, out_dir, scale, noise, noise_seed=seed, scene_id=scene_id, jobs=jobs)
    outputs = [os.path.join(root, name) for root, _, names in os.walk(out_dir) for name in names if name != STAMP]
    write_stamp(out_dir, "synth", key, config.config_hash(), outputs)
    return StageResult("synth", scene_id, out_dir, [manifest_path], summary=(
        f"{len(scene.primitives)} objects, {len(scene.cameras)} cameras, room {scene.room.area:.2f} m2"))


def synth_manifest(result: StageResult) -> str:
    return os.path.join(result.out_dir, "manifest.json")


# --- extract -------------------------------------------------------------

def run_extract(config: PipelineConfig, manifest_path: str, jobs: int = 4, export_cloud: bool = False) -> StageResult:
    """Manifest -> objects.txt (objects and room) and alignment.json"""
    manifest = load_manifest(manifest_path, jobs)
    out_dir = stage_dir(config, manifest.scene_id, "extract")
    key = stage_key("extract", config, manifest_inputs(manifest), {"export_cloud": export_cloud})
    if is_fresh(out_dir, key):
        return StageResult("extract", manifest.scene_id, out_dir, stamped_outputs(out_dir), skipped=True)
    os.makedirs(out_dir, exist_ok=True)

    e = config.extract
    config_hash = config.config_hash()
    cloud = build_cloud(manifest, e.stride, jobs)
    logger.debug(f"Cloud categories: {category_points(cloud, manifest.labels)[:8]}")
    floor_ids = manifest.label_ids(e.floor_categories)
    wall_ids = manifest.label_ids(e.wall_categories)
    reference_heights = manifest.reference_heights or e.reference_heights

    aligned, alignment = align_scene(cloud, manifest.labels, floor_ids, wall_ids, reference_heights,
                                     e.absolute_height_categories)
    grid, objects = extract_objects(aligned, manifest.labels, e.voxel_size, e.min_points_per_voxel,
                                    e.min_voxels_per_object, e.structural_categories, e.round_categories,
                                    e.residual_threshold)
    room = extract_room(grid, floor_ids, wall_ids, e.closing_iterations)

    objects_path = os.path.join(out_dir, "objects.txt")
    header = {"scene": manifest.scene_id, "config": config_hash, "scale": f"{alignment.scale:.6f}"}
    write_objects(objects_path, objects, room, header)
    alignment_path = os.path.join(out_dir, "alignment.json")
    _write_json(alignment_path, {**alignment.to_dict(), "config_hash": config_hash})
    outputs = [objects_path, alignment_path]
    if export_cloud:
        cloud_path = os.path.join(out_dir, "cloud.ply")
        export_ply(aligned, cloud_path)
        outputs.append(cloud_path)

    write_stamp(out_dir, "extract", key, config_hash, outputs)
    warning = " (no reference category, scale unknown)" if alignment.scale_warning else ""
    return StageResult("extract", manifest.scene_id, out_dir, outputs, summary=(
        f"{len(objects)} objects, room {room.area:.2f} m2, scale {alignment.scale:.4f}{warning}"))


def load_extraction(config: PipelineConfig, scene_id: str):
    out_dir = stage_dir(config, scene_id, "extract")
    objects_path = os.path.join(out_dir, "objects.txt")
    if not os.path.exists(objects_path):
        raise MissingFileError(f"missing stage output {objects_path}; run extract first")
    objects, room, _ = read_objects(objects_path)
    alignment = SceneAlignment.from_dict(_read_json(os.path.join(out_dir, "alignment.json")))
    return objects, room, alignment


def _extract_outputs(config: PipelineConfig, scene_id: str) -> List[str]:
    out_dir = stage_dir(config, scene_id, "extract")
    return [os.path.join(out_dir, "objects.txt"), os.path.join(out_dir, "alignment.json")]


# --- annotate ------------------------------------------------------------

def run_annotate(config: PipelineConfig, manifest_path: str, jobs: int = 4) -> StageResult:
    manifest = load_manifest(manifest_path, jobs)
    out_dir = stage_dir(config, manifest.scene_id, "annotate")
    inputs = manifest_inputs(manifest) + _extract_outputs(config, manifest.scene_id)
    key = stage_key("annotate", config, inputs)
    if is_fresh(out_dir, key):
        return StageResult("annotate", manifest.scene_id, out_dir, stamped_outputs(out_dir), skipped=True)

    objects, _, alignment = load_extraction(config, manifest.scene_id)
    a = config.annotate
    policy = OcclusionPolicy(a.min_tolerance, a.diagonal_fraction)
    style = MarkerStyle(a.marker_radius, a.label_padding, tuple(a.marker_color), tuple(a.text_color),
                        tuple(a.box_color))
    images = annotate_scene(manifest, objects, alignment, out_dir, policy, style, config.config_hash(), jobs)
    sidecars = [os.path.splitext(p)[0] + ".txt" for p in images]
    write_stamp(out_dir, "annotate", key, config.config_hash(), images + sidecars)
    shown = sum(len(ids) for ids in visible_ids(sidecars).values())
    return StageResult("annotate", manifest.scene_id, out_dir, images + sidecars, summary=(
        f"{len(images)} frames, {shown} marks for {len(objects)} objects"))


def _sidecars(config: PipelineConfig, manifest: SceneManifest) -> List[str]:
    out_dir = stage_dir(config, manifest.scene_id, "annotate")
    return [os.path.join(out_dir, f"frame_{i:03d}.txt") for i in range(len(manifest.frames))]


# --- prompt --------------------------------------------------------------

def select_frames(n_frames: int, max_images: int) -> List[int]:
    """Evenly spaced frame indices, at most max_images of them"""
    if n_frames <= max_images:
        return list(range(n_frames))
    return sorted({int(i) for i in np.round(np.linspace(0, n_frames - 1, max_images))})


def run_prompt(config: PipelineConfig, manifest_path: str, jobs: int = 4) -> StageResult:
    """Objects, room and annotated images -> bundle.json holding the question-less prompt"""
    manifest = load_manifest(manifest_path, jobs)
    out_dir = stage_dir(config, manifest.scene_id, "prompt")
    mode = PromptMode(config.prompt.mode)
    annotated = mode in (PromptMode.FULL, PromptMode.SCENE_DESCRIPTION)
    inputs = manifest_inputs(manifest) + _extract_outputs(config, manifest.scene_id)
    if annotated:
        sidecars = _sidecars(config, manifest)
        inputs += sidecars + [os.path.splitext(p)[0] + ".png" for p in sidecars]
    key = stage_key("prompt", config, inputs)
    if is_fresh(out_dir, key):
        return StageResult("prompt", manifest.scene_id, out_dir, stamped_outputs(out_dir), skipped=True)
    os.makedirs(out_dir, exist_ok=True)

    objects, room, alignment = load_extraction(config, manifest.scene_id)
    p = config.prompt
    references = serialize_refs(objects, p.precision)
    chosen = select_frames(len(manifest.frames), config.query.max_images)
    if annotated:
        drawn = visible_ids(sidecars)
        image_paths = [os.path.splitext(sidecars[i])[0] + ".png" for i in chosen]
        annotated_ids = {i: drawn[i] for i in chosen}
    else:
        image_paths = [manifest.frames[i].image_path for i in chosen]
        annotated_ids = {}
    cameras = [CameraView(manifest.frames[i].intrinsics, alignment.pose_to_aligned(manifest.frames[i].pose))
               for i in chosen]

    prompt = build_prompt(references, room, "", mode, cameras, manifest.handedness, p.precision, p.include_polygon)
    bundle = GR3DBundle(
        scene_id=manifest.scene_id,
        references=references.lines,
        image_paths=tuple(os.path.abspath(path) for path in image_paths),
        room=room,
        scale=alignment.scale,
        mode=mode.value,
        prompt=prompt,
        config_hash=config.config_hash(),
        references_empty=references.empty,
        annotated_ids=annotated_ids,
    )
    missing = bundle.unreferenced_ids()
    if missing:
        raise InvalidInputError(f"annotated ids without a reference line: {missing}")
    bundle_path = os.path.join(out_dir, "bundle.json")
    _write_json(bundle_path, bundle.to_dict())
    prompt_path = os.path.join(out_dir, "prompt.txt")
    with open(prompt_path, "w", encoding="utf-8") as f:
        f.write(prompt)
    write_stamp(out_dir, "prompt", key, config.config_hash(), [bundle_path, prompt_path])
    return StageResult("prompt", manifest.scene_id, out_dir, [bundle_path, prompt_path], summary=(
        f"{mode.value} prompt, {len(references.lines)} references, {len(image_paths)} images"))


def load_bundle(config: PipelineConfig, scene_id: str) -> GR3DBundle:
    return GR3DBundle.from_dict(_read_json(os.path.join(stage_dir(config, scene_id, "prompt"), "bundle.json")))


# --- ask -----------------------------------------------------------------

def default_questions_path(manifest: SceneManifest) -> str:
    return os.path.join(os.path.dirname(manifest.path), "questions.jsonl")


def scene_questions(manifest: SceneManifest, questions_path: Optional[str] = None) -> List[Question]:
    path = questions_path or default_questions_path(manifest)
    if not os.path.exists(path):
        raise MissingFileError(f"question set not found: {path}")
    return [q for q in load_questions(path) if q.scene_id == manifest.scene_id]


def run_ask(
    config: PipelineConfig,
    manifest_path: str,
    questions: Optional[Sequence[Question]] = None,
    questions_path: Optional[str] = None,
    client_factory: Callable[[], MLLMClient] = None,
    jobs: int = 4,
) -> StageResult:
    """Bundle + questions -> answers.jsonl, one line per question in question order"""
    manifest = load_manifest(manifest_path, jobs)
    if questions is None:
        questions = scene_questions(manifest, questions_path)
    out_dir = stage_dir(config, manifest.scene_id, "ask")
    prompt_dir = stage_dir(config, manifest.scene_id, "prompt")
    key = stage_key("ask", config, [os.path.join(prompt_dir, "bundle.json")],
                    {"questions": [q.to_dict() for q in questions]})
    if is_fresh(out_dir, key):
        return StageResult("ask", manifest.scene_id, out_dir, stamped_outputs(out_dir), skipped=True)
    os.makedirs(out_dir, exist_ok=True)

    bundle = load_bundle(config, manifest.scene_id)
    client = client_factory() if client_factory else MLLMClient(config.query)
    cache_dir = config.paths.cache_dir
    p = config.prompt

    if PromptMode(bundle.mode) is PromptMode.SCENE_DESCRIPTION:
        caption = client.cached_query(bundle.prompt, bundle.image_paths, ResponseCache(cache_dir))
        description_path = os.path.join(out_dir, "description.txt")
        with open(description_path, "w", encoding="utf-8") as f:
            f.write(caption.raw_text.strip() + "\n")
        references = ReferenceBlock(bundle.references)
        jobs_list = [QueryJob(build_description_prompt(caption.raw_text, references, bundle.room, q.full_prompt(),
                                                       manifest.handedness, p.precision, p.include_polygon),
                              (), q.id) for q in questions]
        extra_outputs = [description_path]
    else:
        jobs_list = [QueryJob(attach_question(bundle.prompt, q.full_prompt()), bundle.image_paths, q.id)
                     for q in questions]
        extra_outputs = []

    results = batch_query(client, jobs_list, config.query.concurrency, cache_dir)
    answers_path = os.path.join(out_dir, "answers.jsonl")
    with open(answers_path, "w", encoding="utf-8") as f:
        for r in results:
            record = {
                "question_id": r.job.key,
                "answer": r.result.answer if r.ok else "",
                "raw_text": r.result.raw_text if r.ok else "",
                "parse_warning": r.result.parse_warning if r.ok else True,
                "error": r.error,
                "config_hash": config.config_hash(),
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")
    outputs = [answers_path] + extra_outputs
    write_stamp(out_dir, "ask", key, config.config_hash(), outputs)
    failed = sum(1 for r in results if not r.ok)
    return StageResult("ask", manifest.scene_id, out_dir, outputs, summary=(
        f"{len(results)} questions answered, {failed} failed"))


def read_answers(path: str) -> Dict[str, str]:
    if not os.path.exists(path):
        raise MissingFileError(f"answers not found: {path}; run ask first")
    answers = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                answers[record["question_id"]] = record["answer"]
    return answers


# --- eval ----------------------------------------------------------------

def geometry_answers(config: PipelineConfig, manifest: SceneManifest, questions: Sequence[Question]) -> Dict[str, str]:
    """Answers computed from the extracted objects; unanswerable questions get an empty answer"""
    objects, room, _ = load_extraction(config, manifest.scene_id)
    sidecars = [p for p in _sidecars(config, manifest) if os.path.exists(p)]
    visible = visible_ids(sidecars) if len(sidecars) == len(manifest.frames) else {}
    geometry = geometry_from_objects(objects, manifest.labels, room.area if room else 0.0, visible)
    answers = {}
    for q in questions:
        try:
            answers[q.id] = answer_from_geometry(q, geometry)
        except (GR3DError, ValueError) as e:
            logger.warning(f"Question {q.id} not answerable from extracted geometry: {e}")
            answers[q.id] = ""
    return answers


def oracle_answers(manifest: SceneManifest, questions: Sequence[Question]) -> Dict[str, str]:
    truth_path = os.path.join(os.path.dirname(manifest.path), "ground_truth.json")
    if not os.path.exists(truth_path):
        raise MissingFileError(f"oracle answers need a ground-truth sidecar: {truth_path}")
    geometry = scene_geometry(load_ground_truth(truth_path))
    return {q.id: answer_from_geometry(q, geometry) for q in questions}


def _write_if_changed(path: str, text: str):
    # newline="" so CSV \r\n terminators compare byte for byte
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            if f.read() == text:
                return
    except FileNotFoundError:
        pass
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def _answer_inputs(config: PipelineConfig, manifest: SceneManifest, source: str) -> List[str]:
    """Files an answer source reads; missing ones surface when the answers are loaded"""
    if source == "oracle":
        candidates = [os.path.join(os.path.dirname(manifest.path), "ground_truth.json")]
    elif source == "geometry":
        candidates = _extract_outputs(config, manifest.scene_id) + _sidecars(config, manifest)
    else:
        candidates = [os.path.join(stage_dir(config, manifest.scene_id, "ask"), "answers.jsonl")]
    return [p for p in candidates if os.path.exists(p)]


def run_eval(
    config: PipelineConfig,
    manifest_path: str,
    source: str = "answers",
    questions_path: Optional[str] = None,
    jobs: int = 4,
) -> Tuple[StageResult, List[ScoreRecord]]:
    """Score one scene's questions; per-question CSV plus a report under eval/<source>/

    Records are always recomputed; the files are left alone when the stamp is fresh.
    """
    if source not in ANSWER_SOURCES:
        raise InvalidInputError(f"answer source must be one of {', '.join(ANSWER_SOURCES)}, got {source!r}")
    manifest = load_manifest(manifest_path, jobs)
    questions = scene_questions(manifest, questions_path)
    if source == "oracle":
        answers = oracle_answers(manifest, questions)
    elif source == "geometry":
        answers = geometry_answers(config, manifest, questions)
    else:
        answers = read_answers(os.path.join(stage_dir(config, manifest.scene_id, "ask"), "answers.jsonl"))

    records = []
    for q in questions:
        if q.id not in answers:
            logger.warning(f"No answer for question {q.id}; scored as unparseable")
        records.append(score_answer(answers.get(q.id, ""), q))

    out_dir = os.path.join(stage_dir(config, manifest.scene_id, "eval"), source)
    inputs = [questions_path or default_questions_path(manifest)] + _answer_inputs(config, manifest, source)
    key = stage_key("eval", config, inputs, {"source": source})
    if is_fresh(out_dir, key):
        return StageResult("eval", manifest.scene_id, out_dir, stamped_outputs(out_dir), skipped=True), records

    os.makedirs(out_dir, exist_ok=True)
    scores_path = os.path.join(out_dir, "scores.csv")
    _write_if_changed(scores_path, records_csv(records, config.config_hash()))
    outputs = [scores_path]
    if records:
        report = aggregate(records)
        report_path = os.path.join(out_dir, "report.json")
        _write_if_changed(report_path, json.dumps({
            "scene_id": manifest.scene_id,
            "source": source,
            "config_hash": config.config_hash(),
            "task_means": report.task_means,
            "overall": report.overall,
            "counts": report.counts,
            "omitted": report.omitted,
        }, indent=2, sort_keys=True) + "\n")
        table_path = os.path.join(out_dir, "table.md")
        _write_if_changed(table_path, render_table({source: report}))
        outputs += [report_path, table_path]
        summary = f"{len(records)} questions, overall {report.overall:.3f}"
    else:
        summary = "no questions for this scene"
    write_stamp(out_dir, "eval", key, config.config_hash(), outputs)
    return StageResult("eval", manifest.scene_id, out_dir, outputs, summary=summary), records


# --- composition ---------------------------------------------------------

def run_scene(
    config: PipelineConfig,
    manifest_path: str,
    source: str = "answers",
    questions_path: Optional[str] = None,
    client_factory: Callable[[], MLLMClient] = None,
    jobs: int = 4,
) -> Tuple[List[StageResult], List[ScoreRecord]]:
    """extract -> annotate -> prompt -> ask -> eval; ask only when scoring model answers"""
    results = [
        run_extract(config, manifest_path, jobs),
        run_annotate(config, manifest_path, jobs),
        run_prompt(config, manifest_path, jobs),
    ]
    if source == "answers":
        results.append(run_ask(config, manifest_path, questions_path=questions_path,
                               client_factory=client_factory, jobs=jobs))
    evaluated, records = run_eval(config, manifest_path, source, questions_path, jobs)
    results.append(evaluated)
    return results, records


def for_each_scene(manifest_paths: Sequence[str], fn: Callable[[str], object], jobs: int = 1) -> List:
    """Apply fn to every scene, up to `jobs` scenes at once; results in input order"""
    if jobs <= 1 or len(manifest_paths) <= 1:
        return [fn(path) for path in manifest_paths]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, manifest_paths))
