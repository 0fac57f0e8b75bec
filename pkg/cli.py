"""
GR3D Command Line
    python cli.py synth --seed 0
    python cli.py extract work/synth_0000/synth/manifest.json
    python cli.py eval work/synth_0000/synth/manifest.json --oracle-answers
Exit codes: 0 ok, 2 config error, 3 data error, 4 network error, 5 internal.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from config import PROMPT_MODES, PipelineConfig, load_config, validate
from errors import GR3DError
from eval_harness import aggregate, render_table, write_records
from llm_service import MLLMClient
from pipeline import (
    StageResult,
    for_each_scene,
    load_bundle,
    run_annotate,
    run_ask,
    run_eval,
    run_extract,
    run_prompt,
    run_scene,
    run_synth,
    synth_manifest,
)
from scene_ingest import load_manifest
from synth_oracle import SceneParams
from textref_prompt import attach_question

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config YAML (defaults when omitted)")
    common.add_argument("--work-dir", help="override paths.work_dir")
    common.add_argument("--jobs", type=int, default=1, help="scenes processed in parallel")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="gr3d", description="Geometrically referenced 3D scene prompts")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="generate and export synthetic oracle scenes")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--count", type=int, default=1, help="scenes with consecutive seeds")
    synth.add_argument("--boxes", type=int, default=3)
    synth.add_argument("--cylinders", type=int, default=1)
    synth.add_argument("--cameras", type=int, default=4)
    synth.add_argument("--room", type=float, nargs=3, metavar=("WIDTH", "DEPTH", "HEIGHT"), default=(4.0, 5.0, 2.6))
    synth.add_argument("--l-shape", action="store_true", help="L-shaped instead of rectangular room")
    synth.add_argument("--scale", type=float, default=1.0, help="reconstruction scale divisor")
    synth.add_argument("--noise", type=float, default=0.0, help="depth noise sigma in meters")

    for name, text in (("extract", "manifest -> objects, room and alignment"),
                       ("annotate", "draw object ids onto the frames"),
                       ("prompt", "assemble the scene prompt bundle")):
        stage = sub.add_parser(name, parents=[common], help=text)
        stage.add_argument("manifests", nargs="+")
        if name == "extract":
            stage.add_argument("--export-cloud", action="store_true", help="also write the aligned cloud as PLY")
        if name == "prompt":
            stage.add_argument("--mode", choices=PROMPT_MODES, help="override prompt.mode")

    ask = sub.add_parser("ask", parents=[common], help="query the model with the bundle and questions")
    ask.add_argument("manifests", nargs="+")
    ask.add_argument("--questions", help="question set (default: questions.jsonl next to the manifest)")
    ask.add_argument("--question", help="ask one free-form question and print the answer")

    evaluate = sub.add_parser("eval", parents=[common], help="score answers against the question set")
    evaluate.add_argument("manifests", nargs="+")
    evaluate.add_argument("--questions", help="question set (default: questions.jsonl next to the manifest)")
    source = evaluate.add_mutually_exclusive_group()
    source.add_argument("--oracle-answers", action="store_true", help="answer from ground-truth geometry")
    source.add_argument("--geometry-answers", action="store_true", help="answer from extracted geometry")
    evaluate.add_argument("--method", help="row name in the results table")

    run = sub.add_parser("run", parents=[common], help="extract, annotate, prompt, ask and eval")
    run.add_argument("manifests", nargs="+")
    run.add_argument("--questions")
    run.add_argument("--mode", choices=PROMPT_MODES, help="override prompt.mode")
    run.add_argument("--geometry-answers", action="store_true", help="score extracted geometry instead of asking")
    run.add_argument("--method")
    return parser


def resolve_config(args) -> PipelineConfig:
    config = load_config(args.config)
    if args.work_dir:
        # a cache kept under the old work dir moves with it; one configured elsewhere stays put
        inner = os.path.relpath(config.paths.cache_dir, config.paths.work_dir)
        if inner != os.pardir and not inner.startswith(os.pardir + os.sep):
            config.paths.cache_dir = os.path.normpath(os.path.join(args.work_dir, inner))
        config.paths.work_dir = args.work_dir
    if getattr(args, "mode", None):
        config.prompt.mode = args.mode
    return validate(config)


def report(result: StageResult):
    if result.skipped:
        print(f"⏭️  {result.stage} {result.scene_id}: up to date")
    else:
        print(f"✅ {result.stage} {result.scene_id}: {result.summary}")


def _print_scores(config: PipelineConfig, records, source: str, method: Optional[str]):
    if not records:
        print("⚠️  No questions matched the given scenes")
        return
    table = render_table({method or source: aggregate(records)})
    os.makedirs(config.paths.work_dir, exist_ok=True)
    write_records(os.path.join(config.paths.work_dir, f"scores_{source}.csv"), records, config.config_hash())
    with open(os.path.join(config.paths.work_dir, f"table_{source}.md"), "w", encoding="utf-8") as f:
        f.write(table)
    print("\n" + table)


def cmd_synth(args, config: PipelineConfig):
    width, depth, height = args.room
    params = SceneParams(n_boxes=args.boxes, n_cylinders=args.cylinders, room_width=width, room_depth=depth,
                         room_height=height, l_shape=args.l_shape, n_cameras=args.cameras)
    seeds = list(range(args.seed, args.seed + args.count))
    results = for_each_scene(seeds, lambda seed: run_synth(config, seed, params, args.scale, args.noise),
                             args.jobs)
    for result in results:
        report(result)
        print(f"   📄 {synth_manifest(result)}")


def cmd_stage(args, config: PipelineConfig):
    if args.command == "extract":
        fn = lambda path: run_extract(config, path, export_cloud=args.export_cloud)  # noqa: E731
    elif args.command == "annotate":
        fn = lambda path: run_annotate(config, path)  # noqa: E731
    else:
        fn = lambda path: run_prompt(config, path)  # noqa: E731
    for result in for_each_scene(args.manifests, fn, args.jobs):
        report(result)


def cmd_ask(args, config: PipelineConfig):
    if args.question:
        client = MLLMClient(config.query)
        for path in args.manifests:
            bundle = load_bundle(config, load_manifest(path).scene_id)
            result = client.query(attach_question(bundle.prompt, args.question), bundle.image_paths)
            print(f"💬 {bundle.scene_id}: {result.answer}")
        return
    for result in for_each_scene(args.manifests, lambda path: run_ask(config, path, questions_path=args.questions),
                                 args.jobs):
        report(result)


def cmd_eval(args, config: PipelineConfig):
    source = "oracle" if args.oracle_answers else "geometry" if args.geometry_answers else "answers"
    scored = for_each_scene(args.manifests, lambda path: run_eval(config, path, source, args.questions), args.jobs)
    records = []
    for result, scene_records in scored:
        report(result)
        records.extend(scene_records)
    _print_scores(config, records, source, args.method)


def cmd_run(args, config: PipelineConfig):
    source = "geometry" if args.geometry_answers else "answers"
    scored = for_each_scene(args.manifests, lambda path: run_scene(config, path, source, args.questions),
                            args.jobs)
    records = []
    for results, scene_records in scored:
        for result in results:
            report(result)
        records.extend(scene_records)
    _print_scores(config, records, source, args.method)


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_stage,
    "annotate": cmd_stage,
    "prompt": cmd_stage,
    "ask": cmd_ask,
    "eval": cmd_eval,
    "run": cmd_run,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        COMMANDS[args.command](args, config)
    except GR3DError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("\n⚠️  Cancelled by user", file=sys.stderr)
        return 5
    except Exception as e:
        logger.exception("Internal error")
        print(f"❌ Internal error: {e}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
