"""Command-line surface wiring the pipeline stages into subcommands.

``flowrec parse`` runs detections + OCR through to a graph JSON,
``prompt`` renders a stored graph for a model, ``gen`` writes a
synthetic case to disk, ``ask`` runs a question batch against a backend
(recorded fixtures by default), ``eval`` rolls answer records up into
the accuracy tables, and ``deteval`` scores detector output.

Exit codes separate failure families so scripts can branch on them:
0 success, 2 usage, 3 schema or data, 4 I/O, 5 backend, 6 fixture miss.
"""

import argparse
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .assembly import AssemblyConfig
from .deteval import (
    RELAXED_THRESHOLDS,
    STANDARD_THRESHOLDS,
    EvalConfig,
    coco_categories,
    evaluate,
    parse_det_boxes,
    parse_gt_boxes,
    payload_image_ids,
)
from .deteval import render_report as render_detection_report
from .errors import BackendError, FixtureMissError, FlowrecError, SchemaError
from .graph import export_json, import_json
from .ingest import load_document, serialize_detections, serialize_ocr
from .pipeline import reconstruct
from .prompt import PromptVariant, compose_vlm_input, render_prompt
from .qa import (
    BackendConfig,
    QaRecord,
    Question,
    QuestionType,
    SizeCategory,
    aggregate,
    ask_all,
    judge_records,
    size_category,
    verdict_human_style,
)
from .qa import render_report as render_accuracy_report
from .synth import NoiseSpec, SynthSpec, generate

__all__ = ["PipelineConfig", "parse_config", "load_config", "main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SCHEMA = 3
EXIT_IO = 4
EXIT_BACKEND = 5
EXIT_FIXTURE = 6

CONFIG_VERSION = "1"


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run can tune, from one JSON file.

    Sub-sections mirror the library config types; toggles cover the
    optional passes. Unknown keys anywhere are rejected rather than
    ignored, so a typo cannot silently skew a benchmark.
    """

    assembly: AssemblyConfig = field(default_factory=AssemblyConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    prompt_variant: PromptVariant = PromptVariant.GRAPH_STRUCTURED
    question_budgets: dict | None = None
    seed: int = 0
    post_correct: bool = False
    cluster_fragments: bool = False
    cluster_gap: float = 8.0


def _reject_unknown(rec: dict, allowed, where: str):
    unknown = sorted(set(rec) - set(allowed))
    if unknown:
        raise SchemaError(f"{where}: unknown keys: {', '.join(unknown)}")


def _section(cls, rec, where: str):
    if not isinstance(rec, dict):
        raise SchemaError(f"{where}: expected an object")
    _reject_unknown(rec, {f.name for f in fields(cls)}, where)
    try:
        return cls(**rec)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}") from None


def parse_config(payload) -> PipelineConfig:
    """Parse a config payload strictly; see :class:`PipelineConfig`."""
    if not isinstance(payload, dict):
        raise SchemaError("config: expected a JSON object")
    allowed = {
        "config_version",
        "assembly",
        "backend",
        "prompt_variant",
        "question_budgets",
        "seed",
        "post_correct",
        "cluster_fragments",
        "cluster_gap",
    }
    _reject_unknown(payload, allowed, "config")
    if payload.get("config_version") != CONFIG_VERSION:
        raise SchemaError(f"config: config_version must be {CONFIG_VERSION!r}")

    budgets = None
    if payload.get("question_budgets") is not None:
        raw = payload["question_budgets"]
        if not isinstance(raw, dict):
            raise SchemaError("config.question_budgets: expected an object")
        budgets = {}
        for key, value in raw.items():
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise SchemaError(f"config.question_budgets[{key!r}]: expected a count >= 0")
            budgets[QuestionType.parse(str(key))] = value

    try:
        variant = PromptVariant.parse(str(payload.get("prompt_variant", "graph")))
    except ValueError as exc:
        raise SchemaError(f"config: {exc}") from None

    seed = payload.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise SchemaError("config.seed: expected an integer")
    for name in ("post_correct", "cluster_fragments"):
        if not isinstance(payload.get(name, False), bool):
            raise SchemaError(f"config.{name}: expected a boolean")
    gap = payload.get("cluster_gap", 8.0)
    if not isinstance(gap, (int, float)) or isinstance(gap, bool) or gap < 0:
        raise SchemaError("config.cluster_gap: expected a length >= 0")

    return PipelineConfig(
        assembly=_section(AssemblyConfig, payload.get("assembly", {}), "config.assembly"),
        backend=_section(BackendConfig, payload.get("backend", {}), "config.backend"),
        prompt_variant=variant,
        question_budgets=budgets,
        seed=seed,
        post_correct=bool(payload.get("post_correct", False)),
        cluster_fragments=bool(payload.get("cluster_fragments", False)),
        cluster_gap=float(gap),
    )


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return parse_config(_load_json(path))


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(
                f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}: {exc.msg}"
            ) from None


def _write_json(path, payload):
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def _emit(text: str, out_path):
    if not text.endswith("\n"):
        text += "\n"
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    cfg = load_config(args.config)
    doc, warnings = load_document(
        _load_json(args.detections), _load_json(args.ocr), args.box_format
    )
    for line in warnings:
        print(f"warning: {line}", file=sys.stderr)
    graph = reconstruct(
        doc,
        cfg.assembly,
        post_correct=args.post_correct or cfg.post_correct,
        cluster_fragments=args.cluster_fragments or cfg.cluster_fragments,
        cluster_gap=cfg.cluster_gap,
    )
    _emit(export_json(graph), args.out)
    return EXIT_OK


def cmd_prompt(args) -> int:
    graph = import_json(Path(args.graph).read_text(encoding="utf-8"))
    rendered = render_prompt(PromptVariant.parse(args.variant), graph)
    _emit(rendered.text, args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    size = SizeCategory.parse(args.size) if args.size else None
    spec = SynthSpec(
        seed=args.seed,
        node_count=(args.nodes[0], args.nodes[1]),
        decision_fraction=args.decision_fraction,
        size_target=size,
        allow_back_edges=args.allow_back_edges,
        noise=NoiseSpec(
            jitter=args.jitter,
            endpoint_dropout=args.dropout,
            token_split_prob=args.token_split,
        ),
    )
    case = generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "detections.json", serialize_detections(case.doc))
    _write_json(out / "ocr.json", serialize_ocr(case.doc))
    _emit(export_json(case.gold), out / "gold.json")
    _write_json(
        out / "questions.json",
        {"schema_version": "1", "questions": [q.to_dict() for q in case.questions]},
    )
    print(
        f"generated {len(case.gold.nodes)} nodes, {len(case.gold.edges)} edges, "
        f"{len(case.questions)} questions -> {out}"
    )
    return EXIT_OK


def _load_questions(path):
    payload = _load_json(path)
    raw = payload.get("questions") if isinstance(payload, dict) else payload
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: expected a list under 'questions'")
    return [Question.from_dict(rec) for rec in raw]


def cmd_ask(args) -> int:
    cfg = load_config(args.config)
    backend = cfg.backend
    if args.fixture_dir:
        backend = replace(backend, fixture_dir=args.fixture_dir)
    if args.mode:
        backend = replace(backend, mode=args.mode)

    questions = _load_questions(args.questions)
    graph = import_json(Path(args.graph).read_text(encoding="utf-8"))
    variant = PromptVariant.parse(args.variant) if args.variant else cfg.prompt_variant
    rendered = render_prompt(variant, graph)

    requests = [(args.image, compose_vlm_input(q.text, rendered)) for q in questions]
    answers = ask_all(requests, backend)

    size = size_category(len(graph.edges))
    records = [
        QaRecord(
            question=q,
            model_answer=answer,
            variant=variant,
            size=size,
            human_style_verdict=verdict_human_style(q, answer),
        )
        for q, answer in zip(questions, answers)
    ]
    if args.judge:
        records, diagnostics = judge_records(records, backend)
        for line in diagnostics:
            print(f"warning: {line}", file=sys.stderr)
    _write_json(
        args.out, {"schema_version": "1", "records": [r.to_dict() for r in records]}
    )
    print(f"asked {len(records)} questions -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    payload = _load_json(args.records)
    raw = payload.get("records") if isinstance(payload, dict) else payload
    if not isinstance(raw, list):
        raise SchemaError(f"{args.records}: expected a list under 'records'")
    report = aggregate([QaRecord.from_dict(rec) for rec in raw])
    _emit(render_accuracy_report(report), None)
    return EXIT_OK


def cmd_deteval(args) -> int:
    gt_payload = _load_json(args.gt)
    det_payload = _load_json(args.det)
    gts = parse_gt_boxes(gt_payload)
    categories = None
    if isinstance(gt_payload, dict) and "annotations" in gt_payload:
        categories = coco_categories(gt_payload)
    dets = parse_det_boxes(det_payload, categories=categories)
    thresholds = RELAXED_THRESHOLDS if args.regime == "relaxed" else STANDARD_THRESHOLDS
    report = evaluate(
        gts,
        dets,
        EvalConfig(iou_thresholds=thresholds, max_dets=args.max_dets),
        image_ids=payload_image_ids(gt_payload),
    )
    _emit(render_detection_report(report), None)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowrec",
        description="Flowchart detections to graphs, prompts, and scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="detections + OCR -> graph JSON")
    p.add_argument("--detections", required=True)
    p.add_argument("--ocr", required=True)
    p.add_argument("--config")
    p.add_argument("--box-format", choices=("xyxy", "xywh"), default="xyxy")
    p.add_argument("--post-correct", action="store_true")
    p.add_argument("--cluster-fragments", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("prompt", help="graph JSON -> prompt text")
    p.add_argument("--graph", required=True)
    p.add_argument("--variant", choices=[v.value for v in PromptVariant], default="graph")
    p.add_argument("--out")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("gen", help="write one synthetic case to a directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", choices=[s.value for s in SizeCategory])
    p.add_argument("--nodes", type=int, nargs=2, default=(5, 24), metavar=("LO", "HI"))
    p.add_argument("--decision-fraction", type=float, default=0.3)
    p.add_argument("--allow-back-edges", action="store_true")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--token-split", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ask", help="run a question batch against a backend")
    p.add_argument("--questions", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--variant", choices=[v.value for v in PromptVariant])
    p.add_argument("--config")
    p.add_argument("--fixture-dir")
    p.add_argument("--mode", choices=("fixture", "live"))
    p.add_argument("--judge", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", help="answer records -> accuracy tables")
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("deteval", help="score detections against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--det", required=True)
    p.add_argument("--regime", choices=("standard", "relaxed"), default="standard")
    p.add_argument("--max-dets", type=int, default=100)
    p.set_defaults(func=cmd_deteval)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except FixtureMissError as exc:
        print(f"error: fixture miss: {exc}", file=sys.stderr)
        return EXIT_FIXTURE
    except BackendError as exc:
        print(f"error: backend: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (FlowrecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
