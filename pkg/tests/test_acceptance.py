"""Release gate: one test per shipping criterion, tolerances pinned here.

Each test states a contract the package must keep. Numbers in the
constants block are the agreed floors and budgets; loosening any of
them is a release decision, not a test fix.
"""

import json
import logging
import random
import time

import pytest

from helpers import IMAGE_H, IMAGE_W, inventory_graph, inventory_tokens
from test_assembly import PX, W, H, exhaustive_best, random_instance
from test_deteval import ORACLE_FIXTURES, assert_matches_reference
from test_geometry import random_int_box, raster_containment, raster_iou
from test_prompt import check_golden

from flowrec.assembly import anchor_arrows
from flowrec.cli import EXIT_OK, main
from flowrec.deteval import (
    RELAXED_THRESHOLDS,
    STANDARD_THRESHOLDS,
    DetBox,
    EvalConfig,
    GtBox,
    evaluate,
)
from flowrec.geometry import Box, containment_ratio, iou
from flowrec.ingest import ObjectClass
from flowrec.pipeline import reconstruct
from flowrec.prompt import PromptVariant, render_prompt
from flowrec.qa import (
    JUDGE_PROMPT_HEADER,
    QaRecord,
    Question,
    QuestionType,
    SizeCategory,
    aggregate,
    build_judge_prompt,
    generate_questions,
    render_report,
    size_category,
)
from flowrec.synth import (
    NoiseSpec,
    SynthSpec,
    edge_recovery,
    generate,
    graphs_equivalent,
    perturb,
)

log = logging.getLogger("flowrec.acceptance")

ROUND_TRIP_SEEDS = 200          # seeds 0..199, sizes cycling S/M/L
ROUND_TRIP_BUDGET_S = 10.0      # wall clock for the whole sweep
JITTER_FRACTION = 0.01          # box corner noise, fraction of the diagonal
RECOVERY_FLOOR = 0.99           # pooled gold-edge recovery under jitter
RASTER_PAIRS = 10_000           # random integer box pairs
RASTER_TOL = 1e-3               # closed form vs. cell counting
OPTIMALITY_INSTANCES = 1_000    # random small anchoring instances
OPTIMALITY_FLOOR = 0.99         # greedy must tie exhaustive this often
METRIC_TOL = 1e-9               # evaluate vs. brute-force reference

_SIZES = (SizeCategory.SMALL, SizeCategory.MEDIUM, SizeCategory.LARGE)


def _sweep_cases():
    for seed in range(ROUND_TRIP_SEEDS):
        spec = SynthSpec(seed=seed, size_target=_SIZES[seed % 3])
        yield seed, generate(spec)


def test_01_zero_noise_round_trip():
    started = time.perf_counter()
    failures = []
    for _, case in _sweep_cases():
        rebuilt = reconstruct(case.doc)
        if not graphs_equivalent(case.gold, rebuilt):
            failures.append(case.gold.source_id)
    elapsed = time.perf_counter() - started
    assert failures == [], f"round trip broke on {len(failures)}: {failures[:5]}"
    assert elapsed < ROUND_TRIP_BUDGET_S, f"sweep took {elapsed:.2f}s"


def test_02_edge_recovery_under_jitter():
    hits = total = 0
    for seed, case in _sweep_cases():
        noisy = perturb(case, NoiseSpec(jitter=JITTER_FRACTION), seed=seed)
        rebuilt = reconstruct(noisy)
        n = len(case.gold.edges)
        hits += round(edge_recovery(case.gold, rebuilt) * n)
        total += n
    rate = hits / total
    assert rate >= RECOVERY_FLOOR, f"recovered {hits}/{total} = {rate:.4f} edges"


def test_03_geometry_matches_rasterization():
    rng = random.Random(20260816)
    for _ in range(RASTER_PAIRS):
        a = random_int_box(rng)
        b = random_int_box(rng)
        assert iou(a, b) == pytest.approx(raster_iou(a, b), abs=RASTER_TOL)
        if a.area > 0:
            assert containment_ratio(a, b) == pytest.approx(
                raster_containment(a, b), abs=RASTER_TOL
            )


def test_04_greedy_anchoring_matches_exhaustive():
    rng = random.Random(41)
    mismatches = []
    for trial in range(OPTIMALITY_INSTANCES):
        arrows, starts, ends = random_instance(rng)
        anchored, _ = anchor_arrows(arrows, starts, ends, PX, W, H)
        best_count, _ = exhaustive_best(arrows, starts, ends, PX, W, H)
        if len(anchored) != best_count:
            instance = {
                "trial": trial,
                "arrows": [(o.id, o.box.as_tuple()) for o in arrows],
                "starts": [(o.id, o.box.as_tuple()) for o in starts],
                "ends": [(o.id, o.box.as_tuple()) for o in ends],
                "greedy": len(anchored),
                "exhaustive": best_count,
            }
            log.warning("greedy fell short of exhaustive: %r", instance)
            mismatches.append(instance)
    rate = 1.0 - len(mismatches) / OPTIMALITY_INSTANCES
    assert rate >= OPTIMALITY_FLOOR, (
        f"greedy tied exhaustive on {rate:.4f} of instances; "
        f"mismatches: {mismatches}"
    )


def test_05_detection_metrics_match_brute_force():
    for gts, dets in ORACLE_FIXTURES:
        for thresholds in (RELAXED_THRESHOLDS, STANDARD_THRESHOLDS):
            cfg = EvalConfig(iou_thresholds=thresholds)
            assert_matches_reference(gts, dets, cfg, tol=METRIC_TOL)

    # A tall box matched against a 42%-height crop: IoU lands at 0.42,
    # clearing seven of the nine relaxed thresholds.
    gts = [GtBox("img", ObjectClass.PROCESS, Box(0, 0, 100, 100))]
    dets = [DetBox("img", ObjectClass.PROCESS, Box(0, 0, 100, 42), 0.8)]
    report = evaluate(gts, dets, EvalConfig(iou_thresholds=RELAXED_THRESHOLDS))
    cell = report.per_class[ObjectClass.PROCESS]
    assert cell.ap == pytest.approx(7 / 9, abs=METRIC_TOL)
    assert cell.ar == pytest.approx(7 / 9, abs=METRIC_TOL)

    # Ground truth scored against itself is perfect, exactly.
    gts = [
        GtBox("a", ObjectClass.PROCESS, Box(0, 0, 20, 20)),
        GtBox("a", ObjectClass.ARROW, Box(30, 0, 190, 40)),
        GtBox("b", ObjectClass.ARROW_START, Box(5, 5, 15, 15)),
        GtBox("b", ObjectClass.DECISION, Box(0, 50, 120, 170)),
    ]
    dets = [DetBox(g.image_id, g.cls, g.box, 1.0) for g in gts]
    report = evaluate(gts, dets)
    for cell in report.per_class.values():
        assert cell.ap == 1.0
        assert cell.ar == 1.0
    assert report.by_size["All"] == (1.0, 1.0)


def _records_for_tables():
    """Two 90-question runs whose marginals equal the published counts."""
    totals = {
        QuestionType.NEXT_STEP: (10, 10, 10),
        QuestionType.CONDITIONAL_BRANCH: (16, 17, 17),
        QuestionType.PREVIOUS_STEP: (4, 3, 3),
    }
    correct = {
        PromptVariant.GRAPH_STRUCTURED: {
            QuestionType.NEXT_STEP: (10, 10, 10),
            QuestionType.CONDITIONAL_BRANCH: (14, 16, 15),
            QuestionType.PREVIOUS_STEP: (0, 2, 3),
        },
        PromptVariant.COORDINATE_RICH: {
            QuestionType.NEXT_STEP: (5, 10, 10),
            QuestionType.CONDITIONAL_BRANCH: (15, 11, 15),
            QuestionType.PREVIOUS_STEP: (0, 3, 3),
        },
    }
    sizes = (SizeCategory.LARGE, SizeCategory.MEDIUM, SizeCategory.SMALL)
    records = []
    for variant, wins in correct.items():
        for qtype, per_size in totals.items():
            for size, n, k in zip(sizes, per_size, wins[qtype]):
                for i in range(n):
                    q = Question(qtype, f"q {i}", ("right",), source_id="tables")
                    records.append(
                        QaRecord(
                            question=q,
                            model_answer="right" if i < k else "wrong",
                            variant=variant,
                            size=size,
                            human_style_verdict=i < k,
                        )
                    )
    return records


def test_06_accuracy_tables_reproduce_published_counts():
    report = aggregate(_records_for_tables())
    g = ("graph", "human")
    c = ("coord", "human")
    assert report.overall[g].render() == "88.9 (80/90)"
    assert report.overall[c].render() == "80.0 (72/90)"
    assert report.by_type["next_step"][g].render() == "100.0 (30/30)"
    assert report.by_type["conditional_branch"][g].render() == "90.0 (45/50)"
    assert report.by_type["previous_step"][g].render() == "50.0 (5/10)"
    assert report.by_size["Large"][g].render() == "80.0 (24/30)"
    assert report.by_size["Medium"][g].render() == "93.3 (28/30)"
    assert report.by_size["Small"][g].render() == "93.3 (28/30)"

    text = render_report(report)
    for cell in (
        "88.9 (80/90)",
        "80.0 (72/90)",
        "100.0 (30/30)",
        "90.0 (45/50)",
        "50.0 (5/10)",
        "80.0 (24/30)",
        "93.3 (28/30)",
    ):
        assert cell in text


def test_07_question_and_judge_templates():
    gold = inventory_graph()
    questions, diagnostics = generate_questions(gold, seed=0)
    assert diagnostics == []
    by_type = {q.qtype: q for q in questions}
    assert set(by_type) == set(QuestionType)

    next_steps = {
        f"In this flowchart diagram, what is the next step after '{t}'?"
        for t in ("Start", "Check inventory", "Ship order", "Reorder")
    }
    branches = {
        f"In this flowchart diagram, if 'In stock?' is '{lbl}', what is the next step?"
        for lbl in ("Yes", "No")
    }
    previous = {
        f"In this flowchart diagram, which of the steps before 'End' except '{t}'?"
        for t in ("Ship order", "Reorder")
    }
    assert by_type[QuestionType.NEXT_STEP].text in next_steps
    assert by_type[QuestionType.CONDITIONAL_BRANCH].text in branches
    assert by_type[QuestionType.PREVIOUS_STEP].text in previous

    prompt = build_judge_prompt(by_type[QuestionType.NEXT_STEP], "Ship order", "ship order")
    assert prompt.startswith(JUDGE_PROMPT_HEADER)
    assert "You are a strict judge" in prompt
    assert prompt.count("### Step") == 3


def test_08_commands_are_byte_deterministic(tmp_path, capsys):
    def run(*argv):
        assert main(list(argv)) == EXIT_OK
        return capsys.readouterr().out

    case_a = tmp_path / "case-a"
    case_b = tmp_path / "case-b"
    run("gen", "--seed", "17", "--size", "Medium", "--out-dir", str(case_a))
    run("gen", "--seed", "17", "--size", "Medium", "--out-dir", str(case_b))
    for name in ("detections.json", "ocr.json", "gold.json", "questions.json"):
        assert (case_a / name).read_bytes() == (case_b / name).read_bytes(), name

    parse_args = (
        "parse",
        "--detections", str(case_a / "detections.json"),
        "--ocr", str(case_a / "ocr.json"),
    )
    assert run(*parse_args) == run(*parse_args)

    prompt_args = ("prompt", "--graph", str(case_a / "gold.json"))
    assert run(*prompt_args) == run(*prompt_args)

    records = tmp_path / "records.json"
    records.write_text(
        json.dumps(
            {
                "schema_version": "1",
                "records": [r.to_dict() for r in _records_for_tables()],
            }
        )
    )
    eval_args = ("eval", "--records", str(records))
    assert run(*eval_args) == run(*eval_args)

    # Prompt renderings are frozen as goldens; a diff means the prompt
    # contract moved and the files must be regenerated on purpose.
    gold = inventory_graph()
    check_golden(
        "prompt_graph_inventory.txt",
        render_prompt(PromptVariant.GRAPH_STRUCTURED, gold).text,
    )
    check_golden(
        "prompt_coord_inventory.txt",
        render_prompt(
            PromptVariant.COORDINATE_RICH, gold, inventory_tokens(), IMAGE_W, IMAGE_H
        ).text,
    )


def test_09_size_boundaries():
    assert size_category(12) is SizeCategory.SMALL
    assert size_category(13) is SizeCategory.MEDIUM
    assert size_category(22) is SizeCategory.MEDIUM
    assert size_category(23) is SizeCategory.LARGE
