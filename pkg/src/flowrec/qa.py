"""Question generation, answer scoring, and accuracy aggregation.

Three question families are drawn from a gold graph: the step after a
named step, the branch taken out of a decision, and the steps feeding a
merge point. Answers are scored two ways: a human-style string match
(case- and punctuation-insensitive) and an LLM judge given a fixed
rubric prompt. Accuracy rolls up by question type, by diagram size, and
overall, per prompt variant.
"""

import base64
import enum
import hashlib
import json
import mimetypes
import os
import random
import time
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import requests

from .errors import BackendError, FixtureMissError, JudgeParseError, SchemaError
from .graph import FlowGraph
from .ingest import ObjectClass
from .prompt import PromptVariant

__all__ = [
    "QuestionType",
    "SizeCategory",
    "Question",
    "QaRecord",
    "AccuracyCell",
    "AccuracyReport",
    "TEMPLATES",
    "generate_questions",
    "normalize",
    "match_human_style",
    "verdict_human_style",
    "JUDGE_PROMPT_HEADER",
    "build_judge_prompt",
    "parse_judge_verdict",
    "size_category",
    "aggregate",
    "render_report",
    "BackendConfig",
    "request_digest",
    "vlm_ask",
    "ask_all",
]


class QuestionType(enum.Enum):
    NEXT_STEP = "next_step"
    CONDITIONAL_BRANCH = "conditional_branch"
    PREVIOUS_STEP = "previous_step"

    @classmethod
    def parse(cls, name: str) -> "QuestionType":
        for member in cls:
            if member.value == name:
                return member
        raise SchemaError(f"unknown question type {name!r}")


class SizeCategory(enum.Enum):
    LARGE = "Large"
    MEDIUM = "Medium"
    SMALL = "Small"

    @classmethod
    def parse(cls, name: str) -> "SizeCategory":
        for member in cls:
            if member.value == name:
                return member
        raise SchemaError(f"unknown size category {name!r}")


# Diagram size is bucketed by arrow count.
LARGE_MIN_ARROWS = 23  # strictly more than 22 arrows
MEDIUM_MIN_ARROWS = 13


def size_category(arrow_count: int) -> SizeCategory:
    """Bucket a diagram by its arrow count: <13 Small, 13-22 Medium, >22 Large."""
    if arrow_count < 0:
        raise ValueError(f"arrow count must be non-negative, got {arrow_count}")
    if arrow_count >= LARGE_MIN_ARROWS:
        return SizeCategory.LARGE
    if arrow_count >= MEDIUM_MIN_ARROWS:
        return SizeCategory.MEDIUM
    return SizeCategory.SMALL


TEMPLATES = {
    QuestionType.NEXT_STEP: "In this flowchart diagram, what is the next step after '{xxx}'?",
    QuestionType.CONDITIONAL_BRANCH: (
        "In this flowchart diagram, if '{xxx}' is '{yyy}', what is the next step?"
    ),
    QuestionType.PREVIOUS_STEP: (
        "In this flowchart diagram, which of the steps before '{xxx}' except '{zzz}'?"
    ),
}


@dataclass(frozen=True)
class Question:
    qtype: QuestionType
    text: str
    gold_answers: tuple
    source_id: str = ""

    def to_dict(self) -> dict:
        return {
            "qtype": self.qtype.value,
            "text": self.text,
            "gold_answers": list(self.gold_answers),
            "source_id": self.source_id,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "Question":
        try:
            return cls(
                qtype=QuestionType.parse(rec["qtype"]),
                text=str(rec["text"]),
                gold_answers=tuple(str(a) for a in rec["gold_answers"]),
                source_id=str(rec.get("source_id", "")),
            )
        except KeyError as exc:
            raise SchemaError(f"question record missing key {exc}") from None


def _next_step_candidates(g: FlowGraph):
    by_id = {n.id: n for n in g.nodes}
    out = []
    for node in g.nodes:
        succ = g.successors(node.id)
        if len(succ) != 1:
            continue
        target = by_id[succ[0]]
        if node.text and target.text:
            out.append(
                Question(
                    QuestionType.NEXT_STEP,
                    TEMPLATES[QuestionType.NEXT_STEP].format(xxx=node.text),
                    (target.text,),
                    g.source_id,
                )
            )
    return out


def _conditional_branch_candidates(g: FlowGraph):
    by_id = {n.id: n for n in g.nodes}
    index = {n.id: i for i, n in enumerate(g.nodes)}
    out = []
    for node in g.nodes:
        if node.category is not ObjectClass.DECISION or not node.text:
            continue
        edges = sorted(
            g.out_edges(node.id), key=lambda e: (index[e.target_id], e.label or "", e.arrow_id)
        )
        for e in edges:
            target = by_id[e.target_id]
            if e.label and target.text:
                out.append(
                    Question(
                        QuestionType.CONDITIONAL_BRANCH,
                        TEMPLATES[QuestionType.CONDITIONAL_BRANCH].format(
                            xxx=node.text, yyy=e.label
                        ),
                        (target.text,),
                        g.source_id,
                    )
                )
    return out


def _previous_step_candidates(g: FlowGraph):
    by_id = {n.id: n for n in g.nodes}
    out = []
    for node in g.nodes:
        preds = g.predecessors(node.id)
        if len(preds) < 2 or not node.text:
            continue
        pred_nodes = [by_id[p] for p in preds]
        if any(not p.text for p in pred_nodes):
            continue
        for excluded in pred_nodes:
            gold = tuple(p.text for p in pred_nodes if p.id != excluded.id)
            out.append(
                Question(
                    QuestionType.PREVIOUS_STEP,
                    TEMPLATES[QuestionType.PREVIOUS_STEP].format(
                        xxx=node.text, zzz=excluded.text
                    ),
                    gold,
                    g.source_id,
                )
            )
    return out


_CANDIDATE_BUILDERS = {
    QuestionType.NEXT_STEP: _next_step_candidates,
    QuestionType.CONDITIONAL_BRANCH: _conditional_branch_candidates,
    QuestionType.PREVIOUS_STEP: _previous_step_candidates,
}

DEFAULT_BUDGETS = {
    QuestionType.NEXT_STEP: 1,
    QuestionType.CONDITIONAL_BRANCH: 1,
    QuestionType.PREVIOUS_STEP: 1,
}


def generate_questions(gold: FlowGraph, budgets=None, seed: int = 0):
    """Sample questions from a gold graph, up to a budget per type.

    Candidates are enumerated in canonical node order and sampled with a
    seeded RNG, so the same graph, budgets, and seed always produce the
    same questions. A type with a budget but no eligible structure is
    skipped with a diagnostic instead of failing.

    Returns:
        (questions, diagnostics)
    """
    if budgets is None:
        budgets = DEFAULT_BUDGETS
    rng = random.Random(seed)
    questions = []
    diagnostics = []
    for qtype in QuestionType:
        budget = budgets.get(qtype, 0)
        if budget <= 0:
            continue
        candidates = _CANDIDATE_BUILDERS[qtype](gold)
        if not candidates:
            diagnostics.append(f"skipped {qtype.value}: no eligible structure in the graph")
            continue
        if len(candidates) <= budget:
            chosen = candidates
        else:
            picked = rng.sample(range(len(candidates)), budget)
            chosen = [candidates[i] for i in sorted(picked)]
        questions.extend(chosen)
    return questions, diagnostics


def normalize(answer: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace, trim."""
    kept = []
    for ch in answer.lower():
        if unicodedata.category(ch).startswith("P"):
            continue
        kept.append(ch)
    return " ".join("".join(kept).split())


def _contains_word_seq(haystack, needle) -> bool:
    n = len(needle)
    if n == 0 or n > len(haystack):
        return False
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def match_human_style(model_answer: str, gold_answers) -> bool:
    """True when the answer equals or contains any gold answer.

    Both sides are normalized first; containment is whole-word (the gold
    words must appear as a contiguous run in the answer), so "ship" does
    not match the gold "ship order" while "The next step is 'Ship
    order'." does.
    """
    norm_answer = normalize(model_answer)
    answer_words = norm_answer.split()
    for gold in gold_answers:
        norm_gold = normalize(gold)
        if not norm_gold:
            continue
        if norm_answer == norm_gold or _contains_word_seq(answer_words, norm_gold.split()):
            return True
    return False


def verdict_human_style(question: Question, model_answer: str, strict_previous: bool = True) -> bool:
    """Per-record human-style verdict.

    Merge questions carry every remaining predecessor as gold; with
    ``strict_previous`` (the default) the answer must name all of them.
    The lenient mode accepts any one. Other types have a single gold.
    """
    if question.qtype is QuestionType.PREVIOUS_STEP and strict_previous:
        return all(match_human_style(model_answer, (g,)) for g in question.gold_answers)
    return match_human_style(model_answer, question.gold_answers)


JUDGE_PROMPT_HEADER = """You are a strict judge tasked with the following:

1. A question (Question)
2. A reference answer (Reference Answer)
3. A model output (Model Output)

Please evaluate the model output by following these steps:

### Step 1: Analyze the Answers
- First, compare the reference answer and the model output.
- Determine whether they essentially match in meaning or reasoning, or if the model output is otherwise correct based on its logic and evidence.
- Provide a thorough and logical assessment, noting any gaps or inconsistencies.

### Step 2: Final Judgment
- If the model output is substantially the same as the reference answer or equivalently valid judge it as correct.
- If there are clear mistakes, omissions, or inconsistencies, judge it as incorrect.

### Step 3: Output in the Specified Schema
- Please output your evaluation result strictly in the following JSON format:

{"analysis": "<your analysis>", "correct": true or false}
"""


def build_judge_prompt(question: str, reference: str, model_output: str) -> str:
    """The full judge message: fixed rubric plus the three labeled inputs."""
    return (
        JUDGE_PROMPT_HEADER
        + "\n"
        + f"Question: {question}\n"
        + f"Reference Answer: {reference}\n"
        + f"Model Output: {model_output}\n"
    )


def parse_judge_verdict(raw: str) -> bool:
    """Extract the boolean verdict from a judge reply.

    The reply must be the JSON object itself (surrounding whitespace is
    tolerated, markdown fences are not) with a boolean ``correct`` key.

    Raises:
        JudgeParseError: on anything else; the caller should record the
            item as unjudged rather than guessing.
    """
    try:
        obj = json.loads(raw.strip())
    except json.JSONDecodeError as exc:
        raise JudgeParseError(f"judge reply is not valid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise JudgeParseError("judge reply must be a JSON object")
    if "correct" not in obj:
        raise JudgeParseError("judge reply lacks the 'correct' key")
    verdict = obj["correct"]
    if not isinstance(verdict, bool):
        raise JudgeParseError(f"judge 'correct' must be a boolean, got {verdict!r}")
    return verdict


@dataclass(frozen=True)
class QaRecord:
    """One asked question with its answer and verdicts."""

    question: Question
    model_answer: str
    variant: PromptVariant
    size: SizeCategory
    human_style_verdict: bool | None = None
    judge_verdict: bool | None = None
    latency_s: float | None = None
    cost: float | None = None

    def to_dict(self) -> dict:
        return {
            "question": self.question.to_dict(),
            "model_answer": self.model_answer,
            "variant": self.variant.value,
            "size": self.size.value,
            "human_style_verdict": self.human_style_verdict,
            "judge_verdict": self.judge_verdict,
            "latency_s": self.latency_s,
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "QaRecord":
        try:
            for key in ("human_style_verdict", "judge_verdict"):
                value = rec.get(key)
                if value is not None and not isinstance(value, bool):
                    raise SchemaError(f"record {key} must be a boolean or null")
            return cls(
                question=Question.from_dict(rec["question"]),
                model_answer=str(rec["model_answer"]),
                variant=PromptVariant.parse(rec["variant"]),
                size=SizeCategory.parse(rec["size"]),
                human_style_verdict=rec.get("human_style_verdict"),
                judge_verdict=rec.get("judge_verdict"),
                latency_s=rec.get("latency_s"),
                cost=rec.get("cost"),
            )
        except KeyError as exc:
            raise SchemaError(f"qa record missing key {exc}") from None
        except ValueError as exc:
            raise SchemaError(str(exc)) from None


@dataclass(frozen=True)
class AccuracyCell:
    correct: int
    total: int

    @property
    def percent(self) -> str:
        """One-decimal percentage, e.g. ``88.9`` for 80 of 90."""
        pct = (Decimal(self.correct) * 100 / Decimal(self.total)).quantize(
            Decimal("0.1"), rounding=ROUND_HALF_UP
        )
        return str(pct)

    def render(self) -> str:
        return f"{self.percent} ({self.correct}/{self.total})"


@dataclass(frozen=True)
class AccuracyReport:
    """Accuracy cells keyed by (variant value, verdict source).

    ``overall`` maps column -> cell; ``by_type`` and ``by_size`` map the
    row key first. Only columns with at least one scored record appear.
    """

    overall: dict
    by_type: dict
    by_size: dict
    record_count: int

    def to_dict(self) -> dict:
        def cell(c: AccuracyCell):
            return {"correct": c.correct, "total": c.total, "percent": c.percent}

        def column_map(d):
            return {f"{variant}/{source}": cell(c) for (variant, source), c in d.items()}

        return {
            "record_count": self.record_count,
            "overall": column_map(self.overall),
            "by_type": {k: column_map(v) for k, v in self.by_type.items()},
            "by_size": {k: column_map(v) for k, v in self.by_size.items()},
        }


_SOURCES = ("human", "judge")


def _verdict_of(record: QaRecord, source: str):
    return record.human_style_verdict if source == "human" else record.judge_verdict


def aggregate(records) -> AccuracyReport:
    """Roll records up into overall, per-type, and per-size accuracy.

    A record contributes to a (variant, source) column only when that
    verdict is present; unjudged records simply do not count toward the
    judge column. Percentages recompute exactly from the stored counts.

    Raises:
        ValueError: on an empty record list.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot aggregate zero records")

    columns = []
    for variant in PromptVariant:
        for source in _SOURCES:
            if any(_verdict_of(r, source) is not None and r.variant is variant for r in records):
                columns.append((variant.value, source))

    def tally(subset):
        cells = {}
        for variant_value, source in columns:
            scored = [
                r
                for r in subset
                if r.variant.value == variant_value and _verdict_of(r, source) is not None
            ]
            if scored:
                correct = sum(1 for r in scored if _verdict_of(r, source))
                cells[(variant_value, source)] = AccuracyCell(correct, len(scored))
        return cells

    by_type = {}
    for qtype in QuestionType:
        subset = [r for r in records if r.question.qtype is qtype]
        if subset:
            by_type[qtype.value] = tally(subset)
    by_size = {}
    for size in (SizeCategory.LARGE, SizeCategory.MEDIUM, SizeCategory.SMALL):
        subset = [r for r in records if r.size is size]
        if subset:
            by_size[size.value] = tally(subset)

    return AccuracyReport(
        overall=tally(records),
        by_type=by_type,
        by_size=by_size,
        record_count=len(records),
    )


def render_report(report: AccuracyReport) -> str:
    """Fixed-width text table: one row per scope, one column per variant/source."""
    columns = sorted(
        report.overall.keys(),
        key=lambda c: ([v.value for v in PromptVariant].index(c[0]), _SOURCES.index(c[1])),
    )
    rows = [("overall", report.overall)]
    rows += [(f"type: {k}", v) for k, v in report.by_type.items()]
    rows += [(f"size: {k}", v) for k, v in report.by_size.items()]

    header = ["scope"] + [f"{variant}/{source}" for variant, source in columns]
    table = [header]
    for label, cells in rows:
        table.append(
            [label] + [cells[c].render() if c in cells else "-" for c in columns]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# VLM backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    """How to reach a model: live HTTP endpoint or recorded fixtures.

    Fixture replay is keyed by a content digest of the request, so a
    replayed run can never silently answer a question it has not seen;
    a miss raises. The live mode reads its API key from the environment
    variable named by ``api_key_env`` and records fixtures as it goes.
    """

    mode: str = "fixture"
    fixture_dir: str = ""
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "FLOWREC_API_KEY"
    max_retries: int = 2
    timeout_s: float = 60.0
    concurrency: int = 4
    record: bool = True

    def __post_init__(self):
        if self.mode not in ("fixture", "live"):
            raise ValueError(f"backend mode must be 'fixture' or 'live', got {self.mode!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.concurrency < 1:
            raise ValueError("concurrency must be at least 1")


def request_digest(image_ref: str, message: str) -> str:
    """Content hash identifying one (image, message) request."""
    h = hashlib.sha256()
    h.update(image_ref.encode("utf-8"))
    h.update(b"\x00")
    h.update(message.encode("utf-8"))
    return h.hexdigest()


def _fixture_path(cfg: BackendConfig, digest: str) -> Path:
    if not cfg.fixture_dir:
        raise BackendError("fixture_dir is not configured")
    return Path(cfg.fixture_dir) / f"{digest}.json"


def _image_part(image_ref: str) -> dict:
    if os.path.isfile(image_ref):
        mime = mimetypes.guess_type(image_ref)[0] or "image/png"
        with open(image_ref, "rb") as fh:
            data = base64.b64encode(fh.read()).decode("ascii")
        url = f"data:{mime};base64,{data}"
    else:
        url = image_ref
    return {"type": "image_url", "image_url": {"url": url}}


def _live_call(image_ref: str, message: str, cfg: BackendConfig) -> str:
    if not cfg.endpoint:
        raise BackendError("live backend needs an endpoint")
    api_key = os.environ.get(cfg.api_key_env, "")
    if not api_key:
        raise BackendError(f"environment variable {cfg.api_key_env} is not set")

    content = [{"type": "text", "text": message}]
    if image_ref:
        content.append(_image_part(image_ref))
    body = {"model": cfg.model, "messages": [{"role": "user", "content": content}]}
    headers = {"Authorization": f"Bearer {api_key}"}

    last_error = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            time.sleep(min(2.0**attempt, 10.0))
        try:
            resp = requests.post(cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout_s)
        except requests.RequestException as exc:
            last_error = f"request failed: {exc}"
            continue
        if resp.status_code >= 500:
            last_error = f"server error {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise BackendError(f"backend returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape: {exc}") from None
    raise BackendError(f"live call failed after {cfg.max_retries + 1} attempts: {last_error}")


def vlm_ask(image_ref: str, message: str, cfg: BackendConfig) -> str:
    """Ask the model one question about one image; return its text reply.

    In fixture mode a missing fixture raises :class:`FixtureMissError`;
    an answer is never fabricated. In live mode the reply is stored as a
    fixture (unless recording is disabled) so the run can be replayed.
    """
    digest = request_digest(image_ref, message)
    if cfg.mode == "fixture":
        path = _fixture_path(cfg, digest)
        if not path.is_file():
            raise FixtureMissError(digest, image_ref)
        with open(path, encoding="utf-8") as fh:
            stored = json.load(fh)
        return stored["response"]

    response = _live_call(image_ref, message, cfg)
    if cfg.record and cfg.fixture_dir:
        path = _fixture_path(cfg, digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"image_ref": image_ref, "message": message, "response": response},
                fh,
                ensure_ascii=False,
                indent=2,
            )
            fh.write("\n")
    return response


def ask_all(requests_list, cfg: BackendConfig) -> list:
    """Run many (image_ref, message) requests with bounded concurrency.

    Results come back in request order regardless of completion order.
    """
    items = list(requests_list)
    if not items:
        return []
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        return list(pool.map(lambda pair: vlm_ask(pair[0], pair[1], cfg), items))


def judge_records(records, cfg: BackendConfig):
    """Fill judge verdicts on records via the backend.

    Returns (records, diagnostics); records whose reply cannot be parsed
    stay unjudged and are reported, never guessed.
    """
    prompts = []
    for r in records:
        reference = "; ".join(r.question.gold_answers)
        prompts.append(("", build_judge_prompt(r.question.text, reference, r.model_answer)))
    replies = ask_all(prompts, cfg)
    out = []
    diagnostics = []
    for r, reply in zip(records, replies):
        try:
            out.append(replace(r, judge_verdict=parse_judge_verdict(reply)))
        except JudgeParseError as exc:
            diagnostics.append(f"unjudged [{r.question.text[:40]}...]: {exc}")
            out.append(r)
    return out, diagnostics
