"""Procedural flowcharts with known structure.

:func:`generate` lays out a layered chart (top to bottom, no edge skips
a layer unless back-edges are enabled), then emits three mutually
consistent views of it: a gold :class:`~flowrec.graph.FlowGraph`, a
:class:`~flowrec.ingest.Document` of perfect detections plus OCR, and a
batch of questions. :func:`perturb` degrades the document the way a
real detector would (corner jitter, lost keypoints, split tokens) while
the gold graph stays fixed, so recovery quality is measurable.

Layout constants are chosen so that every geometric predicate the
reconstruction relies on holds with a wide margin: arrow spans keep a
healthy extent on both axes, keypoints sit exactly on node boundaries,
and edge labels are placed only where no other arrow box comes close.
That headroom is what lets reconstruction survive box jitter around one
percent of the image diagonal.
"""

import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace

from .errors import FlowrecError, GenerationError
from .geometry import Box, Point, normalized_center, point_box_distance, span_box
from .graph import Edge, FlowGraph, Node
from .ingest import ARROW_CLASSES, DetectedObject, Document, ObjectClass, OcrToken
from .qa import Question, SizeCategory, generate_questions, normalize

__all__ = [
    "NoiseSpec",
    "SynthSpec",
    "SynthCase",
    "generate",
    "perturb",
    "graphs_equivalent",
    "edge_recovery",
]

# Geometry of the page, in pixels. Lanes on odd layers are shifted by
# half a lane so no two vertically adjacent nodes ever share an x
# position; combined with the per-edge attach offsets this keeps every
# arrow box at least MIN_SPAN_X wide.
#
# The absolute numbers only matter relative to the image diagonal: box
# jitter is quoted as a fraction of it. Everything here is sized so
# that at 1% jitter a token stays more than half inside its node for
# any draw (margins beat the worst case) and an arrow's span box keeps
# IoU > 0.5 with its keypoints except in roughly one draw in ten
# thousand. _MAX_DIAGONAL rejects the rare deep layout that would
# erode those ratios.
NODE_W = 320.0
NODE_H = 130.0
LANE_GAP = 480.0
BRICK_SHIFT = 240.0
LAYER_GAP = 470.0
MARGIN = 120.0
KEYPOINT_SIDE = 16.0
TOKEN_H = 26.0
CHAR_W = 9.0
MIN_SPAN_X = 360.0
ATTACH_INSET = 64.0
ATTACH_WIDEN = 45.0
LABEL_H = 18.0
LABEL_ARROW_CLEARANCE = 8.0
LABEL_NODE_CLEARANCE = 20.0

_MAX_DIAGONAL = 4800.0
_MAX_ATTEMPTS = 25

_SIZE_NODE_RANGE = {
    SizeCategory.SMALL: (5, 10),
    SizeCategory.MEDIUM: (12, 17),
    SizeCategory.LARGE: (19, 21),
}
_SIZE_EDGE_RANGE = {
    SizeCategory.SMALL: (1, 12),
    SizeCategory.MEDIUM: (13, 22),
    SizeCategory.LARGE: (23, 10**9),
}


@dataclass(frozen=True)
class NoiseSpec:
    """Detector-noise knobs, all off by default.

    ``jitter`` is a fraction of the image diagonal added independently
    to every detection box corner coordinate; OCR boxes are left alone
    (they model a separate subsystem). ``endpoint_dropout`` removes
    each ArrowStart/ArrowEnd with that probability and
    ``token_split_prob`` cuts a token into two fragments.
    """

    jitter: float = 0.0
    endpoint_dropout: float = 0.0
    token_split_prob: float = 0.0

    def __post_init__(self):
        if self.jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")
        for name in ("endpoint_dropout", "token_split_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")

    @property
    def silent(self) -> bool:
        return self.jitter == 0.0 and self.endpoint_dropout == 0.0 and self.token_split_prob == 0.0


@dataclass(frozen=True)
class SynthSpec:
    """What to generate.

    ``node_count`` bounds the number of shapes (inclusive). When
    ``size_target`` is set, the draw is restricted to the overlap of
    ``node_count`` with a per-size comfortable range and the decision
    count is adjusted so the arrow total lands in that size bucket;
    an empty overlap raises :class:`GenerationError`.
    ``allow_back_edges`` adds one upward edge when the layout permits,
    modelling a loop-back arrow.
    """

    seed: int = 0
    node_count: tuple[int, int] = (5, 24)
    decision_fraction: float = 0.3
    size_target: SizeCategory | None = None
    allow_back_edges: bool = False
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        lo, hi = self.node_count
        if lo < 1 or hi < lo:
            raise ValueError(f"node_count must satisfy 1 <= lo <= hi, got {self.node_count}")
        if not 0.0 <= self.decision_fraction <= 1.0:
            raise ValueError(f"decision_fraction must be in [0, 1], got {self.decision_fraction}")


@dataclass(frozen=True)
class SynthCase:
    """One generated chart: the truth, its rendering, and its quiz."""

    gold: FlowGraph
    doc: Document
    questions: tuple[Question, ...]


class _RetryLayout(Exception):
    """Internal: this random layout ran into a corner, draw another."""


# --------------------------------------------------------------------------
# structure


@dataclass
class _ProtoNode:
    id: str
    layer: int
    lane: int
    category: ObjectClass
    text: str
    box: Box = None  # type: ignore[assignment]


def _draw_node_and_decision_counts(spec: SynthSpec, rng: random.Random) -> tuple[int, int]:
    lo, hi = spec.node_count
    extra = 1 if spec.allow_back_edges else 0
    if spec.size_target is not None:
        plo, phi = _SIZE_NODE_RANGE[spec.size_target]
        lo, hi = max(lo, plo), min(hi, phi)
        if lo > hi:
            raise GenerationError(
                f"size_target {spec.size_target.value} unreachable with node_count {spec.node_count}"
            )
    n = rng.randint(lo, hi)
    middle = max(0, n - 2)
    k = round(spec.decision_fraction * middle)
    k = min(k, middle // 2)
    if spec.size_target is not None:
        elo, ehi = _SIZE_EDGE_RANGE[spec.size_target]
        k_min = max(0, elo - (n - 1) - extra)
        k_max = min(middle // 2 if middle >= 2 else 0, ehi - (n - 1) - extra)
        if k_min > k_max:
            raise GenerationError(
                f"size_target {spec.size_target.value} needs an arrow count outside what "
                f"{n} nodes can produce"
            )
        k = min(max(k, k_min), k_max)
    return n, k


def _draw_widths(rng: random.Random, n: int) -> list[int]:
    """Layer widths: terminator, single first step, middles, terminator.

    Width may grow by at most one per layer (a decision's second branch
    pays for it), and never out of the first layer: the Start terminator
    has a single outgoing edge. The draw is biased toward the cap so
    layouts come out wide and shallow; a squat page keeps the diagonal,
    and with it the noise the evaluation applies, small relative to the
    boxes.
    """
    if n == 1:
        return [1]
    if n == 2:
        return [1, 1]
    widths = [1, 1]
    remaining = n - 3
    while remaining:
        prev = widths[-1]
        cap = min(5, remaining, prev + 1)
        weights = (1, 3, 7, 9, 9)[:cap]
        widths.append(rng.choices(range(1, cap + 1), weights=weights)[0])
        remaining -= widths[-1]
    widths.append(1)
    return widths


def _assign_decisions(rng: random.Random, widths: list[int], decisions: int) -> dict[int, int]:
    """Pick a lane per decision layer; growth layers must host one."""
    required, optional = [], []
    for i in range(1, len(widths) - 1):
        if widths[i + 1] > widths[i]:
            required.append(i)
        elif widths[i + 1] >= 2:
            # Two branches need two distinct targets.
            optional.append(i)
    if len(required) > decisions or decisions > len(required) + len(optional):
        raise _RetryLayout
    chosen = required + rng.sample(optional, decisions - len(required))
    return {i: rng.choice(range(widths[i])) for i in chosen}


def _layer_edges(rng: random.Random, sources: list[_ProtoNode], targets: list[_ProtoNode], parity: int):
    """Edges for one layer pair: one decision's branches, covering mates.

    The decision (at most one per layer) prefers one target on each side
    of itself so its branch boxes stay disjoint; when every target sits
    on one side it takes the two nearest and lets the label pass sort
    the nested boxes out by area. The other sources cover the remaining
    targets, preferring short hops.
    """
    decision = next((s for s in sources if s.category is ObjectClass.DECISION), None)
    pairs: list[tuple[_ProtoNode, _ProtoNode]] = []
    claimed: set[int] = set()

    def units_src(s: _ProtoNode) -> float:
        return s.lane + 0.5 * parity

    def units_tgt(t: _ProtoNode) -> float:
        return t.lane + 0.5 * (1 - parity)

    if decision is not None:
        if len(targets) < 2:
            raise _RetryLayout
        left_hi = decision.lane if parity == 1 else decision.lane - 1
        right_lo = decision.lane + 1 if parity == 1 else decision.lane
        left_pool = [t for t in targets if t.lane <= left_hi]
        right_pool = [t for t in targets if t.lane >= right_lo]
        if left_pool and right_pool:
            t_left = left_pool[-1] if len(left_pool) == 1 or rng.random() < 0.7 else rng.choice(left_pool)
            t_right = right_pool[0] if len(right_pool) == 1 or rng.random() < 0.7 else rng.choice(right_pool)
        else:
            nearest = sorted(targets, key=lambda t: (abs(units_tgt(t) - units_src(decision)), t.lane))
            t_left, t_right = sorted(nearest[:2], key=lambda t: t.lane)
        pairs += [(decision, t_left), (decision, t_right)]
        claimed = {t_left.lane, t_right.lane}

    mates = [s for s in sources if s is not decision]
    uncovered = [t for t in targets if t.lane not in claimed]
    if len(mates) < len(uncovered):
        raise _RetryLayout

    # Order-preserving pairing of mates with the targets the branches
    # left over, at the offset that keeps the hops shortest. Pairing a
    # left mate with a far-right target would run its arrow box clear
    # across a branch box and leave the branch's label nowhere to sit.
    pins: dict[int, _ProtoNode] = {}
    if uncovered:
        span = len(mates) - len(uncovered)
        best = min(
            range(span + 1),
            key=lambda o: sum(
                abs(units_src(mates[k + o]) - units_tgt(t)) for k, t in enumerate(uncovered)
            ),
        )
        for k, t in enumerate(uncovered):
            pins[k + best] = t

    for idx, mate in enumerate(mates):
        if idx in pins:
            v = pins[idx]
        else:
            v = min(targets, key=lambda t: (abs(units_tgt(t) - units_src(mate)), t.lane))
            if decision is None and rng.random() < 0.35:
                neighbours = [t for t in targets if abs(t.lane - v.lane) == 1]
                if neighbours:
                    v = rng.choice(neighbours)
        pairs.append((mate, v))
    return pairs


_NODE_FLAVOURS = (
    (0.60, ObjectClass.PROCESS, "Process step {}"),
    (0.85, ObjectClass.DATA, "Read data {}"),
    (1.01, ObjectClass.CONNECTION, "Connector {}"),
)


def _build_structure(spec: SynthSpec, rng: random.Random):
    n, decisions = _draw_node_and_decision_counts(spec, rng)
    widths = _draw_widths(rng, n)
    decision_lanes = _assign_decisions(rng, widths, decisions)

    layers: list[list[_ProtoNode]] = []
    counters: Counter = Counter()
    idx = 0
    for i, width in enumerate(widths):
        row = []
        for lane in range(width):
            idx += 1
            if i == 0 or i == len(widths) - 1:
                cat, text = ObjectClass.TERMINATOR, ("Start" if i == 0 else "End")
            elif decision_lanes.get(i) == lane:
                counters["dec"] += 1
                cat, text = ObjectClass.DECISION, f"Check condition {counters['dec']}?"
            else:
                roll = rng.random()
                for ceiling, flavour_cat, template in _NODE_FLAVOURS:
                    if roll < ceiling:
                        counters[flavour_cat.value] += 1
                        cat, text = flavour_cat, template.format(counters[flavour_cat.value])
                        break
            row.append(_ProtoNode(f"n{idx}", i, lane, cat, text))
        layers.append(row)

    pairs: list[tuple[_ProtoNode, _ProtoNode, str | None]] = []
    for i in range(len(layers) - 1):
        raw = _layer_edges(rng, layers[i], layers[i + 1], i % 2)
        by_source: dict[str, list[tuple[_ProtoNode, _ProtoNode]]] = {}
        for u, v in raw:
            by_source.setdefault(u.id, []).append((u, v))
        for node in layers[i]:
            branch = by_source[node.id]
            if node.category is ObjectClass.DECISION:
                branch.sort(key=lambda p: p[1].lane)
                labels = ["Yes", "No"] if rng.random() < 0.5 else ["No", "Yes"]
                for (u, v), lab in zip(branch, labels):
                    pairs.append((u, v, lab))
            else:
                for u, v in branch:
                    pairs.append((u, v, None))

    if spec.allow_back_edges and len(layers) >= 4:
        origins = [
            nd for row in layers[2:-1] for nd in row if nd.category is not ObjectClass.DECISION
        ]
        if origins:
            u = rng.choice(origins)
            v = rng.choice([nd for row in layers[1 : u.layer] for nd in row])
            pairs.append((u, v, None))

    return layers, pairs


# --------------------------------------------------------------------------
# geometry


def _node_box(layer: int, lane: int) -> Box:
    cx = MARGIN + NODE_W / 2 + lane * LANE_GAP + (BRICK_SHIFT if layer % 2 else 0.0)
    cy = MARGIN + NODE_H / 2 + layer * LAYER_GAP
    return Box(cx - NODE_W / 2, cy - NODE_H / 2, cx + NODE_W / 2, cy + NODE_H / 2)


def _attach_x(node: _ProtoNode, fan: int, target_x: float, slot: int) -> float:
    """x position on a node's top or bottom edge for the slot-th arrow.

    Slots fan out left to right in target order so sibling arrows never
    cross. The bias away from the travel direction stretches each span
    a little; together with the minimum span width it keeps the box an
    arrow's own keypoints span ahead of anything a neighbour's keypoints
    could form, so the greedy matcher is never tempted to swap them.
    """
    base = node.box.center.x + (slot - (fan - 1) / 2.0) * 50.0
    direction = 1.0 if target_x > node.box.center.x else -1.0
    return _clamp_attach(base - direction * ATTACH_WIDEN, node.box)


def _clamp_attach(x: float, node: Box) -> float:
    return min(max(x, node.x_min + ATTACH_INSET), node.x_max - ATTACH_INSET)


def _widen_apart(sx: float, ex: float, s_node: Box, e_node: Box) -> tuple[float, float]:
    """Push two attach x positions apart until the arrow spans MIN_SPAN_X."""
    if abs(sx - ex) >= MIN_SPAN_X:
        return sx, ex
    direction = 1.0 if ex >= sx else -1.0
    sx2 = _clamp_attach(sx - direction * (MIN_SPAN_X - abs(sx - ex)) / 2, s_node)
    ex2 = _clamp_attach(sx2 + direction * MIN_SPAN_X, e_node)
    if abs(sx2 - ex2) + 1e-6 < MIN_SPAN_X:
        sx2 = _clamp_attach(ex2 - direction * MIN_SPAN_X, s_node)
    if abs(sx2 - ex2) + 1e-6 < MIN_SPAN_X:
        raise _RetryLayout
    return sx2, ex2


def _keypoint_box(center: Point) -> Box:
    h = KEYPOINT_SIDE / 2
    return Box(center.x - h, center.y - h, center.x + h, center.y + h)


def _place_label(
    text: str,
    start: Point,
    end: Point,
    own: Box,
    other_arrows: list[Box],
    node_boxes: list[Box],
    taken: list[Box],
    inset: float,
) -> Box:
    """Find a spot along the arrow that resolves to its own box.

    Resolution mirrors the label pass downstream: nearest box wins, and
    a point inside several boxes goes to the smallest. Sitting inside a
    strictly larger box is therefore fine; what a candidate must avoid
    is the inside of any same-sized-or-smaller box. Among valid spots,
    prefer the one farthest from all boxes it could be confused with.
    """
    w = len(text) * CHAR_W
    dx, dy = end.x - start.x, end.y - start.y
    length = math.hypot(dx, dy) or 1.0
    nx, ny = -dy / length, dx / length
    rivals = [b for b in other_arrows if b.area < own.area + 1.0]
    best, best_score = None, -1.0
    for step in range(4, 17):
        t = step / 20.0
        for perp in (0.0, 22.0, -22.0):
            px = start.x + t * dx + perp * nx
            py = start.y + t * dy + perp * ny
            if not (
                own.x_min + inset + w / 2 <= px <= own.x_max - inset - w / 2
                and own.y_min + inset + LABEL_H / 2 <= py <= own.y_max - inset - LABEL_H / 2
            ):
                continue
            box = Box(px - w / 2, py - LABEL_H / 2, px + w / 2, py + LABEL_H / 2)
            centre = Point(px, py)
            score = min(
                (point_box_distance(centre, b) for b in rivals), default=math.inf
            )
            if score < LABEL_ARROW_CLEARANCE:
                continue
            if any(_box_clearance(box, nb) < LABEL_NODE_CLEARANCE for nb in node_boxes):
                continue
            if any(_box_clearance(box, tb) < 16.0 for tb in taken):
                continue
            if score > best_score:
                best, best_score = box, score
    if best is None:
        raise _RetryLayout
    return best


def _box_clearance(a: Box, b: Box) -> float:
    gx = max(b.x_min - a.x_max, a.x_min - b.x_max, 0.0)
    gy = max(b.y_min - a.y_max, a.y_min - b.y_max, 0.0)
    return math.hypot(gx, gy)


def _realize(spec: SynthSpec, rng: random.Random) -> SynthCase:
    layers, pairs = _build_structure(spec, rng)
    if spec.size_target is not None:
        lo, hi = _SIZE_EDGE_RANGE[spec.size_target]
        if not lo <= len(pairs) <= hi:
            raise _RetryLayout

    for row in layers:
        for nd in row:
            nd.box = _node_box(nd.layer, nd.lane)
    n_layers = len(layers)
    max_width = max(len(row) for row in layers)
    image_w = 2 * MARGIN + NODE_W + (max_width - 1) * LANE_GAP + (BRICK_SHIFT if n_layers > 1 else 0.0)
    image_h = 2 * MARGIN + NODE_H + (n_layers - 1) * LAYER_GAP
    diagonal = math.hypot(image_w, image_h)
    if diagonal > _MAX_DIAGONAL:
        raise _RetryLayout
    label_inset = 0.012 * diagonal + 4.0

    # Start keypoints live on the source's bottom edge, end keypoints on
    # the target's top edge, each fanned out in target order and biased
    # away from the travel direction. Keeping attachments near the node
    # center matters: lanes repeat every half pitch, so points pushed to
    # a node's corners would nearly coincide with a neighbour's corners
    # and let unrelated keypoints span a convincing impostor box. Back
    # edges run between right-edge midpoints instead.
    out_of: dict[str, list[tuple]] = {}
    into: dict[str, list[tuple]] = {}
    for p in pairs:
        u, v, _ = p
        if v.layer > u.layer:
            out_of.setdefault(u.id, []).append(p)
            into.setdefault(v.id, []).append(p)
    for group in out_of.values():
        group.sort(key=lambda p: (p[1].box.center.x, p[1].id))
    for group in into.values():
        group.sort(key=lambda p: (p[0].box.center.x, p[0].id))

    arrows = []
    for i, (u, v, label) in enumerate(pairs, start=1):
        if v.layer <= u.layer:
            start = Point(u.box.x_max, u.box.center.y)
            end = Point(v.box.x_max, v.box.center.y)
        else:
            s_group = out_of[u.id]
            e_group = into[v.id]
            sx = _attach_x(u, len(s_group), v.box.center.x, s_group.index((u, v, label)))
            ex = _attach_x(v, len(e_group), u.box.center.x, e_group.index((u, v, label)))
            sx, ex = _widen_apart(sx, ex, u.box, v.box)
            start, end = Point(sx, u.box.y_max), Point(ex, v.box.y_min)
        start_box = _keypoint_box(start)
        end_box = _keypoint_box(end)
        arrows.append(
            {
                "id": f"a{i}",
                "u": u,
                "v": v,
                "label": label,
                "start": start,
                "end": end,
                "start_box": start_box,
                "end_box": end_box,
                "box": span_box(start_box, end_box),
            }
        )

    node_boxes = [nd.box for row in layers for nd in row]
    objects: list[DetectedObject] = []
    tokens: list[OcrToken] = []
    for row in layers:
        for nd in row:
            objects.append(DetectedObject(nd.id, nd.category, nd.box, 1.0))
    token_idx = 0
    for row in layers:
        for nd in row:
            token_idx += 1
            w = min(len(nd.text) * CHAR_W, NODE_W - 128.0)
            c = nd.box.center
            tokens.append(
                OcrToken(
                    f"t{token_idx}",
                    nd.text,
                    Box(c.x - w / 2, c.y - TOKEN_H / 2, c.x + w / 2, c.y + TOKEN_H / 2),
                )
            )

    label_boxes: list[Box] = []
    for i, arrow in enumerate(arrows):
        objects.append(DetectedObject(arrow["id"], ObjectClass.ARROW, arrow["box"], 1.0))
        objects.append(DetectedObject(f"s{i + 1}", ObjectClass.ARROW_START, arrow["start_box"], 1.0))
        objects.append(DetectedObject(f"e{i + 1}", ObjectClass.ARROW_END, arrow["end_box"], 1.0))
        if arrow["label"] is not None:
            others = [a["box"] for a in arrows if a is not arrow]
            box = _place_label(
                arrow["label"],
                arrow["start"],
                arrow["end"],
                arrow["box"],
                others,
                node_boxes,
                label_boxes,
                label_inset,
            )
            label_boxes.append(box)
            token_idx += 1
            tokens.append(OcrToken(f"t{token_idx}", arrow["label"], box))

    doc = Document(
        image_w=image_w,
        image_h=image_h,
        objects=tuple(objects),
        tokens=tuple(tokens),
        source_id=f"synth-{spec.seed}",
    )

    gold_nodes = [
        Node(nd.id, nd.category, nd.text, nd.box, normalized_center(nd.box, image_w, image_h))
        for row in layers
        for nd in row
    ]
    gold_edges = [
        Edge(a["u"].id, a["v"].id, a["id"], a["label"]) for a in arrows
    ]
    gold = FlowGraph.create(gold_nodes, gold_edges, source_id=doc.source_id)

    questions, _ = generate_questions(gold, seed=spec.seed)
    return SynthCase(gold=gold, doc=doc, questions=tuple(questions))


def generate(spec: SynthSpec) -> SynthCase:
    """Build one synthetic case, deterministically in ``spec.seed``.

    Layout dead-ends (a width sequence that cannot host its decisions,
    a label with no quiet spot) are retried with fresh randomness a
    bounded number of times before giving up.
    """
    last = None
    for attempt in range(_MAX_ATTEMPTS):
        rng = random.Random(spec.seed * 1_000_003 + attempt)
        try:
            case = _realize(spec, rng)
        except _RetryLayout as exc:
            last = exc
            continue
        if not spec.noise.silent:
            case = SynthCase(
                gold=case.gold,
                doc=perturb(case, spec.noise, seed=spec.seed),
                questions=case.questions,
            )
        return case
    raise GenerationError(
        f"no viable layout for {spec} after {_MAX_ATTEMPTS} attempts"
    ) from last


def perturb(case: SynthCase, noise: NoiseSpec, seed: int = 0) -> Document:
    """Return a degraded copy of the case's document; gold is untouched."""
    doc = case.doc
    if noise.silent:
        return doc
    rng = random.Random(seed)

    objects = list(doc.objects)
    if noise.jitter > 0:
        j = noise.jitter * doc.diagonal
        jittered = []
        for obj in objects:
            b = obj.box
            x0, x1 = sorted((b.x_min + rng.uniform(-j, j), b.x_max + rng.uniform(-j, j)))
            y0, y1 = sorted((b.y_min + rng.uniform(-j, j), b.y_max + rng.uniform(-j, j)))
            jittered.append(replace(obj, box=Box(x0, y0, x1, y1)))
        objects = jittered
    if noise.endpoint_dropout > 0:
        kept = []
        for obj in objects:
            if obj.cls in (ObjectClass.ARROW_START, ObjectClass.ARROW_END):
                if rng.random() < noise.endpoint_dropout:
                    continue
            kept.append(obj)
        objects = kept

    tokens = []
    for tok in doc.tokens:
        if noise.token_split_prob > 0 and len(tok.text) >= 2 and rng.random() < noise.token_split_prob:
            cut = rng.randint(1, len(tok.text) - 1)
            frac = cut / len(tok.text)
            x_cut = tok.box.x_min + tok.box.width * frac
            tokens.append(
                OcrToken(f"{tok.id}.1", tok.text[:cut], replace(tok.box, x_max=x_cut))
            )
            tokens.append(
                OcrToken(f"{tok.id}.2", tok.text[cut:], replace(tok.box, x_min=x_cut))
            )
        else:
            tokens.append(tok)

    return Document(
        image_w=doc.image_w,
        image_h=doc.image_h,
        objects=tuple(objects),
        tokens=tuple(tokens),
        source_id=doc.source_id,
    )


def _node_key(node: Node) -> tuple[str, str]:
    return (node.category.value, normalize(node.text))


def _keyed(graph: FlowGraph) -> tuple[set, list]:
    keys = {}
    for node in graph.nodes:
        key = _node_key(node)
        if key in keys.values():
            raise FlowrecError(f"duplicate node key {key}; equivalence needs unique texts")
        keys[node.id] = key
    edges = sorted(
        (keys[e.source_id], keys[e.target_id], normalize(e.label or "")) for e in graph.edges
    )
    return set(keys.values()), edges


def graphs_equivalent(a: FlowGraph, b: FlowGraph) -> bool:
    """Structural equality on (category, normalized text) keys.

    True when the node key sets coincide and induce identical labeled
    edge lists. Node ids, coordinates, and diagnostics play no part.
    Duplicate keys within one graph raise, since the bijection would be
    ambiguous.
    """
    nodes_a, edges_a = _keyed(a)
    nodes_b, edges_b = _keyed(b)
    return nodes_a == nodes_b and edges_a == edges_b


def edge_recovery(gold: FlowGraph, rebuilt: FlowGraph) -> float:
    """Fraction of gold edges present in the rebuilt graph, labels ignored.

    Edges are matched as multisets of (source key, target key) pairs,
    so a rebuilt graph with duplicated or text-less nodes still scores
    sensibly. An edgeless gold graph scores 1.0.
    """
    if not gold.edges:
        return 1.0
    gold_keys = {n.id: _node_key(n) for n in gold.nodes}
    rebuilt_keys = {n.id: _node_key(n) for n in rebuilt.nodes}
    want = Counter((gold_keys[e.source_id], gold_keys[e.target_id]) for e in gold.edges)
    have = Counter((rebuilt_keys[e.source_id], rebuilt_keys[e.target_id]) for e in rebuilt.edges)
    hit = sum(min(count, have[key]) for key, count in want.items())
    return hit / sum(want.values())
