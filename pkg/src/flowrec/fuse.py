"""Fusing OCR tokens with detected objects.

A token belongs to a shape when more than half of its box area lies
inside the shape's box. Arrow-family detections never receive text, and
neither do Text-class detections: text geometry comes exclusively from
OCR, and a detector's own Text box (which hugs the token tighter than
the shape around it) must not swallow the words that belong to the
shape. Tokens left over after assignment become edge-label candidates
downstream.
"""

import statistics
from dataclasses import dataclass

from .errors import FlowrecError
from .geometry import box_gap, containment_ratio, span_box
from .ingest import NODE_CLASSES

__all__ = ["TextAssignment", "assign_texts", "object_text", "reading_order", "cluster_fragments"]

CONTAINMENT_MIN = 0.5  # strict: a ratio of exactly 0.5 does not assign


@dataclass(frozen=True)
class TextAssignment:
    """Where one token ended up.

    ``object_id`` is None when no eligible object contains more than half
    of the token; ``ratio`` is the best containment ratio seen among
    eligible objects (0.0 when there were none).
    """

    token_id: str
    object_id: str | None
    ratio: float


def assign_texts(tokens, objects) -> list:
    """Assign each token to at most one shape-class object.

    The winning object is the one with the highest containment ratio;
    ties go to the smaller object box (the most specific enclosing
    shape), then to the lower object id. Output order matches token
    input order, one record per token.
    """
    eligible = [o for o in objects if o.cls in NODE_CLASSES]
    out = []
    for token in tokens:
        best = None  # (ratio, area, id, object)
        for obj in eligible:
            ratio = containment_ratio(token.box, obj.box)
            key = (-ratio, obj.box.area, obj.id)
            if best is None or key < best[0]:
                best = (key, ratio, obj)
        if best is not None and best[1] > CONTAINMENT_MIN:
            out.append(TextAssignment(token.id, best[2].id, best[1]))
        else:
            out.append(TextAssignment(token.id, None, 0.0 if best is None else best[1]))
    return out


def reading_order(tokens) -> list:
    """Sort tokens the way a person reads: row by row, left to right.

    Rows are bands of tokens whose vertical centers sit within half the
    median token height of the band's first member. Within a band, order
    is by horizontal center, then token id.
    """
    if not tokens:
        return []
    half_med = statistics.median(t.box.height for t in tokens) / 2.0
    pre = sorted(tokens, key=lambda t: (t.box.center.y, t.box.center.x, t.id))
    bands = []
    for token in pre:
        cy = token.box.center.y
        if bands and cy - bands[-1][0] < half_med:
            bands[-1][1].append(token)
        else:
            bands.append((cy, [token]))
    ordered = []
    for _, members in bands:
        members.sort(key=lambda t: (t.box.center.x, t.box.center.y, t.id))
        ordered.extend(members)
    return ordered


def object_text(object_id: str, assignments, tokens) -> str:
    """Concatenate the tokens assigned to one object, in reading order."""
    assigned_ids = {a.token_id for a in assignments if a.object_id == object_id}
    mine = [t for t in tokens if t.id in assigned_ids]
    return " ".join(t.text for t in reading_order(mine))


def cluster_fragments(tokens, gap: float) -> list:
    """Merge over-segmented OCR fragments back into single tokens.

    Two tokens join the same cluster when their boxes are at most ``gap``
    pixels apart and their vertical centers differ by less than half the
    smaller box height (single-link closure). A merged token takes the
    span of its members' boxes, the reading-order concatenation of their
    texts, and the lowest member id. This pass is opt-in; it is not part
    of the default pipeline.

    Raises:
        FlowrecError: if ``gap`` is negative.
    """
    if gap < 0:
        raise FlowrecError(f"cluster gap must be non-negative, got {gap}")
    tokens = list(tokens)
    n = len(tokens)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    for i in range(n):
        for j in range(i + 1, n):
            a, b = tokens[i], tokens[j]
            if box_gap(a.box, b.box) > gap:
                continue
            dy = abs(a.box.center.y - b.box.center.y)
            if dy < min(a.box.height, b.box.height) / 2.0:
                union(i, j)

    groups: dict = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    merged = []
    for root in sorted(groups, key=lambda r: min(groups[r])):
        members = [tokens[i] for i in groups[root]]
        if len(members) == 1:
            merged.append(members[0])
            continue
        ordered = reading_order(members)
        box = members[0].box
        for t in members[1:]:
            box = span_box(box, t.box)
        merged.append(
            type(members[0])(
                id=min(t.id for t in members),
                text=" ".join(t.text for t in ordered),
                box=box,
            )
        )
    return merged
