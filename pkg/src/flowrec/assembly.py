"""Turning arrow detections into directed connections between shapes.

Three passes, in order:

1. :func:`anchor_arrows` pairs each Arrow box with one ArrowStart and one
   ArrowEnd keypoint. A pairing is feasible when both keypoint centers
   sit near the arrow's perimeter and the box spanned by the two
   keypoints overlaps the arrow box well (IoU above a threshold).
   Selection is greedy by descending span IoU under a one-to-one
   constraint.
2. :func:`attach_edge_labels` hands unassigned OCR tokens (typically
   "Yes"/"No") to the nearest anchored arrow within a radius.
3. :func:`link_objects` resolves each anchored arrow's endpoints to the
   objects whose boundaries they touch, producing directed links.

An optional :func:`post_correct` pass revisits links whose endpoint had
two near-equidistant candidate objects and prefers the candidate whose
box overlaps the endpoint box best.
"""

from dataclasses import dataclass, replace

from .fuse import reading_order
from .geometry import Box, edge_distance, iou, near_edge, point_box_distance, span_box
from .ingest import ARROW_CLASSES, Diagnostic

__all__ = [
    "AssemblyConfig",
    "ResolvedEps",
    "AnchoredArrow",
    "Link",
    "LinkCandidate",
    "anchor_arrows",
    "attach_edge_labels",
    "link_objects",
    "nearest_arrow",
    "post_correct",
]


@dataclass(frozen=True)
class ResolvedEps:
    """Thresholds in pixels, after scaling against a concrete image."""

    arrow: float
    object: float
    label: float


@dataclass(frozen=True)
class AssemblyConfig:
    """Tunable thresholds for the assembly passes.

    With ``eps_relative`` (the default) the three ``eps_*`` values are
    fractions of the image diagonal; otherwise they are absolute pixels.
    ``span_iou_min`` is the strict lower bound on the IoU between an
    arrow box and the span of its candidate endpoint boxes.
    """

    eps_arrow: float = 0.02
    eps_object: float = 0.02
    eps_label: float = 0.05
    span_iou_min: float = 0.5
    eps_relative: bool = True

    def __post_init__(self):
        for name in ("eps_arrow", "eps_object", "eps_label"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not (0.0 <= self.span_iou_min <= 1.0):
            raise ValueError(f"span_iou_min must be in [0, 1], got {self.span_iou_min}")

    def resolve(self, image_w: float, image_h: float) -> ResolvedEps:
        if image_w <= 0 or image_h <= 0:
            raise ValueError(f"image dimensions must be positive, got {image_w}x{image_h}")
        scale = (image_w**2 + image_h**2) ** 0.5 if self.eps_relative else 1.0
        return ResolvedEps(self.eps_arrow * scale, self.eps_object * scale, self.eps_label * scale)


@dataclass(frozen=True)
class AnchoredArrow:
    """An Arrow detection with its matched start and end keypoints."""

    arrow_id: str
    box: Box
    start_id: str
    start_box: Box
    end_id: str
    end_box: Box
    span_iou: float
    label: str | None = None


@dataclass(frozen=True)
class Link:
    """A directed connection between two objects, carried by one arrow."""

    source_id: str
    target_id: str
    arrow_id: str
    label: str | None = None


@dataclass(frozen=True)
class LinkCandidate:
    """One candidate resolution of an arrow endpoint to an object."""

    arrow_id: str
    object_id: str
    endpoint: str  # "start" | "end"
    distance: float


def anchor_arrows(arrows, starts, ends, cfg: AssemblyConfig, image_w: float, image_h: float):
    """Match each arrow with at most one (start, end) keypoint pair.

    Feasibility requires both keypoint centers within ``eps_arrow`` of
    the arrow box perimeter and ``iou(span(start, end), arrow) >
    span_iou_min``. Feasible triples are consumed greedily by descending
    span IoU; ties fall to the smaller summed center-to-perimeter
    distance, then to arrow, start, and end ids. Each keypoint feeds at
    most one arrow.

    Returns:
        (anchored, unmatched_arrow_ids) with ``anchored`` in input arrow
        order.
    """
    eps = cfg.resolve(image_w, image_h)
    feasible = []
    for arrow in arrows:
        near_starts = [s for s in starts if near_edge(s.box, arrow.box, eps.arrow)]
        near_ends = [e for e in ends if near_edge(e.box, arrow.box, eps.arrow)]
        for s in near_starts:
            ds = edge_distance(s.box.center, arrow.box)
            for e in near_ends:
                span = span_box(s.box, e.box)
                overlap = iou(span, arrow.box)
                if overlap > cfg.span_iou_min:
                    de = edge_distance(e.box.center, arrow.box)
                    feasible.append((overlap, ds + de, arrow, s, e))

    feasible.sort(key=lambda f: (-f[0], f[1], f[2].id, f[3].id, f[4].id))

    chosen = {}
    used_starts = set()
    used_ends = set()
    for overlap, _, arrow, s, e in feasible:
        if arrow.id in chosen or s.id in used_starts or e.id in used_ends:
            continue
        chosen[arrow.id] = AnchoredArrow(
            arrow_id=arrow.id,
            box=arrow.box,
            start_id=s.id,
            start_box=s.box,
            end_id=e.id,
            end_box=e.box,
            span_iou=overlap,
        )
        used_starts.add(s.id)
        used_ends.add(e.id)

    anchored = [chosen[a.id] for a in arrows if a.id in chosen]
    unmatched = [a.id for a in arrows if a.id not in chosen]
    return anchored, unmatched


def nearest_arrow(point, anchored):
    """The anchored arrow nearest to a point, with its distance.

    Distance is to the arrow box as a solid region (0 inside). Exact
    ties prefer the smaller arrow box, then the lower arrow id, so a
    point inside two overlapping arrow boxes resolves to the more
    specific one. Returns (arrow, distance) or (None, inf).
    """
    best = None
    best_key = None
    for arrow in anchored:
        d = point_box_distance(point, arrow.box)
        key = (d, arrow.box.area, arrow.arrow_id)
        if best_key is None or key < best_key:
            best, best_key = arrow, key
    if best is None:
        return None, float("inf")
    return best, best_key[0]


def attach_edge_labels(unassigned_tokens, anchored, cfg: AssemblyConfig, image_w, image_h):
    """Attach leftover tokens to arrows as edge labels.

    Each token goes to the nearest anchored arrow, provided it is within
    ``eps_label``. When several tokens land on one arrow, the label is
    their reading-order concatenation.

    Returns:
        (anchored_with_labels, unattached_token_ids)
    """
    eps = cfg.resolve(image_w, image_h)
    attached: dict = {}
    unattached = []
    for token in unassigned_tokens:
        arrow, dist = nearest_arrow(token.box.center, anchored)
        if arrow is not None and dist <= eps.label:
            attached.setdefault(arrow.arrow_id, []).append(token)
        else:
            unattached.append(token.id)

    out = []
    for arrow in anchored:
        tokens = attached.get(arrow.arrow_id)
        if tokens:
            label = " ".join(t.text for t in reading_order(tokens))
            out.append(replace(arrow, label=label))
        else:
            out.append(arrow)
    return out, unattached


def _endpoint_candidates(endpoint_box, objects, eps_object):
    """Objects whose boundary is within reach of an endpoint center, nearest first."""
    center = endpoint_box.center
    found = []
    for obj in objects:
        d = edge_distance(center, obj.box)
        if d <= eps_object:
            found.append((d, obj))
    found.sort(key=lambda c: (c[0], c[1].id))
    return found


def link_objects(objects, anchored, cfg: AssemblyConfig, image_w, image_h):
    """Resolve anchored arrows to directed links between objects.

    The source is the object whose boundary lies nearest the start box
    center (within ``eps_object``); the target likewise for the end box.
    Arrow-family objects are never candidates. Arrows missing a side are
    dropped with a diagnostic.

    Returns:
        (links, diagnostics)
    """
    eps = cfg.resolve(image_w, image_h)
    candidates = [o for o in objects if o.cls not in ARROW_CLASSES]
    links = []
    diagnostics = []
    for arrow in anchored:
        src = _endpoint_candidates(arrow.start_box, candidates, eps.object)
        tgt = _endpoint_candidates(arrow.end_box, candidates, eps.object)
        if not src or not tgt:
            sides = []
            if not src:
                sides.append("source")
            if not tgt:
                sides.append("target")
            diagnostics.append(
                Diagnostic(
                    "dangling-arrow",
                    f"no object within reach of the arrow's {' or '.join(sides)} endpoint",
                    arrow.arrow_id,
                )
            )
            continue
        links.append(
            Link(
                source_id=src[0][1].id,
                target_id=tgt[0][1].id,
                arrow_id=arrow.arrow_id,
                label=arrow.label,
            )
        )
    return links, diagnostics


AMBIGUITY_MARGIN = 0.25  # second-best within 25% of best means "ambiguous"


def post_correct(objects, anchored, links, cfg: AssemblyConfig, image_w, image_h):
    """Re-resolve ambiguous endpoints by endpoint-box overlap.

    An endpoint is ambiguous when its second-nearest candidate object is
    within 25% of the nearest one's distance. For those, the candidate
    whose box has the highest IoU with the endpoint box wins instead of
    the merely-nearest one. Unambiguous endpoints are left alone, so the
    pass is idempotent: it recomputes every decision from the same
    inputs. Off by default.
    """
    eps = cfg.resolve(image_w, image_h)
    candidates = [o for o in objects if o.cls not in ARROW_CLASSES]
    by_id = {a.arrow_id: a for a in anchored}

    def resolve(endpoint_box, current_id):
        found = _endpoint_candidates(endpoint_box, candidates, eps.object)
        if len(found) < 2:
            return current_id
        best_d = found[0][0]
        if found[1][0] > best_d * (1.0 + AMBIGUITY_MARGIN):
            return current_id
        ambiguous = [c for c in found if c[0] <= best_d * (1.0 + AMBIGUITY_MARGIN)]
        ranked = sorted(
            ambiguous, key=lambda c: (-iou(endpoint_box, c[1].box), c[0], c[1].id)
        )
        return ranked[0][1].id

    corrected = []
    for link in links:
        arrow = by_id.get(link.arrow_id)
        if arrow is None:
            corrected.append(link)
            continue
        corrected.append(
            replace(
                link,
                source_id=resolve(arrow.start_box, link.source_id),
                target_id=resolve(arrow.end_box, link.target_id),
            )
        )
    return corrected
