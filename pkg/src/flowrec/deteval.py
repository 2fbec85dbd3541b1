"""COCO-style detection metrics, including a relaxed-IoU regime.

Detector quality is scored per class with 101-point interpolated average
precision and with average recall under a per-image detection cap. The
standard thresholds run 0.50-0.95; because arrow keypoint boxes are tiny
and punishing to localize exactly, a relaxed 0.10-0.50 set is offered as
well. Both use a 0.05 step, and the rendered report names the thresholds
it was computed with so the regimes cannot be confused.

Loaders accept a native per-image JSON schema and standard COCO
annotation / result files.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .geometry import Box, iou
from .ingest import SCHEMA_VERSION, ObjectClass

__all__ = [
    "RELAXED_THRESHOLDS",
    "STANDARD_THRESHOLDS",
    "COCO_AREA_BUCKETS",
    "GtBox",
    "DetBox",
    "EvalConfig",
    "ClassMetrics",
    "DetectionReport",
    "match_detections",
    "average_precision",
    "average_recall",
    "evaluate",
    "render_report",
    "parse_gt_boxes",
    "parse_det_boxes",
    "payload_image_ids",
    "coco_categories",
]

RELAXED_THRESHOLDS = tuple(round(0.10 + 0.05 * k, 2) for k in range(9))
STANDARD_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))

# Pixel-area buckets following the COCO convention.
COCO_AREA_BUCKETS = (
    ("Small", 0.0, 32.0**2),
    ("Medium", 32.0**2, 96.0**2),
    ("Large", 96.0**2, math.inf),
)

_ARROW_RELATED = frozenset(
    {ObjectClass.ARROW, ObjectClass.ARROW_START, ObjectClass.ARROW_END}
)


@dataclass(frozen=True)
class GtBox:
    """One ground-truth box. ``image_id`` may be a string or an int."""

    image_id: object
    cls: ObjectClass
    box: Box


@dataclass(frozen=True)
class DetBox:
    """One detection with its confidence."""

    image_id: object
    cls: ObjectClass
    box: Box
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple = STANDARD_THRESHOLDS
    area_buckets: tuple = COCO_AREA_BUCKETS
    max_dets: int = 100

    def __post_init__(self):
        if not self.iou_thresholds:
            raise ValueError("iou_thresholds must not be empty")
        prev = 0.0
        for t in self.iou_thresholds:
            if not prev < t <= 1.0:
                raise ValueError(
                    f"iou_thresholds must be strictly increasing in (0, 1], got {self.iou_thresholds}"
                )
            prev = t
        if self.max_dets < 1:
            raise ValueError(f"max_dets must be >= 1, got {self.max_dets}")
        for name, lo, hi in self.area_buckets:
            if lo < 0 or hi <= lo:
                raise ValueError(f"area bucket {name!r} has an empty range ({lo}, {hi})")


@dataclass(frozen=True)
class ClassMetrics:
    ap: float
    ar: float
    n_gt: int


@dataclass(frozen=True)
class DetectionReport:
    """Everything :func:`evaluate` measures, ready for rendering.

    ``per_class`` covers classes with at least one ground truth;
    detections of a class never annotated land in ``unscored`` instead
    of dragging the means down. ``by_size`` rows are None when a bucket
    holds no ground truth.
    """

    thresholds: tuple
    max_dets: int
    per_class: dict
    groups: dict
    by_size: dict
    unscored: tuple


def match_detections(gts, dets, iou_threshold):
    """Greedily match one image's single-class detections to ground truth.

    Detections take priority by descending score (ties keep input
    order); each claims the unmatched ground truth with the highest
    IoU at or above the threshold, ties going to the lower index.

    Returns:
        (det_flags, gt_matched): booleans aligned with the inputs.
    """
    matched = [False] * len(gts)
    flags = [False] * len(dets)
    for i in sorted(range(len(dets)), key=lambda k: (-dets[k].score, k)):
        best_v, best_gi = -1.0, -1
        for gi, g in enumerate(gts):
            if matched[gi]:
                continue
            v = iou(dets[i].box, g.box)
            if v >= iou_threshold and v > best_v:
                best_v, best_gi = v, gi
        if best_gi >= 0:
            matched[best_gi] = True
            flags[i] = True
    return flags, matched


def average_precision(scored_flags, n_gt: int) -> float:
    """101-point interpolated AP from (score, is_tp) pairs.

    The pairs may span many images; matching has already happened.
    They are ranked by descending score, ties keeping input order, and
    precision is sampled at recalls 0.00, 0.01, ..., 1.00 using the
    best precision achieved at or beyond each recall.
    """
    if n_gt < 1:
        raise ValueError("average_precision needs at least one ground truth")
    pairs = list(scored_flags)
    if not pairs:
        return 0.0
    order = sorted(range(len(pairs)), key=lambda k: (-pairs[k][0], k))
    hits = np.array([1.0 if pairs[k][1] else 0.0 for k in order])
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    grid = np.arange(101) / 100.0
    idx = np.searchsorted(recall, grid, side="left")
    inside = idx < len(envelope)
    sampled = np.where(inside, envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def average_recall(gts, dets, iou_thresholds, max_dets: int = 100) -> float:
    """Recall averaged over thresholds, capped at max_dets per image."""
    if not gts:
        raise ValueError("average_recall needs at least one ground truth")
    gts_by_image = {}
    for g in gts:
        gts_by_image.setdefault(g.image_id, []).append(g)
    dets_by_image = {}
    for i, d in enumerate(dets):
        dets_by_image.setdefault(d.image_id, []).append((i, d))
    kept = {}
    for img, entries in dets_by_image.items():
        top = sorted(entries, key=lambda e: (-e[1].score, e[0]))[:max_dets]
        kept[img] = [d for _, d in sorted(top, key=lambda e: e[0])]
    recalls = []
    for t in iou_thresholds:
        hit = 0
        for img, sub_gts in gts_by_image.items():
            _, matched = match_detections(sub_gts, kept.get(img, []), t)
            hit += sum(matched)
        recalls.append(hit / len(gts))
    return float(np.mean(recalls))


def _pooled_flags(gts, dets, threshold):
    """(score, tp) per detection, in input order, matched per image."""
    gts_by_image = {}
    for g in gts:
        gts_by_image.setdefault(g.image_id, []).append(g)
    dets_by_image = {}
    for i, d in enumerate(dets):
        dets_by_image.setdefault(d.image_id, []).append((i, d))
    flags = [False] * len(dets)
    for img, entries in dets_by_image.items():
        sub_flags, _ = match_detections(
            gts_by_image.get(img, []), [d for _, d in entries], threshold
        )
        for (i, _), f in zip(entries, sub_flags):
            flags[i] = f
    return [(d.score, flags[i]) for i, d in enumerate(dets)]


def _class_rows(gts, dets, cfg: EvalConfig) -> dict:
    rows = {}
    for cls in sorted({g.cls for g in gts}, key=lambda c: c.value):
        class_gts = [g for g in gts if g.cls is cls]
        class_dets = [d for d in dets if d.cls is cls]
        aps = [
            average_precision(_pooled_flags(class_gts, class_dets, t), len(class_gts))
            for t in cfg.iou_thresholds
        ]
        ar = average_recall(class_gts, class_dets, cfg.iou_thresholds, cfg.max_dets)
        rows[cls] = ClassMetrics(float(np.mean(aps)), ar, len(class_gts))
    return rows


def _size_row(rows: dict):
    if not rows:
        return None
    return (
        float(np.mean([m.ap for m in rows.values()])),
        float(np.mean([m.ar for m in rows.values()])),
    )


def evaluate(gts, dets, cfg: EvalConfig | None = None, image_ids=None) -> DetectionReport:
    """Score detections against ground truth under one threshold regime.

    ``image_ids`` is the dataset's full image list (images with no
    annotated boxes included); detections on such images count as false
    positives. When omitted, the universe defaults to the images the
    ground truth mentions.

    Raises:
        SchemaError: when a detection references an image id outside
            the universe (the two files disagree about the dataset).
    """
    cfg = cfg or EvalConfig()
    universe = {g.image_id for g in gts} if image_ids is None else set(image_ids)
    orphans = sorted({str(d.image_id) for d in dets if d.image_id not in universe})
    if orphans:
        raise SchemaError(
            "detections reference image ids absent from the ground truth: "
            + ", ".join(orphans)
        )

    per_class = _class_rows(gts, dets, cfg)
    unscored = tuple(
        sorted({d.cls for d in dets} - set(per_class), key=lambda c: c.value)
    )

    def group_mean(members):
        vals = [m.ap for c, m in per_class.items() if c in members]
        return float(np.mean(vals)) if vals else None

    groups = {
        "Arrow": group_mean({ObjectClass.ARROW}),
        "Arrow-related": group_mean(_ARROW_RELATED),
        "Non-arrow": group_mean(set(ObjectClass) - _ARROW_RELATED),
        "All": group_mean(set(ObjectClass)),
    }

    by_size = {"All": _size_row(per_class)}
    for name, lo, hi in cfg.area_buckets:
        sub_gts = [g for g in gts if lo <= g.box.area < hi]
        sub_dets = [d for d in dets if lo <= d.box.area < hi]
        by_size[name] = _size_row(_class_rows(sub_gts, sub_dets, cfg))

    return DetectionReport(
        thresholds=tuple(cfg.iou_thresholds),
        max_dets=cfg.max_dets,
        per_class=per_class,
        groups=groups,
        by_size=by_size,
        unscored=unscored,
    )


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_report(report: DetectionReport) -> str:
    """Plain-text tables: AP/AR by size, mAP by group, AP/AR by class."""
    thresholds = ", ".join(f"{t:.2f}" for t in report.thresholds)
    lines = [
        "detection evaluation",
        f"IoU thresholds: {thresholds} (max_dets={report.max_dets})",
        "",
        f"{'size':<12} {'AP':>8} {'AR':>8}",
    ]
    for name, row in report.by_size.items():
        ap, ar = (None, None) if row is None else row
        lines.append(f"{name:<12} {_fmt(ap):>8} {_fmt(ar):>8}")
    lines += ["", f"{'group':<14} {'mAP':>8}"]
    for name, value in report.groups.items():
        lines.append(f"{name:<14} {_fmt(value):>8}")
    lines += ["", f"{'class':<14} {'AP':>8} {'AR':>8} {'n_gt':>6}"]
    for cls, m in report.per_class.items():
        lines.append(f"{cls.value:<14} {_fmt(m.ap):>8} {_fmt(m.ar):>8} {m.n_gt:>6}")
    if report.unscored:
        names = ", ".join(c.value for c in report.unscored)
        lines += ["", f"no ground truth (not scored): {names}"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# loaders


def _as_number(value, where: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SchemaError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _xyxy_box(raw, where: str) -> Box:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"{where}: box must be [x_min, y_min, x_max, y_max]")
    x0, y0, x1, y1 = (_as_number(v, where) for v in raw)
    try:
        return Box(x0, y0, x1, y1)
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def _coco_box(raw, where: str) -> Box:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"{where}: bbox must be [x, y, width, height]")
    x, y, w, h = (_as_number(v, where) for v in raw)
    if w < 0 or h < 0:
        raise SchemaError(f"{where}: bbox width/height must be >= 0")
    return Box(x, y, x + w, y + h)


def _native_records(payload, kind: str, want_score: bool):
    if not isinstance(payload, dict):
        raise SchemaError(f"{kind}: expected an object payload")
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{kind}: schema_version must be {SCHEMA_VERSION!r}")
    images = payload.get("images")
    if not isinstance(images, list):
        raise SchemaError(f"{kind}: 'images' must be a list")
    for i, image in enumerate(images):
        where_img = f"{kind}.images[{i}]"
        if not isinstance(image, dict) or "id" not in image:
            raise SchemaError(f"{where_img}: missing image id")
        objects = image.get("objects", [])
        if not isinstance(objects, list):
            raise SchemaError(f"{where_img}: 'objects' must be a list")
        for j, rec in enumerate(objects):
            where = f"{where_img}.objects[{j}]"
            if not isinstance(rec, dict) or "class" not in rec or "box" not in rec:
                raise SchemaError(f"{where}: needs 'class' and 'box'")
            cls = ObjectClass.parse(str(rec["class"]))
            box = _xyxy_box(rec["box"], where)
            if want_score:
                if "score" not in rec:
                    raise SchemaError(f"{where}: detections need a 'score'")
                score = _as_number(rec["score"], where)
                if not 0.0 <= score <= 1.0:
                    raise SchemaError(f"{where}: score must be in [0, 1], got {score}")
                yield image["id"], cls, box, score
            else:
                yield image["id"], cls, box, None


def payload_image_ids(payload) -> list:
    """The image ids a native or COCO annotation payload declares."""
    if not isinstance(payload, dict) or not isinstance(payload.get("images"), list):
        raise SchemaError("payload has no 'images' list")
    ids = []
    for i, image in enumerate(payload["images"]):
        if not isinstance(image, dict) or "id" not in image:
            raise SchemaError(f"images[{i}]: missing image id")
        ids.append(image["id"])
    return ids


def coco_categories(payload) -> dict:
    """Category-id table from a COCO annotation payload."""
    if not isinstance(payload, dict) or not isinstance(payload.get("categories"), list):
        raise SchemaError("COCO payload: 'categories' must be a list")
    table = {}
    for i, rec in enumerate(payload["categories"]):
        where = f"categories[{i}]"
        if not isinstance(rec, dict) or "id" not in rec or "name" not in rec:
            raise SchemaError(f"{where}: needs 'id' and 'name'")
        table[rec["id"]] = ObjectClass.parse(str(rec["name"]))
    return table


def parse_gt_boxes(payload) -> list:
    """Ground truth from the native schema or a COCO annotation file."""
    if isinstance(payload, dict) and "annotations" in payload:
        table = coco_categories(payload)
        out = []
        for i, rec in enumerate(payload["annotations"]):
            where = f"annotations[{i}]"
            if not isinstance(rec, dict) or "image_id" not in rec:
                raise SchemaError(f"{where}: missing image_id")
            if rec.get("category_id") not in table:
                raise SchemaError(f"{where}: unknown category_id {rec.get('category_id')!r}")
            out.append(
                GtBox(rec["image_id"], table[rec["category_id"]], _coco_box(rec.get("bbox"), where))
            )
        return out
    return [
        GtBox(img, cls, box)
        for img, cls, box, _ in _native_records(payload, "ground truth", want_score=False)
    ]


def parse_det_boxes(payload, categories: dict | None = None) -> list:
    """Detections from the native schema or a COCO results list.

    COCO results carry bare category ids, so they can only be decoded
    alongside the ``categories`` table of their annotation file (see
    :func:`coco_categories`).
    """
    if isinstance(payload, list):
        if categories is None:
            raise SchemaError("COCO results need the category table from the annotation file")
        out = []
        for i, rec in enumerate(payload):
            where = f"results[{i}]"
            if not isinstance(rec, dict) or "image_id" not in rec or "score" not in rec:
                raise SchemaError(f"{where}: needs 'image_id' and 'score'")
            if rec.get("category_id") not in categories:
                raise SchemaError(f"{where}: unknown category_id {rec.get('category_id')!r}")
            score = _as_number(rec["score"], where)
            if not 0.0 <= score <= 1.0:
                raise SchemaError(f"{where}: score must be in [0, 1], got {score}")
            out.append(
                DetBox(rec["image_id"], categories[rec["category_id"]], _coco_box(rec.get("bbox"), where), score)
            )
        return out
    return [
        DetBox(img, cls, box, score)
        for img, cls, box, score in _native_records(payload, "detections", want_score=True)
    ]
