"""Wire schemas for detector output and OCR tokens.

Two JSON payloads feed the pipeline: object detections (with the image
dimensions) and OCR tokens. Both carry ``"schema_version": "1"``. Box
coordinates on the wire are ``[x_min, y_min, x_max, y_max]`` by default;
``box_format="xywh"`` accepts ``[x, y, width, height]`` instead.
"""

import enum
from dataclasses import dataclass

from .errors import SchemaError
from .geometry import Box, near_edge

SCHEMA_VERSION = "1"

__all__ = [
    "ObjectClass",
    "ARROW_CLASSES",
    "NODE_CLASSES",
    "DetectedObject",
    "OcrToken",
    "Document",
    "Diagnostic",
    "parse_detections",
    "parse_ocr",
    "load_document",
    "serialize_detections",
    "serialize_ocr",
    "validate",
]


class ObjectClass(enum.Enum):
    """The nine detector classes."""

    TEXT = "Text"
    ARROW = "Arrow"
    TERMINATOR = "Terminator"
    DATA = "Data"
    PROCESS = "Process"
    DECISION = "Decision"
    CONNECTION = "Connection"
    ARROW_START = "ArrowStart"
    ARROW_END = "ArrowEnd"

    @classmethod
    def parse(cls, name: str) -> "ObjectClass":
        """Parse a class name, tolerating case and separator variations.

        ``"arrow start"``, ``"arrow_start"``, and ``"ArrowStart"`` all map
        to :attr:`ARROW_START`.
        """
        key = _fold_class_name(name)
        try:
            return _CLASS_LOOKUP[key]
        except KeyError:
            raise SchemaError(f"unknown object class {name!r}") from None


def _fold_class_name(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch not in " _-")


_CLASS_LOOKUP = {_fold_class_name(m.value): m for m in ObjectClass}

ARROW_CLASSES = frozenset({ObjectClass.ARROW, ObjectClass.ARROW_START, ObjectClass.ARROW_END})
NODE_CLASSES = frozenset(
    {
        ObjectClass.TERMINATOR,
        ObjectClass.DATA,
        ObjectClass.PROCESS,
        ObjectClass.DECISION,
        ObjectClass.CONNECTION,
    }
)


@dataclass(frozen=True)
class DetectedObject:
    id: str
    cls: ObjectClass
    box: Box
    score: float

    def __post_init__(self):
        if not self.id:
            raise SchemaError("object id must be non-empty")
        if not (0.0 <= self.score <= 1.0):
            raise SchemaError(f"object {self.id}: score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class OcrToken:
    id: str
    text: str
    box: Box

    def __post_init__(self):
        if not self.id:
            raise SchemaError("token id must be non-empty")
        if not self.text.strip():
            raise SchemaError(f"token {self.id}: text must be non-empty")
        if self.box.area <= 0.0:
            raise SchemaError(f"token {self.id}: box must have positive area")


@dataclass(frozen=True)
class Document:
    """One diagram image's worth of detections and tokens."""

    image_w: float
    image_h: float
    objects: tuple
    tokens: tuple
    source_id: str = ""

    def __post_init__(self):
        if self.image_w <= 0 or self.image_h <= 0:
            raise SchemaError(
                f"image dimensions must be positive, got {self.image_w}x{self.image_h}"
            )
        seen = set()
        for item in (*self.objects, *self.tokens):
            if item.id in seen:
                raise SchemaError(f"duplicate id {item.id!r} in document")
            seen.add(item.id)

    @property
    def diagonal(self) -> float:
        return (self.image_w**2 + self.image_h**2) ** 0.5

    def objects_of(self, *classes: ObjectClass) -> list:
        wanted = set(classes)
        return [o for o in self.objects if o.cls in wanted]


@dataclass(frozen=True)
class Diagnostic:
    """A non-fatal finding surfaced by validation or assembly."""

    code: str
    message: str
    subject_id: str | None = None

    def __str__(self):
        subject = f" [{self.subject_id}]" if self.subject_id else ""
        return f"{self.code}{subject}: {self.message}"


def _require(payload: dict, key: str, where: str):
    if not isinstance(payload, dict) or key not in payload:
        raise SchemaError(f"{where}: missing required key {key!r}")
    return payload[key]


def _check_version(payload: dict, where: str):
    version = _require(payload, "schema_version", where)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{where}: unsupported schema_version {version!r}")


def _parse_box(raw, where: str, box_format: str) -> Box:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"{where}: box must be a list of four numbers, got {raw!r}")
    try:
        a, b, c, d = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: box values must be numeric, got {raw!r}") from None
    if box_format == "xyxy":
        coords = (a, b, c, d)
    elif box_format == "xywh":
        if c < 0 or d < 0:
            raise SchemaError(f"{where}: negative width or height in {raw!r}")
        coords = (a, b, a + c, b + d)
    else:
        raise SchemaError(f"unknown box_format {box_format!r}")
    try:
        return Box(*coords)
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def parse_detections(payload: dict, box_format: str = "xyxy") -> list:
    """Parse a detections payload into :class:`DetectedObject` records.

    Raises:
        SchemaError: on any malformed record; the message names the
            offending array index.
    """
    _check_version(payload, "detections")
    raw_objects = _require(payload, "objects", "detections")
    if not isinstance(raw_objects, list):
        raise SchemaError("detections: 'objects' must be a list")
    out = []
    for i, rec in enumerate(raw_objects):
        where = f"detections.objects[{i}]"
        oid = _require(rec, "id", where)
        cls_name = _require(rec, "class", where)
        box = _parse_box(_require(rec, "box", where), where, box_format)
        score = _require(rec, "score", where)
        if not isinstance(score, (int, float)) or isinstance(score, bool):
            raise SchemaError(f"{where}: score must be a number")
        try:
            out.append(DetectedObject(str(oid), ObjectClass.parse(str(cls_name)), box, float(score)))
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None
    return out


def parse_ocr(payload: dict, box_format: str = "xyxy"):
    """Parse an OCR payload.

    Tokens whose text is empty after stripping are dropped rather than
    rejected; each drop produces a warning string.

    Returns:
        (tokens, warnings)
    """
    _check_version(payload, "ocr")
    raw_tokens = _require(payload, "tokens", "ocr")
    if not isinstance(raw_tokens, list):
        raise SchemaError("ocr: 'tokens' must be a list")
    tokens = []
    warnings = []
    for i, rec in enumerate(raw_tokens):
        where = f"ocr.tokens[{i}]"
        tid = _require(rec, "id", where)
        text = _require(rec, "text", where)
        if not isinstance(text, str):
            raise SchemaError(f"{where}: text must be a string")
        if not text.strip():
            warnings.append(f"{where}: dropped token {tid!r} with empty text")
            continue
        box = _parse_box(_require(rec, "box", where), where, box_format)
        try:
            tokens.append(OcrToken(str(tid), text, box))
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None
    return tokens, warnings


def load_document(det_payload: dict, ocr_payload: dict, box_format: str = "xyxy"):
    """Combine a detections payload and an OCR payload into a :class:`Document`.

    Returns:
        (document, warnings)
    """
    objects = parse_detections(det_payload, box_format)
    image = _require(det_payload, "image", "detections")
    width = _require(image, "width", "detections.image")
    height = _require(image, "height", "detections.image")
    source_id = str(image.get("id", ""))
    tokens, warnings = parse_ocr(ocr_payload, box_format)
    try:
        doc = Document(float(width), float(height), tuple(objects), tuple(tokens), source_id)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"detections.image: {exc}") from None
    return doc, warnings


def _box_wire(box: Box) -> list:
    return [box.x_min, box.y_min, box.x_max, box.y_max]


def serialize_detections(doc: Document) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "image": {"width": doc.image_w, "height": doc.image_h, "id": doc.source_id},
        "objects": [
            {"id": o.id, "class": o.cls.value, "box": _box_wire(o.box), "score": o.score}
            for o in doc.objects
        ],
    }


def serialize_ocr(doc: Document) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tokens": [{"id": t.id, "text": t.text, "box": _box_wire(t.box)} for t in doc.tokens],
    }


def validate(doc: Document, eps_frac: float = 0.02) -> list:
    """Non-fatal sanity checks on a document.

    Flags boxes that extend beyond the image, arrows with no endpoint
    detection near their perimeter, and duplicated token texts. Returns a
    list of :class:`Diagnostic`; an empty list means nothing looked off.
    """
    findings = []
    eps = eps_frac * doc.diagonal

    def inside_image(box: Box) -> bool:
        return (
            box.x_min >= 0
            and box.y_min >= 0
            and box.x_max <= doc.image_w
            and box.y_max <= doc.image_h
        )

    for o in doc.objects:
        if not inside_image(o.box):
            findings.append(Diagnostic("out-of-image", "object box extends beyond the image", o.id))
    for t in doc.tokens:
        if not inside_image(t.box):
            findings.append(Diagnostic("out-of-image", "token box extends beyond the image", t.id))

    starts = doc.objects_of(ObjectClass.ARROW_START)
    ends = doc.objects_of(ObjectClass.ARROW_END)
    for arrow in doc.objects_of(ObjectClass.ARROW):
        has_start = any(near_edge(s.box, arrow.box, eps) for s in starts)
        has_end = any(near_edge(e.box, arrow.box, eps) for e in ends)
        if not (has_start and has_end):
            missing = []
            if not has_start:
                missing.append("start")
            if not has_end:
                missing.append("end")
            findings.append(
                Diagnostic(
                    "arrow-missing-endpoints",
                    f"no {' or '.join(missing)} keypoint near the arrow box",
                    arrow.id,
                )
            )

    seen: dict = {}
    for t in doc.tokens:
        seen.setdefault(t.text.strip(), []).append(t.id)
    for text, ids in seen.items():
        if len(ids) > 1:
            findings.append(
                Diagnostic(
                    "duplicate-text",
                    f"text {text!r} appears in tokens {', '.join(ids)}",
                    None,
                )
            )
    return findings
