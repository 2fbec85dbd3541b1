"""Axis-aligned rectangle primitives.

Every association rule in the pipeline (text fusion, arrow anchoring,
object linking) reduces to a handful of box predicates defined here.
Coordinates are pixels with the origin at the top-left corner and y
growing downward.
"""

import math
from dataclasses import dataclass

__all__ = [
    "Point",
    "NormalizedPoint",
    "Box",
    "iou",
    "containment_ratio",
    "span_box",
    "edge_distance",
    "point_box_distance",
    "box_gap",
    "near_edge",
    "normalized_center",
]


@dataclass(frozen=True)
class Point:
    """A pixel position."""

    x: float
    y: float


@dataclass(frozen=True)
class NormalizedPoint:
    """An image position with both coordinates scaled into [0, 1]."""

    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"normalized coordinates outside [0, 1]: ({self.x}, {self.y})")


@dataclass(frozen=True)
class Box:
    """An axis-aligned rectangle.

    Degenerate (zero-width or zero-height) boxes are legal; inverted
    extents are not and are rejected at construction time.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {v!r}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(
                f"inverted box extents: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return Point((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_tuple(self) -> tuple:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def _intersection_area(a: Box, b: Box) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes.

    Returns 0.0 for disjoint boxes and, by convention, when both boxes
    have zero area (the union is empty, so overlap is meaningless).

    Examples:
        >>> iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3))
        0.14285714285714285
    """
    inter = _intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def containment_ratio(inner: Box, outer: Box) -> float:
    """Fraction of ``inner``'s area that lies inside ``outer``.

    This is the asymmetric overlap used to decide whether an OCR token
    belongs to a shape: ``area(inner & outer) / area(inner)``.

    Raises:
        ValueError: if ``inner`` has zero area (the ratio is undefined).
    """
    if inner.area <= 0.0:
        raise ValueError("containment ratio is undefined for a zero-area inner box")
    return _intersection_area(inner, outer) / inner.area


def span_box(a: Box, b: Box) -> Box:
    """Smallest box covering both arguments."""
    return Box(
        min(a.x_min, b.x_min),
        min(a.y_min, b.y_min),
        max(a.x_max, b.x_max),
        max(a.y_max, b.y_max),
    )


def edge_distance(p: Point, container: Box) -> float:
    """Euclidean distance from a point to the nearest point on a box's perimeter.

    Unlike a distance-to-region, this is positive for points strictly
    inside the box as well: an interior point is measured to the closest
    side. Points on the perimeter return 0.
    """
    dx = max(container.x_min - p.x, 0.0, p.x - container.x_max)
    dy = max(container.y_min - p.y, 0.0, p.y - container.y_max)
    if dx > 0.0 or dy > 0.0:
        return math.hypot(dx, dy)
    # Interior (or on the perimeter): nearest side wins.
    return min(
        p.x - container.x_min,
        container.x_max - p.x,
        p.y - container.y_min,
        container.y_max - p.y,
    )


def point_box_distance(p: Point, box: Box) -> float:
    """Distance from a point to a box treated as a solid region (0 inside)."""
    dx = max(box.x_min - p.x, 0.0, p.x - box.x_max)
    dy = max(box.y_min - p.y, 0.0, p.y - box.y_max)
    return math.hypot(dx, dy)


def box_gap(a: Box, b: Box) -> float:
    """Smallest distance between two boxes; 0 when they touch or overlap."""
    dx = max(a.x_min - b.x_max, b.x_min - a.x_max, 0.0)
    dy = max(a.y_min - b.y_max, b.y_min - a.y_max, 0.0)
    return math.hypot(dx, dy)


def near_edge(b: Box, container: Box, eps: float) -> bool:
    """True when the center of ``b`` lies within ``eps`` of ``container``'s perimeter.

    Raises:
        ValueError: if ``eps`` is negative.
    """
    if eps < 0.0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    return edge_distance(b.center, container) <= eps


def normalized_center(b: Box, image_w: float, image_h: float) -> NormalizedPoint:
    """Center of ``b`` scaled by the image dimensions and clamped into [0, 1].

    Raises:
        ValueError: if either image dimension is not positive.
    """
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_w}x{image_h}")
    c = b.center
    return NormalizedPoint(
        min(1.0, max(0.0, c.x / image_w)),
        min(1.0, max(0.0, c.y / image_h)),
    )
