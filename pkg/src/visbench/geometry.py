"""Geometric primitives shared by every evaluation module.

Boxes use continuous, half-open pixel coordinates: a box spans
[xmin, xmax) x [ymin, ymax) and its area is (xmax - xmin) * (ymax - ymin).
There is deliberately no +1 pixel correction anywhere; a 10x10 box inside
a 20x20 box has overlap ratio 100/400 = 0.25 exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ImageRef:
    """An image identity plus its pixel dimensions."""

    id: str
    width: int
    height: int

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("image id must be nonempty")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.id!r}: width/height must be positive")

    @property
    def area(self) -> float:
        return float(self.width) * float(self.height)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with strictly positive area and finite coordinates."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        for v in (self.xmin, self.ymin, self.xmax, self.ymax):
            if not math.isfinite(v):
                raise ValueError("box coordinates must be finite")
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise ValueError(
                f"degenerate box ({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})"
            )

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class ScoredBox:
    """A predicted box with a confidence score (any finite real)."""

    box: BoundingBox
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ValueError("confidence score must be finite")


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    """Area of the overlap region of two boxes; 0.0 when disjoint."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    if iw <= 0:
        return 0.0
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area divided by union area, in [0, 1].

    Symmetric; 1.0 only for coordinate-identical boxes; 0.0 when disjoint.
    Boxes are used as given, even if they extend past an image frame.
    """
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def clip_box(box: BoundingBox, image: ImageRef) -> BoundingBox | None:
    """Box clipped to the image frame, or None if nothing remains inside."""
    xmin = max(box.xmin, 0.0)
    ymin = max(box.ymin, 0.0)
    xmax = min(box.xmax, float(image.width))
    ymax = min(box.ymax, float(image.height))
    if xmax <= xmin or ymax <= ymin:
        return None
    return BoundingBox(xmin, ymin, xmax, ymax)


def box_area_fraction(box: BoundingBox, image: ImageRef) -> float:
    """Fraction of the image area covered by the box, after clipping to the frame."""
    clipped = clip_box(box, image)
    if clipped is None:
        return 0.0
    return clipped.area / image.area


def normalized_box(box: BoundingBox, image: ImageRef) -> BoundingBox:
    """Box rescaled into the unit square of its image (for cross-image overlap)."""
    w = float(image.width)
    h = float(image.height)
    return BoundingBox(box.xmin / w, box.ymin / h, box.xmax / w, box.ymax / h)
