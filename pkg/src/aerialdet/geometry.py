"""Axis-aligned box arithmetic shared by every other module.

Boxes are stored as (left, top, width, height) in image pixels, matching
the annotation convention of aerial datasets. Coordinates are real valued;
rasterization only happens where pixels are actually touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: left edge, top edge, width, height (pixels)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"non-finite box coordinates: {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width/height must be positive: {self}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ImageDims:
    """Image extent in pixels."""

    width: float
    height: float

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive: {self}")


def intersection_area(a: BBox, b: BBox) -> float:
    """Overlap area of two boxes; 0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def _corner_area(box: BBox) -> float:
    # Same corner expressions as intersection_area, so containment and
    # identity come out exactly 1.0 despite float rounding of x + w.
    return (box.x2 - box.x) * (box.y2 - box.y)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union, symmetric, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (_corner_area(a) + _corner_area(b) - inter)


def coverage(inner: BBox, region: BBox) -> float:
    """Fraction of `inner`'s area that lies inside `region` (in [0, 1]).

    This is intersection-over-area, not symmetric IoU: coverage == 1 exactly
    when `inner` is contained in `region`, regardless of how much larger the
    region is. It is the membership criterion used when assigning small
    boxes to much larger cluster windows.
    """
    return intersection_area(inner, region) / _corner_area(inner)


def union_box(a: BBox, b: BBox) -> BBox:
    """Smallest box containing both inputs."""
    x = min(a.x, b.x)
    y = min(a.y, b.y)
    return BBox(x, y, max(a.x2, b.x2) - x, max(a.y2, b.y2) - y)


def clamp_box(box: BBox, dims: ImageDims) -> BBox | None:
    """Intersect a box with the image rectangle; None if nothing remains.

    A box already inside the image is returned unchanged (bit-exact), not
    rebuilt from its corners.
    """
    if box.x >= 0 and box.y >= 0 and box.x2 <= dims.width and box.y2 <= dims.height:
        return box
    x = max(box.x, 0.0)
    y = max(box.y, 0.0)
    x2 = min(box.x2, dims.width)
    y2 = min(box.y2, dims.height)
    if x2 <= x or y2 <= y:
        return None
    return BBox(x, y, x2 - x, y2 - y)


def _clamp_axis(center: float, extent: float, limit: float) -> tuple[float, float]:
    # Returns (origin, size) of an extent-sized interval centered as close to
    # `center` as possible while staying inside [0, limit]. Oversized extents
    # collapse to the full axis instead of erroring.
    if extent >= limit:
        return 0.0, limit
    half = extent / 2.0
    c = min(max(center, half), limit - half)
    return c - half, extent


def recenter(
    seed_center: tuple[float, float],
    window_w: float,
    window_h: float,
    dims: ImageDims,
) -> BBox:
    """Place a window_w x window_h box at seed_center, shifted to fit the image.

    The returned box keeps the requested size and is translated the minimal
    distance needed to lie entirely inside the image. If the requested size
    exceeds the image on an axis, the box spans that full axis.
    """
    if window_w <= 0 or window_h <= 0:
        raise ValueError("window size must be positive")
    x, w = _clamp_axis(seed_center[0], window_w, dims.width)
    y, h = _clamp_axis(seed_center[1], window_h, dims.height)
    return BBox(x, y, w, h)
