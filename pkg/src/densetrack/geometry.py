"""Axis-aligned box arithmetic.

Boxes use pixel coordinates with a top-left origin and exclusive far edges,
so ``x1 - x0`` is the width (no ``+1``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True, slots=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        for v in (self.x0, self.y0, self.x1, self.y1):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate in {self!r}")
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"inverted box {self!r}")

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "BBox":
        x0, y0, x1, y1 = seq
        return cls(float(x0), float(y0), float(x1), float(y1))

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def scaled(self, factor: float) -> "BBox":
        """Scale all coordinates about the origin."""
        return BBox(self.x0 * factor, self.y0 * factor, self.x1 * factor, self.y1 * factor)


@dataclass(frozen=True, slots=True)
class FrameSize:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"frame size must be positive, got {self.width}x{self.height}")


def area(b: BBox) -> float:
    return (b.x1 - b.x0) * (b.y1 - b.y0)


def intersection(a: BBox, b: BBox) -> float:
    """Area of the overlap of two boxes (0 when they are disjoint)."""
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    inter = intersection(a, b)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    # guard against rounding pushing the ratio a hair outside [0, 1]
    return min(1.0, max(0.0, inter / union))


def clip(b: BBox, frame: FrameSize) -> BBox:
    """Intersect ``b`` with the frame rectangle.

    A box entirely outside the frame collapses onto the nearest frame edge
    and ends up with zero area.
    """
    w, h = float(frame.width), float(frame.height)
    return BBox(
        min(max(b.x0, 0.0), w),
        min(max(b.y0, 0.0), h),
        min(max(b.x1, 0.0), w),
        min(max(b.y1, 0.0), h),
    )


def contains_strictly(b: BBox, u: float, v: float) -> bool:
    return b.x0 < u < b.x1 and b.y0 < v < b.y1

