"""Anchor-free (FCOS-style) box targets and loss, as plain numeric functions.

A grid position ``(u, v)`` strictly inside a ground-truth box regresses the
four distances ``(l, t, r, b)`` from itself to the box sides. Classification
uses per-class sigmoid focal loss, regression uses IoU loss on the decoded
boxes, and both are normalised by the number of positive positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .geometry import BBox, area, contains_strictly, iou

LTRB = tuple[float, float, float, float]

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
IOU_FLOOR = 1e-6
_LOG_FLOOR = 1e-12


class OutsideBoxError(ValueError):
    """Raised when a regression target is requested for a background position."""


@dataclass(frozen=True)
class GridPosition:
    u: float
    v: float


@dataclass(frozen=True)
class FcosTarget:
    cls: int  # 0 is background
    ltrb: Optional[LTRB] = None
    gt_index: Optional[int] = None

    @property
    def positive(self) -> bool:
        return self.cls > 0


def grid_positions(width: int, height: int, stride: int) -> list[GridPosition]:
    """Feature-map locations of a single pyramid level, projected to image space."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    half = stride // 2
    return [
        GridPosition(float(half + j * stride), float(half + i * stride))
        for i in range(math.ceil(height / stride))
        for j in range(math.ceil(width / stride))
    ]


def encode_target(pos: GridPosition, gt: BBox) -> LTRB:
    if not contains_strictly(gt, pos.u, pos.v):
        raise OutsideBoxError(f"position ({pos.u}, {pos.v}) is not strictly inside {gt}")
    return (pos.u - gt.x0, pos.v - gt.y0, gt.x1 - pos.u, gt.y1 - pos.v)


def decode_box(pos: GridPosition, ltrb: Sequence[float]) -> BBox:
    l, t, r, b = ltrb
    if min(l, t, r, b) < 0:
        raise ValueError(f"negative regression component in {tuple(ltrb)}")
    return BBox(pos.u - l, pos.v - t, pos.u + r, pos.v + b)


def assign_targets(
    positions: Sequence[GridPosition], gts: Sequence[tuple[BBox, int]]
) -> list[FcosTarget]:
    """Label every position with the smallest-area box that strictly contains it.

    Equal areas resolve to the earlier box in ``gts``.
    """
    for _, c in gts:
        if c < 1:
            raise ValueError(f"object classes must be >= 1, got {c}")
    targets = []
    for p in positions:
        best = None
        for j, (box, _) in enumerate(gts):
            if contains_strictly(box, p.u, p.v) and (best is None or area(box) < area(gts[best][0])):
                best = j
        if best is None:
            targets.append(FcosTarget(0))
        else:
            box, c = gts[best]
            targets.append(FcosTarget(c, encode_target(p, box), best))
    return targets


def focal_loss(scores: Sequence[float], cls: int, gamma=FOCAL_GAMMA, alpha=FOCAL_ALPHA) -> float:
    """Sigmoid focal loss summed over classes; ``scores[j]`` is P(class j + 1)."""
    total = 0.0
    for j, p in enumerate(scores):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"class probability {p} outside [0, 1]")
        if j + 1 == cls:
            weight = alpha * (1.0 - p) ** gamma
            if weight:
                total += weight * -math.log(max(p, _LOG_FLOOR))
        else:
            weight = (1.0 - alpha) * p**gamma
            if weight:
                total += weight * -math.log(max(1.0 - p, _LOG_FLOOR))
    return total


def iou_loss(pos: GridPosition, pred: Sequence[float], target: Sequence[float]) -> float:
    overlap = iou(decode_box(pos, pred), decode_box(pos, target))
    return -math.log(max(overlap, IOU_FLOOR))


def detection_loss(
    scores: Sequence[Sequence[float]],
    regressions: Sequence[Sequence[float]],
    targets: Sequence[FcosTarget],
    positions: Optional[Sequence[GridPosition]] = None,
    gamma: float = FOCAL_GAMMA,
    alpha: float = FOCAL_ALPHA,
) -> float:
    """Mean focal loss plus mean IoU loss over positive positions.

    Both sums are divided by the positive count (at least 1). IoU is
    translation invariant, so ``positions`` only matters for the absolute
    placement of decoded boxes and defaults to the origin.
    """
    n = len(targets)
    if len(scores) != n or len(regressions) != n:
        raise ValueError(
            f"length mismatch: {len(scores)} scores, {len(regressions)} regressions, {n} targets"
        )
    if positions is not None and len(positions) != n:
        raise ValueError(f"length mismatch: {len(positions)} positions, {n} targets")
    num_pos = max(1, sum(t.positive for t in targets))
    cls_sum = 0.0
    reg_sum = 0.0
    origin = GridPosition(0.0, 0.0)
    for k, (a, m_hat, tgt) in enumerate(zip(scores, regressions, targets)):
        cls_sum += focal_loss(a, tgt.cls, gamma, alpha)
        if tgt.positive:
            pos = positions[k] if positions is not None else origin
            reg_sum += iou_loss(pos, m_hat, tgt.ltrb)
    return cls_sum / num_pos + reg_sum / num_pos
