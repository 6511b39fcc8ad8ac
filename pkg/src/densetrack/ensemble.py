"""Greedy per-class NMS and joint-NMS fusion of several detectors' outputs."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Sequence

from .geometry import BBox, iou


@dataclass(frozen=True)
class Detection:
    box: BBox
    cls: int
    score: float
    model: int = 0
    image_id: str = ""

    def __post_init__(self):
        if self.cls < 1:
            raise ValueError(f"detection class must be >= 1, got {self.cls}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class EnsembleParams:
    nms_iou: float = 0.5
    top_k: int = 300
    score_floor: float = 0.0

    def __post_init__(self):
        for name in ("nms_iou", "score_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")


def _priority(indexed):
    k, d = indexed
    return (-d.score, d.model, k)


def nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy NMS within each (image, class) group.

    Candidates are visited by descending score, ties broken by lower model id
    and then input order. A candidate is suppressed when its IoU with a kept
    detection exceeds ``iou_thresh``. Output is in the same priority order.
    """
    kept: list[tuple[int, Detection]] = []
    by_group: dict[tuple[str, int], list[Detection]] = defaultdict(list)
    for k, d in sorted(enumerate(dets), key=_priority):
        group = by_group[(d.image_id, d.cls)]
        if all(iou(d.box, other.box) <= iou_thresh for other in group):
            group.append(d)
            kept.append((k, d))
    return [d for _, d in kept]


def top_k(dets: Sequence[Detection], params: EnsembleParams) -> list[Detection]:
    """Per image: drop detections below the score floor and keep the best ``top_k``."""
    per_image: dict[str, list[tuple[int, Detection]]] = defaultdict(list)
    for k, d in enumerate(dets):
        if d.score >= params.score_floor:
            per_image[d.image_id].append((k, d))
    kept = []
    for items in per_image.values():
        kept.extend(sorted(items, key=_priority)[: params.top_k])
    return [d for _, d in sorted(kept)]


def joint_nms(per_model: Sequence[Sequence[Detection]], params: EnsembleParams) -> list[Detection]:
    """Pool each model's top-k detections and run NMS over the pool.

    Detections are tagged with their model's position in ``per_model``; no
    other field is changed.
    """
    if not per_model:
        raise ValueError("joint_nms needs at least one model's detections")
    pooled = []
    for m, dets in enumerate(per_model):
        pooled.extend(replace(d, model=m) for d in top_k(dets, params))
    return nms(pooled, params.nms_iou)
