"""Average precision at several IoU thresholds.

Matching follows the usual detection-benchmark recipe: detections of a class
are visited by descending score and each takes the unmatched ground truth on
its image with the highest IoU, if that IoU is strictly above the threshold.
AP is the area under the precision envelope (all-point interpolation).
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ensemble import Detection
from .geometry import BBox, iou

DEFAULT_THRESHOLDS = (0.05, 0.5, 0.75)

# image id -> list of (class, box)
GroundTruthSet = Mapping[str, Sequence[tuple[int, BBox]]]


def match_detections(
    dets: Sequence[Detection], gts: GroundTruthSet, cls: int, iou_thresh: float
) -> tuple[list[bool], int]:
    """TP/FP flag per detection of ``cls`` in ranked order, plus the gt count."""
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {iou_thresh}")
    gt_boxes = {img: [b for c, b in boxes if c == cls] for img, boxes in gts.items()}
    num_gt = sum(len(v) for v in gt_boxes.values())
    taken = {img: [False] * len(v) for img, v in gt_boxes.items()}
    ranked = sorted((k for k, d in enumerate(dets) if d.cls == cls), key=lambda k: (-dets[k].score, k))
    flags = []
    for k in ranked:
        d = dets[k]
        best, best_iou = -1, iou_thresh
        for j, g in enumerate(gt_boxes.get(d.image_id, ())):
            if taken[d.image_id][j]:
                continue
            o = iou(d.box, g)
            if o > best_iou:
                best, best_iou = j, o
        if best >= 0:
            taken[d.image_id][best] = True
        flags.append(best >= 0)
    return flags, num_gt


def ap_from_flags(flags: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP for a ranked TP/FP sequence."""
    if num_gt <= 0:
        raise ValueError("AP is undefined without ground truth")
    if len(flags) == 0:
        return 0.0
    hits = np.asarray(flags, dtype=bool)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    # precision envelope, right to left
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # recall only moves at true positives, by 1 / num_gt each; summing the
    # envelope there before dividing keeps a perfect ranking at exactly 1.0
    return float(np.sum(envelope[hits]) / num_gt)


def average_precision(
    dets: Sequence[Detection], gts: GroundTruthSet, cls: int, iou_thresh: float
) -> Optional[float]:
    """AP for one class, or ``None`` when the class has no ground truth."""
    flags, num_gt = match_detections(dets, gts, cls, iou_thresh)
    if num_gt == 0:
        return None
    return ap_from_flags(flags, num_gt)


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    ap: dict[float, dict[int, float]]  # threshold -> class -> AP
    num_images: int = 0
    num_gts: int = 0
    num_dets: int = 0
    classes: list[int] = field(default_factory=list)

    def mean_ap(self, thresh: float) -> Optional[float]:
        vals = list(self.ap[thresh].values())
        return sum(vals) / len(vals) if vals else None

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "counts": {"images": self.num_images, "gts": self.num_gts, "detections": self.num_dets},
            "mAP": {f"{t:g}": self.mean_ap(t) for t in self.thresholds},
            "per_class": {
                str(c): {f"{t:g}": self.ap[t][c] for t in self.thresholds} for c in self.classes
            },
        }

    def table(self) -> str:
        def fmt(v):
            return "   -  " if v is None else f"{100 * v:6.2f}"

        head = "class " + "".join(f" {'> ' + format(t, 'g'):>7}" for t in self.thresholds)
        lines = [head, "-" * len(head)]
        for c in self.classes:
            lines.append(f"{c:<5} " + "".join(f" {fmt(self.ap[t][c]):>7}" for t in self.thresholds))
        lines.append("-" * len(head))
        lines.append("mAP   " + "".join(f" {fmt(self.mean_ap(t)):>7}" for t in self.thresholds))
        lines.append(f"images={self.num_images} gts={self.num_gts} detections={self.num_dets}")
        return "\n".join(lines)


def evaluate(
    dets: Sequence[Detection], gts: GroundTruthSet, thresholds: Iterable[float] = DEFAULT_THRESHOLDS
) -> EvalReport:
    thresholds = tuple(thresholds)
    classes = sorted({c for boxes in gts.values() for c, _ in boxes})
    per_cls: dict[int, list[Detection]] = defaultdict(list)
    for d in dets:
        per_cls[d.cls].append(d)
    ap: dict[float, dict[int, float]] = {}
    for t in thresholds:
        ap[t] = {c: average_precision(per_cls[c], gts, c, t) for c in classes}
    images = set(gts) | {d.image_id for d in dets}
    return EvalReport(
        thresholds=thresholds,
        ap=ap,
        num_images=len(images),
        num_gts=sum(len(v) for v in gts.values()),
        num_dets=len(dets),
        classes=classes,
    )
