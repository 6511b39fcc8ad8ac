"""Turn sparse seed boxes into dense per-frame labels by bidirectional tracking.

From every seed the tracker runs forward and backward through the clip. A
direction stops at the first frame whose tracking score is below ``rho1`` or
whose box overlaps the previously accepted box with IoU below ``rho2``.
Tracked boxes and the original seeds are then de-duplicated per frame and
class.
"""
from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .geometry import BBox, FrameSize, area, clip, iou
from .tracker import Frame, TrackerFactory

log = logging.getLogger(__name__)

FORWARD = "forward"
BACKWARD = "backward"
ORIGINAL = "original"
_SOURCE_RANK = {ORIGINAL: 0, FORWARD: 1, BACKWARD: 2}


def _unit(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class DensifyParams:
    rho1: float = 0.8  # minimum tracking score
    rho2: float = 0.4  # minimum IoU between consecutive accepted boxes
    tau_dup: float = 0.5  # IoU at which same-class labels on a frame are duplicates

    def __post_init__(self):
        _unit("rho1", self.rho1)
        _unit("rho2", self.rho2)
        _unit("tau_dup", self.tau_dup)


@dataclass(frozen=True)
class Seed:
    frame: int
    cls: int
    box: BBox
    seed_id: int = 0


@dataclass(frozen=True)
class PseudoLabel:
    frame: int
    cls: int
    box: BBox
    score: float
    source: str  # ORIGINAL, FORWARD or BACKWARD
    seed_id: int

    def sort_key(self):
        return (self.frame, self.cls, -self.score, _SOURCE_RANK[self.source], self.seed_id, self.box.as_tuple())


@dataclass
class ActionClip:
    clip_id: str
    frames: Sequence[Frame]
    seeds: list[Seed] = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError(f"clip {self.clip_id!r} has no frames")
        for s in self.seeds:
            self.check_seed(s)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def size(self) -> FrameSize:
        return self.frames[0].size

    def check_seed(self, seed: Seed) -> None:
        if not 0 <= seed.frame < len(self.frames):
            raise ValueError(f"seed {seed.seed_id} frame {seed.frame} outside clip of {len(self.frames)} frames")
        if area(seed.box) <= 0:
            raise ValueError(f"seed {seed.seed_id} box {seed.box} has zero area")

    def reversed(self) -> "ActionClip":
        """The same clip played backwards; frame ``k`` becomes ``N - 1 - k``."""
        n = len(self.frames)
        frames = [f.with_index(k) for k, f in enumerate(reversed(self.frames))]
        seeds = [Seed(n - 1 - s.frame, s.cls, s.box, s.seed_id) for s in self.seeds]
        return ActionClip(self.clip_id, frames, seeds)


@dataclass
class DenseClip:
    clip_id: str
    num_frames: int
    labels: list[PseudoLabel]
    warnings: list[str] = field(default_factory=list)

    def by_frame(self) -> list[list[PseudoLabel]]:
        out: list[list[PseudoLabel]] = [[] for _ in range(self.num_frames)]
        for lab in self.labels:
            out[lab.frame].append(lab)
        return out


def _track(clip_: ActionClip, factory: TrackerFactory, seed: Seed, params: DensifyParams, step: int):
    clip_.check_seed(seed)
    n = len(clip_.frames)
    order = range(seed.frame + 1, n) if step > 0 else range(seed.frame - 1, -1, -1)
    if not order:
        return []
    direction = FORWARD if step > 0 else BACKWARD
    tracker = factory()
    tracker.init(clip_.frames[seed.frame], seed.box)
    frame_size = clip_.size
    prev = seed.box
    out = []
    for k in order:
        res = tracker.update(clip_.frames[k])
        if res.score < params.rho1 or iou(prev, res.bbox) < params.rho2:
            break
        box = clip(res.bbox, frame_size)
        if area(box) <= 0:
            # tracked box left the frame entirely
            break
        out.append(PseudoLabel(k, seed.cls, box, float(res.score), direction, seed.seed_id))
        prev = box
    return out


def forward_track(clip_: ActionClip, factory: TrackerFactory, seed: Seed, params: DensifyParams) -> list[PseudoLabel]:
    return _track(clip_, factory, seed, params, +1)


def backward_track(clip_: ActionClip, factory: TrackerFactory, seed: Seed, params: DensifyParams) -> list[PseudoLabel]:
    return _track(clip_, factory, seed, params, -1)


def merge_pseudo_labels(labels: Sequence[PseudoLabel], tau_dup: float) -> list[PseudoLabel]:
    """Greedy per-(frame, class) de-duplication.

    Priority: original seeds, then higher score, then lower seed id. A label is
    dropped when it overlaps an already kept label with IoU >= ``tau_dup``.
    Original seeds are never dropped.
    """
    ranked = sorted(labels, key=lambda p: (p.frame, p.cls, _SOURCE_RANK[p.source] != 0, -p.score,
                                          p.seed_id, _SOURCE_RANK[p.source], p.box.as_tuple()))
    kept: list[PseudoLabel] = []
    group: list[PseudoLabel] = []
    group_key = None
    for lab in ranked:
        if (lab.frame, lab.cls) != group_key:
            group_key, group = (lab.frame, lab.cls), []
        if lab.source == ORIGINAL or all(iou(lab.box, k.box) < tau_dup for k in group):
            group.append(lab)
            kept.append(lab)
    return sorted(kept, key=PseudoLabel.sort_key)


def _run_unit(clip_, factory, seed, params, step):
    try:
        return _track(clip_, factory, seed, params, step), None
    except Exception as exc:  # one bad seed must not abort the clip
        direction = FORWARD if step > 0 else BACKWARD
        return [], f"clip {clip_.clip_id}: seed {seed.seed_id} ({direction}) skipped: {exc}"


def densify_clip(
    clip_: ActionClip,
    factory: TrackerFactory,
    params: DensifyParams,
    executor: Optional[Executor] = None,
) -> DenseClip:
    """Track every seed both ways and merge the results with the seeds.

    With an ``executor`` the (seed, direction) units run concurrently; the
    result does not depend on scheduling.
    """
    units = [(seed, step) for seed in clip_.seeds for step in (+1, -1)]
    if executor is None:
        results = [_run_unit(clip_, factory, s, params, step) for s, step in units]
    else:
        futures = [executor.submit(_run_unit, clip_, factory, s, params, step) for s, step in units]
        results = [f.result() for f in futures]

    labels = [PseudoLabel(s.frame, s.cls, s.box, 1.0, ORIGINAL, s.seed_id) for s in clip_.seeds]
    warnings = []
    for tracked, warning in results:
        labels.extend(tracked)
        if warning:
            log.warning(warning)
            warnings.append(warning)
    merged = merge_pseudo_labels(labels, params.tau_dup)
    return DenseClip(clip_.clip_id, len(clip_.frames), merged, warnings)
