"""Single-object trackers.

``NCCTracker`` matches a fixed template by normalized cross-correlation over
a local search window and a small scale set. ``OracleTracker`` replays known
ground truth and is used to test the densification logic in isolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np
from scipy import ndimage, signal

from .geometry import BBox, FrameSize, clip, iou


class TrackerError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Frame:
    """Grayscale frame, intensities in [0, 1], shape (height, width)."""

    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"frame must be a non-empty 2-D array, got shape {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> FrameSize:
        return FrameSize(self.width, self.height)

    def with_index(self, index: int) -> "Frame":
        return Frame(self.pixels, index)


@dataclass(frozen=True)
class TrackResult:
    bbox: BBox
    score: float


class Tracker(Protocol):
    def init(self, frame: Frame, seed: BBox) -> None: ...

    def update(self, frame: Frame) -> TrackResult: ...


TrackerFactory = Callable[[], Tracker]


def _round(x: float) -> int:
    # half-up rounding, independent of Python's banker's rounding
    return int(math.floor(x + 0.5))


def ncc_map(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-normalized cross-correlation of ``template`` at every valid offset.

    Returns an array of shape ``image.shape - template.shape + 1`` with values
    in [-1, 1]; offsets where either patch is flat score 0.
    """
    th, tw = template.shape
    n = th * tw
    t = template - template.mean()
    t_norm = math.sqrt(float(np.sum(t * t)))
    num = signal.correlate(image, t, mode="valid")

    # local sums from integral images
    ii = np.pad(np.cumsum(np.cumsum(image, 0), 1), ((1, 0), (1, 0)))
    ii2 = np.pad(np.cumsum(np.cumsum(image * image, 0), 1), ((1, 0), (1, 0)))
    s = ii[th:, tw:] - ii[:-th, tw:] - ii[th:, :-tw] + ii[:-th, :-tw]
    s2 = ii2[th:, tw:] - ii2[:-th, tw:] - ii2[th:, :-tw] + ii2[:-th, :-tw]
    var = np.maximum(s2 - s * s / n, 0.0)

    denom = np.sqrt(var) * t_norm
    out = np.zeros_like(num)
    ok = denom > 1e-9 * n
    out[ok] = num[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def _resample(patch: np.ndarray, height: int, width: int) -> np.ndarray:
    if patch.shape == (height, width):
        return patch
    h0, w0 = patch.shape
    # pixel-center aligned bilinear resampling
    ys = (np.arange(height) + 0.5) * (h0 / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w0 / width) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(patch, [yy, xx], order=1, mode="nearest")


class NCCTracker:
    """Fixed-template normalized cross-correlation tracker.

    Each update searches integer offsets within ``radius`` pixels of the
    previous box, at each scale in ``scales`` applied to the previous box
    size. Score is ``(peak_ncc + 1) / 2``.
    """

    def __init__(self, radius: Optional[int] = None, scales: Sequence[float] = (0.95, 1.0, 1.05)):
        self.radius = radius
        self.scales = tuple(scales)
        self._template: Optional[np.ndarray] = None
        self._box: Optional[BBox] = None
        self._radius = 0

    def init(self, frame: Frame, seed: BBox) -> None:
        if seed.width <= 0 or seed.height <= 0:
            raise TrackerError(f"seed box {seed} has zero area")
        box = clip(seed, frame.size)
        x0, y0, x1, y1 = (_round(v) for v in box.as_tuple())
        if x1 <= x0 or y1 <= y0:
            raise TrackerError(f"seed box {seed} does not overlap the frame")
        self._template = frame.pixels[y0:y1, x0:x1].copy()
        self._box = box
        self._radius = self.radius if self.radius is not None else max(x1 - x0, y1 - y0)

    def update(self, frame: Frame) -> TrackResult:
        if self._template is None:
            raise TrackerError("update() called before init()")
        prev = self._box
        cx, cy = prev.center
        best = None
        # scale 1.0 first so it wins exact ties
        order = sorted(self.scales, key=lambda s: (abs(s - 1.0), s))
        for s in order:
            w, h = prev.width * s, prev.height * s
            tw, th = max(1, _round(w)), max(1, _round(h))
            if tw > frame.width or th > frame.height:
                continue
            ox, oy = _round(cx - tw / 2.0), _round(cy - th / 2.0)
            xlo = min(max(ox - self._radius, 0), frame.width - tw)
            xhi = min(max(ox + self._radius, 0), frame.width - tw)
            ylo = min(max(oy - self._radius, 0), frame.height - th)
            yhi = min(max(oy + self._radius, 0), frame.height - th)
            window = frame.pixels[ylo : yhi + th, xlo : xhi + tw]
            scores = ncc_map(window, _resample(self._template, th, tw))
            iy, ix = np.unravel_index(int(np.argmax(scores)), scores.shape)
            peak = float(scores[iy, ix])
            if best is None or peak > best[0]:
                mx, my = xlo + ix + tw / 2.0, ylo + iy + th / 2.0
                best = (peak, BBox.from_center(mx, my, w, h))
        if best is None:
            return TrackResult(prev, 0.0)
        peak, box = best
        self._box = box
        return TrackResult(box, min(1.0, max(0.0, (peak + 1.0) / 2.0)))


class OracleTracker:
    """Replays ground-truth tracks keyed by ``Frame.index``.

    ``tracks`` maps track id to ``{frame_index: box}``. ``init`` latches onto
    the track with the highest IoU against the seed on the seed frame.
    ``score_fn(track_id, frame_index)`` overrides the default score of 1.0.
    A frame where the track is absent yields a zero-area box with score 0.
    """

    def __init__(
        self,
        tracks: Mapping[int, Mapping[int, BBox]],
        score_fn: Optional[Callable[[int, int], float]] = None,
    ):
        self.tracks = tracks
        self.score_fn = score_fn
        self.track_id: Optional[int] = None
        self._last: Optional[BBox] = None

    def init(self, frame: Frame, seed: BBox) -> None:
        if seed.width <= 0 or seed.height <= 0:
            raise TrackerError(f"seed box {seed} has zero area")
        best, best_iou = None, 0.0
        for tid in sorted(self.tracks):
            box = self.tracks[tid].get(frame.index)
            if box is not None and iou(box, seed) > best_iou:
                best, best_iou = tid, iou(box, seed)
        if best is None:
            raise TrackerError(f"no ground-truth track overlaps seed {seed} on frame {frame.index}")
        self.track_id = best
        self._last = seed

    def update(self, frame: Frame) -> TrackResult:
        if self.track_id is None:
            raise TrackerError("update() called before init()")
        box = self.tracks[self.track_id].get(frame.index)
        if box is None:
            cx, cy = self._last.center
            return TrackResult(BBox(cx, cy, cx, cy), 0.0)
        self._last = box
        score = 1.0 if self.score_fn is None else float(self.score_fn(self.track_id, frame.index))
        return TrackResult(box, score)


@dataclass
class OracleFactory:
    """Callable factory so the oracle can be handed to ``densify`` like any tracker."""

    tracks: Mapping[int, Mapping[int, BBox]]
    score_fn: Optional[Callable[[int, int], float]] = field(default=None)

    def __call__(self) -> OracleTracker:
        return OracleTracker(self.tracks, self.score_fn)


class GroundTruthLinkTracker:
    """Oracle for untracked ground truth: follows the best-overlapping box.

    ``boxes`` maps frame index to that frame's ground-truth boxes.
    Each update returns the box with the highest IoU against the last one;
    no overlapping box yields a zero-area box with score 0.
    """

    def __init__(self, boxes: Mapping[int, Sequence[BBox]]):
        self.boxes = boxes
        self._last: Optional[BBox] = None

    def init(self, frame: Frame, seed: BBox) -> None:
        if seed.width <= 0 or seed.height <= 0:
            raise TrackerError(f"seed box {seed} has zero area")
        self._last = seed

    def update(self, frame: Frame) -> TrackResult:
        if self._last is None:
            raise TrackerError("update() called before init()")
        best, best_iou = None, 0.0
        for b in self.boxes.get(frame.index, ()):
            o = iou(b, self._last)
            if o > best_iou:
                best, best_iou = b, o
        if best is None:
            cx, cy = self._last.center
            return TrackResult(BBox(cx, cy, cx, cy), 0.0)
        self._last = best
        return TrackResult(best, 1.0)
