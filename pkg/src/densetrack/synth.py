"""Deterministic synthetic action clips with dense and sparse ground truth.

Every random draw comes from :class:`SplitMix64`, a counter-based generator
defined entirely by integer arithmetic, so clips, boxes and seeds are
bit-identical on any platform::

    GOLDEN = 0x9E3779B97F4A7C15
    z  = seed + i * GOLDEN           (mod 2**64, i = 1, 2, 3, ...)
    z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out_i = z ^ (z >> 31)
    uniform_i = (out_i >> 11) * 2**-53

Draw order for ``generate_clip`` with one generator seeded by ``config.seed``:
texture cells of each object (row-major, object order), then one uniform per
(object, present frame) for sparse sampling, one more per object if none was
kept (index of the forced seed), then background noise per frame (row-major).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset_io import image_id
from .densify import ActionClip, Seed
from .geometry import BBox, FrameSize, area, clip, iou
from .tracker import Frame

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

TEXTURE_CELLS = 6
NOISE_SIGMA = 0.05
BACKGROUND = 0.5


class SplitMix64:
    def __init__(self, seed: int):
        self.seed = np.uint64(seed % 2**64)
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = self.seed + i * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform1(self) -> float:
        return float(self.uniform(1)[0])


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ObjectSpec:
    cls: int
    box: tuple[float, float, float, float]  # at frame 0, unclipped
    velocity: tuple[float, float] = (0.0, 0.0)  # px / frame
    motion: str = "linear"  # or "sinusoidal"
    amplitude: tuple[float, float] = (0.0, 0.0)  # sinusoidal offset, px
    period: float = 20.0  # frames
    scale_drift: float = 0.0  # relative size change per frame

    def box_at(self, k: int) -> BBox:
        """Integer-aligned, unclipped box at frame ``k``."""
        x0, y0, x1, y1 = self.box
        cx = (x0 + x1) / 2.0 + self.velocity[0] * k
        cy = (y0 + y1) / 2.0 + self.velocity[1] * k
        if self.motion == "sinusoidal":
            phase = math.sin(2.0 * math.pi * k / self.period)
            cx += self.amplitude[0] * phase
            cy += self.amplitude[1] * phase
        elif self.motion != "linear":
            raise ValueError(f"unknown motion model {self.motion!r}")
        grow = (1.0 + self.scale_drift) ** k
        w = max(1, _round((x1 - x0) * grow))
        h = max(1, _round((y1 - y0) * grow))
        bx, by = _round(cx - w / 2.0), _round(cy - h / 2.0)
        return BBox(bx, by, bx + w, by + h)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 128
    height: int = 128
    num_frames: int = 60
    objects: tuple[ObjectSpec, ...] = ()
    keep_fraction: float = 0.1
    seed: int = 0
    clip_id: str = "clip000"

    def __post_init__(self):
        FrameSize(self.width, self.height)
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")
        for obj in self.objects:
            if area(clip(BBox(*obj.box), self.size)) <= 0:
                raise ValueError(f"initial box {obj.box} is outside the frame")

    @property
    def size(self) -> FrameSize:
        return FrameSize(self.width, self.height)


@dataclass
class SynthClip:
    config: SynthConfig
    frames: list[Frame]
    tracks: dict[int, dict[int, BBox]]  # object id -> frame -> clipped box
    classes: dict[int, int]  # object id -> class
    seeds: list[Seed]
    seed_tracks: dict[int, int] = field(default_factory=dict)  # seed id -> object id

    @property
    def clip_id(self) -> str:
        return self.config.clip_id

    def action_clip(self) -> ActionClip:
        return ActionClip(self.clip_id, self.frames, list(self.seeds))

    def gt_boxes(self, frame: int) -> list[tuple[int, BBox]]:
        return [(self.classes[t], boxes[frame]) for t, boxes in sorted(self.tracks.items()) if frame in boxes]

    def gt_set(self) -> dict[str, list[tuple[int, BBox]]]:
        return {image_id(self.clip_id, k): self.gt_boxes(k) for k in range(self.config.num_frames)}


def object_track(config: SynthConfig, obj_id: int) -> dict[int, BBox]:
    """Clipped boxes of one object for every frame where it is visible."""
    spec = config.objects[obj_id]
    out = {}
    for k in range(config.num_frames):
        b = clip(spec.box_at(k), config.size)
        if area(b) > 0:
            out[k] = b
    return out


def true_consecutive_iou(config: SynthConfig, obj_id: int) -> list[float]:
    """IoU of the object's boxes on frames k and k+1; 0 where it is absent."""
    if not 0 <= obj_id < len(config.objects):
        raise ValueError(f"no object {obj_id}")
    track = object_track(config, obj_id)
    return [
        iou(track[k], track[k + 1]) if k in track and k + 1 in track else 0.0
        for k in range(config.num_frames - 1)
    ]


def _texture(rng: SplitMix64) -> np.ndarray:
    return 0.1 + 0.8 * rng.uniform(TEXTURE_CELLS * TEXTURE_CELLS).reshape(TEXTURE_CELLS, TEXTURE_CELLS)


def _paint(canvas: np.ndarray, texture: np.ndarray, box: BBox) -> None:
    x0, y0, x1, y1 = (int(v) for v in box.as_tuple())
    h, w = y1 - y0, x1 - x0
    rows = (np.arange(h) * TEXTURE_CELLS) // h
    cols = (np.arange(w) * TEXTURE_CELLS) // w
    patch = texture[rows[:, None], cols[None, :]]
    H, W = canvas.shape
    cy0, cy1, cx0, cx1 = max(y0, 0), min(y1, H), max(x0, 0), min(x1, W)
    if cy1 > cy0 and cx1 > cx0:
        canvas[cy0:cy1, cx0:cx1] = patch[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0]


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Snap intensities to the 8-bit grid so frames survive a PGM round trip exactly."""
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def generate_clip(config: SynthConfig) -> SynthClip:
    rng = SplitMix64(config.seed)
    textures = [_texture(rng) for _ in config.objects]
    tracks = {t: object_track(config, t) for t in range(len(config.objects))}
    classes = {t: obj.cls for t, obj in enumerate(config.objects)}

    seeds: list[Seed] = []
    seed_tracks: dict[int, int] = {}
    for t in range(len(config.objects)):
        present = sorted(tracks[t])
        if not present:
            continue
        draws = rng.uniform(len(present))
        keep = [k for k, u in zip(present, draws) if u < config.keep_fraction]
        if not keep:
            keep = [present[min(int(rng.uniform1() * len(present)), len(present) - 1)]]
        for k in keep:
            seed_tracks[len(seeds)] = t
            seeds.append(Seed(k, classes[t], tracks[t][k], len(seeds)))
    seeds.sort(key=lambda s: (s.frame, s.cls, s.seed_id))

    amp = NOISE_SIGMA * math.sqrt(3.0)  # uniform noise with the requested std
    frames = []
    for k in range(config.num_frames):
        noise = rng.uniform(config.width * config.height).reshape(config.height, config.width)
        canvas = BACKGROUND + amp * (2.0 * noise - 1.0)
        for t, obj in enumerate(config.objects):
            if k in tracks[t]:
                _paint(canvas, textures[t], obj.box_at(k))
        frames.append(Frame(quantize(canvas), k))
    return SynthClip(config, frames, tracks, classes, seeds, seed_tracks)


def random_config(
    seed: int,
    *,
    width: int = 128,
    height: int = 128,
    num_frames: int = 60,
    num_objects: int = 3,
    num_classes: Optional[int] = None,
    max_speed: float = 2.0,
    min_size: int = 16,
    max_size: int = 32,
    keep_fraction: float = 0.1,
    motion: str = "linear",
    stay_inside: bool = True,
    clip_id: Optional[str] = None,
) -> SynthConfig:
    """Draw object sizes, classes, positions and velocities from the seed.

    With ``stay_inside`` the speed is capped so the whole trajectory fits in
    the frame. Uses a generator seeded with ``seed ^ 0x5EED``, independent of
    the one ``generate_clip`` uses for pixels.
    """
    rng = SplitMix64(seed ^ 0x5EED)
    num_classes = num_classes or max(1, num_objects)
    span = max(num_frames - 1, 1)
    objects = []
    for i in range(num_objects):
        w = min_size + int(rng.uniform1() * (max_size - min_size + 1))
        h = min_size + int(rng.uniform1() * (max_size - min_size + 1))
        w, h = min(w, width), min(h, height)
        amp = (0.0, 0.0)
        if motion == "sinusoidal":
            amp = (rng.uniform1() * 0.25 * (width - w), rng.uniform1() * 0.25 * (height - h))
        vel, start = [], []
        for extent, size, a in ((width, w, amp[0]), (height, h, amp[1])):
            room = extent - size - 2.0 * a
            vmax = min(max_speed, room / span) if stay_inside else max_speed
            v = (2.0 * rng.uniform1() - 1.0) * max(vmax, 0.0)
            if stay_inside:
                lo, hi = a + max(0.0, -v * span), extent - size - a - max(0.0, v * span)
            else:
                lo, hi = 0.0, float(extent - size)
            vel.append(v)
            start.append(lo + rng.uniform1() * max(hi - lo, 0.0))
        cls = 1 + i % num_classes
        box = (start[0], start[1], start[0] + w, start[1] + h)
        objects.append(ObjectSpec(cls, box, (vel[0], vel[1]), motion, amp, period=max(4.0, num_frames / 2.0)))
    return SynthConfig(
        width=width,
        height=height,
        num_frames=num_frames,
        objects=tuple(objects),
        keep_fraction=keep_fraction,
        seed=seed,
        clip_id=clip_id or f"clip{seed:03d}",
    )
