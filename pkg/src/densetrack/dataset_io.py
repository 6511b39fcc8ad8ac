"""File formats.

Sparse seeds (CSV, header required)::

    clip_id,frame_index,class_id,x0,y0,x1,y1

Dense labels (JSON)::

    {"format": "densetrack-dense", "format_version": 1,
     "params": {...},
     "clips": [{"clip_id": str, "num_frames": int,
                "labels": [{"frame": int, "class": int, "box": [x0, y0, x1, y1],
                            "score": float, "source": "original"|"forward"|"backward",
                            "seed": int}, ...]}, ...]}

Detections (JSON)::

    {"format": "densetrack-detections", "format_version": 1,
     "detections": [{"image_id": str, "class": int, "box": [...], "score": float,
                     "model": int}, ...]}

Ground truth (JSON)::

    {"format": "densetrack-gt", "format_version": 1,
     "images": [{"image_id": str, "boxes": [{"class": int, "box": [...]}, ...]}, ...]}

Frames are binary PGM (P5, maxval 255), one directory per clip, ordered by
the integer value of the file stem. All floats are written with four
decimals; writers are byte-deterministic and replace files atomically.
"""
from __future__ import annotations

import csv
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .densify import ORIGINAL, FORWARD, BACKWARD, DenseClip, PseudoLabel, Seed
from .ensemble import Detection
from .geometry import BBox
from .tracker import Frame

FORMAT_VERSION = 1
SPARSE_COLUMNS = ("clip_id", "frame_index", "class_id", "x0", "y0", "x1", "y1")


class DatasetError(Exception):
    """Any problem with an input or output file."""


class MissingFileError(DatasetError):
    pass


class ParseError(DatasetError):
    pass


class InvalidBoxError(DatasetError):
    pass


class VersionError(DatasetError):
    pass


class FrameError(DatasetError):
    pass


def _f4(x: float) -> str:
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def q4(x: float) -> float:
    """The value a four-decimal writer round trips to."""
    return float(_f4(x))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _box_json(b: BBox) -> str:
    return "[" + ", ".join(_f4(v) for v in b.as_tuple()) + "]"


def _load_json(path, expected_format: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{path}: no such file")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != expected_format:
        raise ParseError(f"{path}: expected a {expected_format!r} document")
    version = doc.get("format_version")
    if not isinstance(version, int):
        raise ParseError(f"{path}: missing format_version")
    if version > FORMAT_VERSION:
        raise VersionError(f"{path}: format_version {version} is newer than supported ({FORMAT_VERSION})")
    return doc


def _parse_box(raw, where: str) -> BBox:
    try:
        vals = [float(v) for v in raw]
        if len(vals) != 4:
            raise ValueError
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: box must be four numbers, got {raw!r}") from exc
    try:
        return BBox(*vals)
    except ValueError as exc:
        raise InvalidBoxError(f"{where}: {exc}") from exc


# --- sparse seeds ---------------------------------------------------------

@dataclass
class SparseClip:
    clip_id: str
    seeds: list[Seed]


def read_sparse(path) -> list[SparseClip]:
    """Read seed annotations grouped by clip (clip ids sorted, seeds frame-sorted).

    Seed ids are assigned per clip in file order.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{path}: no such file")
    clips: dict[str, list[tuple[int, int, BBox]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}:1: missing header")
        if tuple(h.strip() for h in header) != SPARSE_COLUMNS:
            raise ParseError(f"{path}:1: expected header {','.join(SPARSE_COLUMNS)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(SPARSE_COLUMNS):
                raise ParseError(f"{path}:{line}: expected {len(SPARSE_COLUMNS)} fields, got {len(row)}")
            clip_id = row[0].strip()
            try:
                frame, cls = int(row[1]), int(row[2])
                coords = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{line}: {exc}") from exc
            if frame < 0:
                raise ParseError(f"{path}:{line}: negative frame_index {frame}")
            if cls < 1:
                raise ParseError(f"{path}:{line}: class_id must be >= 1")
            try:
                box = BBox(*coords)
            except ValueError as exc:
                raise InvalidBoxError(f"{path}:{line}: {exc}") from exc
            clips.setdefault(clip_id, []).append((frame, cls, box))
    out = []
    for clip_id in sorted(clips):
        rows = clips[clip_id]
        seeds = [Seed(f, c, b, i) for i, (f, c, b) in enumerate(rows)]
        seeds.sort(key=lambda s: (s.frame, s.seed_id))
        out.append(SparseClip(clip_id, seeds))
    return out


def write_sparse(clips: Iterable[SparseClip], path) -> None:
    lines = [",".join(SPARSE_COLUMNS)]
    for c in sorted(clips, key=lambda c: c.clip_id):
        for s in sorted(c.seeds, key=lambda s: (s.frame, s.seed_id)):
            lines.append(",".join([c.clip_id, str(s.frame), str(s.cls)] + [_f4(v) for v in s.box.as_tuple()]))
    atomic_write_text(path, "\n".join(lines) + "\n")


# --- dense labels ---------------------------------------------------------

def _params_json(params: Mapping) -> str:
    return json.dumps(params, sort_keys=True)


def dense_to_text(clips: Sequence[DenseClip], params: Mapping) -> str:
    parts = [
        "{",
        '  "format": "densetrack-dense",',
        f'  "format_version": {FORMAT_VERSION},',
        f'  "params": {_params_json(params)},',
        '  "clips": [',
    ]
    clip_texts = []
    for c in sorted(clips, key=lambda c: c.clip_id):
        rows = [
            f'      {{"frame": {p.frame}, "class": {p.cls}, "box": {_box_json(p.box)}, '
            f'"score": {_f4(p.score)}, "source": "{p.source}", "seed": {p.seed_id}}}'
            for p in sorted(c.labels, key=PseudoLabel.sort_key)
        ]
        body = ",\n".join(rows)
        clip_texts.append(
            f'    {{"clip_id": {json.dumps(c.clip_id)}, "num_frames": {c.num_frames}, "labels": ['
            + (f"\n{body}\n    " if rows else "")
            + "]}"
        )
    parts.append(",\n".join(clip_texts))
    parts.append("  ]")
    parts.append("}")
    return "\n".join(parts) + "\n"


def write_dense(clips: Sequence[DenseClip], params: Mapping, path) -> None:
    atomic_write_text(path, dense_to_text(clips, params))


def read_dense(path) -> tuple[list[DenseClip], dict]:
    doc = _load_json(path, "densetrack-dense")
    clips = []
    try:
        for c in doc["clips"]:
            labels = []
            for k, lab in enumerate(c["labels"]):
                where = f"{path}: clip {c['clip_id']} label {k}"
                if lab["source"] not in (ORIGINAL, FORWARD, BACKWARD):
                    raise ParseError(f"{where}: unknown source {lab['source']!r}")
                labels.append(
                    PseudoLabel(int(lab["frame"]), int(lab["class"]), _parse_box(lab["box"], where),
                                float(lab["score"]), lab["source"], int(lab["seed"]))
                )
            clips.append(DenseClip(c["clip_id"], int(c["num_frames"]), labels))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed dense file: {exc!r}") from exc
    return clips, doc.get("params", {})


def image_id(clip_id: str, frame: int) -> str:
    """Evaluation image id of one clip frame."""
    return f"{clip_id}/{frame:06d}"


def dense_to_detections(clips: Sequence[DenseClip]) -> list[Detection]:
    return [
        Detection(p.box, p.cls, p.score, 0, image_id(c.clip_id, p.frame))
        for c in clips
        for p in c.labels
    ]


# --- detections / ground truth -------------------------------------------

def detections_to_text(dets: Sequence[Detection]) -> str:
    rows = [
        f'    {{"image_id": {json.dumps(d.image_id)}, "class": {d.cls}, "box": {_box_json(d.box)}, '
        f'"score": {_f4(d.score)}, "model": {d.model}}}'
        for d in dets
    ]
    body = ",\n".join(rows)
    return (
        '{\n  "format": "densetrack-detections",\n'
        f'  "format_version": {FORMAT_VERSION},\n'
        '  "detections": [' + (f"\n{body}\n  " if rows else "") + "]\n}\n"
    )


def write_detections(dets: Sequence[Detection], path) -> None:
    atomic_write_text(path, detections_to_text(dets))


def read_detections(path) -> list[Detection]:
    """Read a detection file; a dense label file is accepted too."""
    p = Path(path)
    if p.is_file():
        try:
            fmt = json.loads(p.read_text(encoding="utf-8")).get("format")
        except (json.JSONDecodeError, AttributeError, UnicodeDecodeError):
            fmt = None
        if fmt == "densetrack-dense":
            return dense_to_detections(read_dense(p)[0])
    doc = _load_json(path, "densetrack-detections")
    out = []
    try:
        for k, d in enumerate(doc["detections"]):
            where = f"{path}: detection {k}"
            try:
                out.append(Detection(_parse_box(d["box"], where), int(d["class"]), float(d["score"]),
                                     int(d.get("model", 0)), str(d.get("image_id", ""))))
            except ValueError as exc:
                raise ParseError(f"{where}: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed detection file: {exc!r}") from exc
    return out


def gt_to_text(gts: Mapping[str, Sequence[tuple[int, BBox]]]) -> str:
    images = []
    for img in sorted(gts):
        boxes = ", ".join(f'{{"class": {c}, "box": {_box_json(b)}}}' for c, b in gts[img])
        images.append(f'    {{"image_id": {json.dumps(img)}, "boxes": [{boxes}]}}')
    body = ",\n".join(images)
    return (
        '{\n  "format": "densetrack-gt",\n'
        f'  "format_version": {FORMAT_VERSION},\n'
        '  "images": [' + (f"\n{body}\n  " if images else "") + "]\n}\n"
    )


def write_gt(gts: Mapping[str, Sequence[tuple[int, BBox]]], path) -> None:
    atomic_write_text(path, gt_to_text(gts))


def read_gt(path) -> dict[str, list[tuple[int, BBox]]]:
    doc = _load_json(path, "densetrack-gt")
    out: dict[str, list[tuple[int, BBox]]] = {}
    try:
        for img in doc["images"]:
            where = f"{path}: image {img['image_id']}"
            out.setdefault(str(img["image_id"]), []).extend(
                (int(b["class"]), _parse_box(b["box"], where)) for b in img["boxes"]
            )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed ground-truth file: {exc!r}") from exc
    return out


# --- frames ---------------------------------------------------------------

def encode_pgm(pixels: np.ndarray) -> bytes:
    data = np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def write_pgm(path, pixels: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(pixels))


_PGM_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM as floats in [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FrameError(f"{path}: cannot read: {exc}") from exc
    m = _PGM_HEADER.match(raw)
    if not m:
        raise FrameError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FrameError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = raw[m.end():]
    if len(body) < w * h:
        raise FrameError(f"{path}: truncated pixel data")
    return np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w) / 255.0


def frame_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFileError(f"{directory}: not a directory")
    files = []
    for p in directory.iterdir():
        if p.suffix.lower() == ".pgm":
            if not p.stem.isdigit():
                raise FrameError(f"{p}: frame file names must be integers")
            files.append(p)
    return sorted(files, key=lambda p: int(p.stem))


def load_frames(directory) -> list[Frame]:
    files = frame_files(directory)
    if not files:
        raise FrameError(f"{directory}: no .pgm frames found")
    frames = []
    for k, p in enumerate(files):
        px = read_pgm(p)
        if frames and px.shape != frames[0].pixels.shape:
            raise FrameError(
                f"{p}: size {px.shape[1]}x{px.shape[0]} differs from "
                f"{frames[0].width}x{frames[0].height} of {files[0].name}"
            )
        frames.append(Frame(px, k))
    return frames


def write_frames(directory, frames: Sequence[Frame]) -> None:
    width = max(3, len(str(len(frames) - 1)))
    for k, f in enumerate(frames):
        write_pgm(Path(directory) / f"{k:0{width}d}.pgm", f.pixels)
