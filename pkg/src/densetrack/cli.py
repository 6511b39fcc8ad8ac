"""Command-line entry point.

Subcommands: ``synth``, ``densify``, ``ensemble``, ``eval``, ``fcos-targets``.
Every option can also come from a ``--config`` file of ``key = value`` lines
(keys are the long option names, dashes or underscores); flags win over the
file. Exit codes: 0 ok, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import dataset_io as dio
from .densify import ActionClip, DensifyParams, densify_clip
from .ensemble import EnsembleParams, joint_nms
from .evaluation import evaluate
from .fcos import GridPosition, assign_targets, detection_loss, grid_positions
from .geometry import BBox
from .synth import generate_clip, random_config
from .tracker import GroundTruthLinkTracker, NCCTracker

log = logging.getLogger("densetrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# per-subcommand defaults; the config file and flags are layered on top
DEFAULTS = {
    "synth": dict(clips=4, frames=60, objects=3, keep=0.1, seed=0, width=128, height=128,
                  max_speed=2.0, motion="linear"),
    "densify": dict(tracker="ncc", radius=None, gt=None,
                    parallel=os.cpu_count() or 1),
    "ensemble": dict(nms_iou=0.5, top_k=300, score_floor=0.0),
    "eval": dict(thresholds="0.05,0.5,0.75", out=None),
    "fcos-targets": dict(out=None),
}
# options that must be given somewhere (flag or config file)
REQUIRED = {
    "synth": ["out"],
    "densify": ["input", "frames", "out", "rho1", "rho2", "tau_dup"],
    "ensemble": ["det", "out"],
    "eval": ["det", "gt"],
    "fcos-targets": ["input"],
}
UNIT_RANGE = {"rho1", "rho2", "tau_dup", "nms_iou", "score_floor", "keep"}
# value types for config-file entries, which arrive as strings
TYPES = {
    "synth": dict(clips=int, frames=int, objects=int, seed=int, width=int, height=int,
                  keep=float, max_speed=float),
    "densify": dict(rho1=float, rho2=float, tau_dup=float, radius=int, parallel=int),
    "ensemble": dict(nms_iou=float, top_k=int, score_floor=float, det=str.split),
    "eval": {},
    "fcos-targets": {},
}


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = _Parser(prog="densetrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=S)
        sp.add_argument("--config", help="key = value file used as the base layer")
        return sp

    sp = add("synth", "generate synthetic benchmark clips")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--clips", type=int)
    sp.add_argument("--frames", type=int, help="frames per clip")
    sp.add_argument("--objects", type=int, help="objects per clip")
    sp.add_argument("--keep", type=float, help="sparse keep fraction in (0, 1]")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--max-speed", type=float, dest="max_speed")
    sp.add_argument("--motion", choices=["linear", "sinusoidal"])

    sp = add("densify", "sparse seeds -> dense labels by bidirectional tracking")
    sp.add_argument("--in", dest="input", help="sparse seed CSV")
    sp.add_argument("--frames", help="directory holding one frame directory per clip")
    sp.add_argument("--out", help="dense label JSON")
    sp.add_argument("--rho1", type=float, help="minimum tracking score")
    sp.add_argument("--rho2", type=float, help="minimum IoU between consecutive boxes")
    sp.add_argument("--tau-dup", type=float, dest="tau_dup", help="duplicate-merge IoU")
    sp.add_argument("--tracker", choices=["ncc", "gt"])
    sp.add_argument("--radius", type=int, help="NCC search radius in pixels")
    sp.add_argument("--gt", help="ground-truth JSON (required by --tracker gt)")
    sp.add_argument("--parallel", type=int, help="worker threads")

    sp = add("ensemble", "fuse detection files with joint NMS")
    sp.add_argument("--det", nargs="+", help="detection JSON files, one per model")
    sp.add_argument("--out", help="fused detection JSON")
    sp.add_argument("--nms-iou", type=float, dest="nms_iou")
    sp.add_argument("--top-k", type=int, dest="top_k")
    sp.add_argument("--score-floor", type=float, dest="score_floor")

    sp = add("eval", "average precision at several IoU thresholds")
    sp.add_argument("--det", help="detection or dense label JSON")
    sp.add_argument("--gt", help="ground-truth JSON")
    sp.add_argument("--thresholds", help="comma-separated IoU thresholds")
    sp.add_argument("--out", help="write the report as JSON here too")

    sp = add("fcos-targets", "anchor-free targets and loss for a JSON problem")
    sp.add_argument("--in", dest="input", help="problem JSON")
    sp.add_argument("--out", help="result JSON (stdout when omitted)")
    return p


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    out = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "in":
            key = "input"
        out[key] = value
    return out


def _coerce(command, key, value):
    conv = TYPES[command].get(key)
    if conv is None or not isinstance(value, str):
        return value
    try:
        return conv(value)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {value!r}") from None


def _flag(key: str) -> str:
    return "in" if key == "input" else key.replace("_", "-")


def resolve(command: str, ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    if getattr(ns, "config", None):
        file_cfg = read_config(ns.config)
        known = set(cfg) | set(REQUIRED[command])
        unknown = sorted(set(file_cfg) - known)
        if unknown:
            raise UsageError(f"{ns.config}: unknown keys for {command}: {', '.join(unknown)}")
        cfg.update(file_cfg)
    cfg.update(flags)
    cfg = {k: _coerce(command, k, v) for k, v in cfg.items()}
    missing = [k for k in REQUIRED[command] if cfg.get(k) in (None, [], "")]
    if missing:
        raise UsageError(f"{command}: missing required option(s): {', '.join('--' + _flag(m) for m in missing)}")
    for k in UNIT_RANGE & set(cfg):
        if not 0.0 <= cfg[k] <= 1.0:
            raise UsageError(f"{k} must lie in [0, 1], got {cfg[k]}")
    if command == "synth" and cfg["keep"] <= 0.0:
        raise UsageError("keep must lie in (0, 1]")
    if cfg.get("parallel") is not None and cfg["parallel"] < 1:
        raise UsageError("parallel must be >= 1")
    if command == "densify" and cfg["tracker"] == "gt" and not cfg.get("gt"):
        raise UsageError("--tracker gt needs --gt")
    if command == "eval":
        try:
            ts = tuple(float(t) for t in str(cfg["thresholds"]).split(",") if t.strip())
        except ValueError:
            raise UsageError(f"bad thresholds {cfg['thresholds']!r}") from None
        if not ts or any(not 0.0 < t <= 1.0 for t in ts):
            raise UsageError("thresholds must lie in (0, 1]")
        cfg["thresholds"] = ts
    return cfg


def _require_paths(*paths):
    for p in paths:
        if not Path(p).exists():
            raise dio.MissingFileError(f"{p}: no such file or directory")


# --- subcommands ----------------------------------------------------------

def cmd_synth(cfg) -> int:
    out = Path(cfg["out"])
    sparse, gts = [], {}
    for c in range(cfg["clips"]):
        conf = random_config(
            cfg["seed"] + c, width=cfg["width"], height=cfg["height"], num_frames=cfg["frames"],
            num_objects=cfg["objects"], max_speed=cfg["max_speed"], keep_fraction=cfg["keep"],
            motion=cfg["motion"], clip_id=f"clip{c:03d}",
        )
        sc = generate_clip(conf)
        dio.write_frames(out / "frames" / sc.clip_id, sc.frames)
        sparse.append(dio.SparseClip(sc.clip_id, sc.seeds))
        gts.update(sc.gt_set())
        log.info("clip %s: %d frames, %d objects, %d seeds", sc.clip_id, len(sc.frames),
                 len(conf.objects), len(sc.seeds))
    dio.write_sparse(sparse, out / "sparse.csv")
    dio.write_gt(gts, out / "gt.json")
    dio.atomic_write_text(out / "synth.json", json.dumps({k: cfg[k] for k in sorted(DEFAULTS["synth"])},
                                                         sort_keys=True, indent=2) + "\n")
    print(f"wrote {cfg['clips']} clips to {out}")
    return EXIT_OK


def _gt_by_clip(gt_path) -> dict[str, dict[int, list[BBox]]]:
    out: dict[str, dict[int, list[BBox]]] = {}
    for img, boxes in dio.read_gt(gt_path).items():
        clip_id, _, frame = img.rpartition("/")
        if not frame.isdigit():
            raise dio.ParseError(f"{gt_path}: image id {img!r} is not <clip>/<frame>")
        out.setdefault(clip_id, {})[int(frame)] = [b for _, b in boxes]
    return out


def cmd_densify(cfg) -> int:
    _require_paths(cfg["input"], cfg["frames"])
    params = DensifyParams(cfg["rho1"], cfg["rho2"], cfg["tau_dup"])
    sparse = dio.read_sparse(cfg["input"])
    gt = _gt_by_clip(cfg["gt"]) if cfg["tracker"] == "gt" else None
    dense = []
    with ThreadPoolExecutor(max_workers=cfg["parallel"]) as pool:
        for sc in sparse:
            frames = dio.load_frames(Path(cfg["frames"]) / sc.clip_id)
            try:
                clip_ = ActionClip(sc.clip_id, frames, sc.seeds)
            except ValueError as exc:
                raise dio.ParseError(f"{cfg['input']}: {exc}") from exc
            if gt is None:
                factory = lambda radius=cfg["radius"]: NCCTracker(radius=radius)  # noqa: E731
            else:
                boxes = gt.get(sc.clip_id, {})
                factory = lambda boxes=boxes: GroundTruthLinkTracker(boxes)  # noqa: E731
            result = densify_clip(clip_, factory, params, executor=pool if cfg["parallel"] > 1 else None)
            log.info("clip %s: %d seeds -> %d labels", sc.clip_id, len(sc.seeds), len(result.labels))
            dense.append(result)
    header = {
        "rho1": params.rho1, "rho2": params.rho2, "tau_dup": params.tau_dup,
        "tracker": cfg["tracker"], "radius": cfg["radius"],
    }
    dio.write_dense(dense, header, cfg["out"])
    n = sum(len(d.labels) for d in dense)
    print(f"wrote {n} labels for {len(dense)} clips to {cfg['out']}")
    return EXIT_OK


def cmd_ensemble(cfg) -> int:
    _require_paths(*cfg["det"])
    params = EnsembleParams(cfg["nms_iou"], cfg["top_k"], cfg["score_floor"])
    per_model = [dio.read_detections(p) for p in cfg["det"]]
    fused = joint_nms(per_model, params)
    dio.write_detections(fused, cfg["out"])
    print(f"fused {sum(map(len, per_model))} detections from {len(per_model)} models into {len(fused)}")
    return EXIT_OK


def cmd_eval(cfg) -> int:
    _require_paths(cfg["det"], cfg["gt"])
    dets = dio.read_detections(cfg["det"])
    gts = dio.read_gt(cfg["gt"])
    report = evaluate(dets, gts, cfg["thresholds"])
    print(report.table())
    if cfg.get("out"):
        dio.atomic_write_text(cfg["out"], json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def fcos_problem(doc: dict) -> dict:
    """Solve one ``fcos-targets`` problem description."""
    try:
        if "grid" in doc:
            g = doc["grid"]
            positions = grid_positions(int(g["width"]), int(g["height"]), int(g["stride"]))
        else:
            positions = [GridPosition(float(u), float(v)) for u, v in doc["positions"]]
        gts = [(BBox.from_seq(b["box"]), int(b["class"])) for b in doc["boxes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise dio.ParseError(f"malformed fcos problem: {exc!r}") from exc
    targets = assign_targets(positions, gts)
    result = {
        "targets": [
            {"position": [p.u, p.v], "class": t.cls, "ltrb": list(t.ltrb) if t.ltrb else None}
            for p, t in zip(positions, targets)
        ],
        "num_positive": sum(t.positive for t in targets),
        "loss": None,
    }
    if "scores" in doc:
        regs = doc.get("regressions") or [None] * len(targets)
        try:
            result["loss"] = detection_loss(doc["scores"], regs, targets, positions)
        except (ValueError, TypeError) as exc:
            raise dio.ParseError(f"malformed fcos predictions: {exc}") from exc
    return result


def cmd_fcos(cfg) -> int:
    _require_paths(cfg["input"])
    try:
        doc = json.loads(Path(cfg["input"]).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise dio.ParseError(f"{cfg['input']}: invalid JSON: {exc}") from exc
    text = json.dumps(fcos_problem(doc), indent=2) + "\n"
    if cfg.get("out"):
        dio.atomic_write_text(cfg["out"], text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "densify": cmd_densify,
    "ensemble": cmd_ensemble,
    "eval": cmd_eval,
    "fcos-targets": cmd_fcos,
}


def setup_logging() -> None:
    level = os.environ.get("DENSETRACK_LOG", "info").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def run(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if not ns.command:
            raise UsageError(parser.format_usage().strip())
        cfg = resolve(ns.command, ns)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.info("%s config: %s", ns.command, json.dumps(cfg, sort_keys=True, default=str))
    try:
        return COMMANDS[ns.command](cfg)
    except dio.DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
