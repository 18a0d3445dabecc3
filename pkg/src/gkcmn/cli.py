"""``gkcmn`` command line.

Exit codes: 0 success, 2 parse error, 3 validation error, 4 divergence
(or a fit demo that did not converge), 5 gradient-check failure.
Machine-readable JSON goes to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checks import INSTANCES, run_gradchecks
from .demos import (
    DEFAULT_LR,
    demo_config,
    fit_heatmap_demo,
    fit_sizes_demo,
    fit_temporal_demo,
    synthetic_interval,
    synthetic_targets,
)
from .exceptions import DivergenceError, GKCMNError, ShapeError
from .io import FormatError, read_gktn, write_gktn, write_json
from .metrics import aggregate, result_from_boxes
from .pipeline import GKCMNWeights, ModelConfig, forward, load_weights, prediction_record, save_weights, synthetic_features
from .spatial import BoundingBox, encode_gaussian_targets
from .temporal import CandidateScheme, TemporalInterval, tiou

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5

_SAFE_ID = re.compile(r"^[A-Za-z0-9._-]+$")


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- annotation / prediction files --------------------------------------------


@dataclass
class VideoTube:
    id: str
    num_frames: int
    frame_height: int
    frame_width: int
    interval: TemporalInterval
    boxes: dict
    confidence: float | None = None


def _load_json(path) -> object:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CLIError(EXIT_PARSE, f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CLIError(EXIT_PARSE, f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _get(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise CLIError(EXIT_PARSE, f"{where}: missing field {key!r}")
    val = obj[key]
    ok = isinstance(val, kind) and not isinstance(val, bool)
    if not ok:
        raise CLIError(EXIT_PARSE, f"{where}.{key}: expected {getattr(kind, '__name__', 'number')}, got {type(val).__name__}")
    return val


_NUM = (int, float)


def parse_tube_file(path, prediction=False) -> list[VideoTube]:
    """Parse and validate an annotation (or prediction) file.

    Schema problems exit 2; broken invariants exit 3 naming the video.
    Predictions may carry boxes outside their tube (one per frame at most);
    annotations must cover exactly the tube frames.
    """
    doc = _load_json(path)
    videos = _get(doc, "videos", list, str(path))
    out, seen = [], set()
    for i, v in enumerate(videos):
        where = f"{path}: videos[{i}]"
        vid = _get(v, "id", str, where)
        where = f"{path}: video {vid!r}"
        T = _get(v, "num_frames", int, where)
        H = _get(v, "frame_height", int, where)
        W = _get(v, "frame_width", int, where)
        tube = _get(v, "tube", dict, where)
        ts = _get(tube, "t_start", _NUM if prediction else int, where + ".tube")
        te = _get(tube, "t_end", _NUM if prediction else int, where + ".tube")
        raw_boxes = _get(tube, "boxes", list, where + ".tube")
        conf = _get(tube, "confidence", _NUM, where + ".tube") if prediction and "confidence" in tube else None
        boxes = {}
        for j, b in enumerate(raw_boxes):
            bw = f"{where}.tube.boxes[{j}]"
            t = _get(b, "t", int, bw)
            coords = [float(_get(b, k, _NUM, bw)) for k in ("x1", "y1", "x2", "y2")]
            if t in boxes:
                raise CLIError(EXIT_INVALID, f"video {vid}: frame {t} has more than one box")
            if not coords[0] < coords[2] or not coords[1] < coords[3]:
                raise CLIError(EXIT_INVALID, f"video {vid}: box at frame {t} is degenerate")
            if coords[0] < 0 or coords[1] < 0 or coords[2] > W or coords[3] > H:
                raise CLIError(EXIT_INVALID, f"video {vid}: box at frame {t} leaves the {W}x{H} frame")
            boxes[t] = BoundingBox(*coords)
        if vid in seen:
            raise CLIError(EXIT_INVALID, f"video {vid}: duplicate id")
        seen.add(vid)
        if T < 1 or H < 1 or W < 1:
            raise CLIError(EXIT_INVALID, f"video {vid}: num_frames and frame size must be positive")
        if not (0 <= ts < te <= T):
            raise CLIError(EXIT_INVALID, f"video {vid}: tube [{ts}, {te}) must be nonempty inside [0, {T}]")
        interval = TemporalInterval(float(ts), float(te))
        frames = range(math.floor(ts), math.ceil(te))
        missing = [t for t in frames if t not in boxes]
        if missing:
            raise CLIError(EXIT_INVALID, f"video {vid}: no box for frames {missing}")
        if prediction:
            outside = [t for t in boxes if not 0 <= t < T]
        else:
            outside = [t for t in boxes if t not in frames]
        if outside:
            raise CLIError(EXIT_INVALID, f"video {vid}: boxes at frames {sorted(outside)} lie outside the tube")
        out.append(VideoTube(vid, T, H, W, interval, boxes, conf))
    return out


# -- commands -----------------------------------------------------------------


def _sigma_mode(text: str):
    if text == "adaptive":
        return None
    if text.startswith("fixed:"):
        try:
            val = float(text[6:])
        except ValueError:
            pass
        else:
            if val > 0 and math.isfinite(val):
                return val
    raise argparse.ArgumentTypeError(f"expected 'adaptive' or 'fixed:<positive number>', got {text!r}")


def cmd_encode_targets(args) -> int:
    videos = parse_tube_file(args.annotations)
    out = Path(args.out)
    written = []
    for v in videos:
        if not _SAFE_ID.match(v.id):
            raise CLIError(EXIT_INVALID, f"video {v.id}: id is not usable as a directory name")
        try:
            tg = encode_gaussian_targets(
                sorted(v.boxes.items()), v.frame_height, v.frame_width, args.map_size, args.sigma, v.num_frames
            )
        except GKCMNError as exc:
            raise CLIError(EXIT_INVALID, f"video {v.id}: {exc}") from exc
        d = out / v.id
        d.mkdir(parents=True, exist_ok=True)
        write_gktn(d / "heatmaps.gktn", tg.heatmaps)
        write_gktn(d / "size_targets.gktn", tg.size_targets)
        write_gktn(d / "mask.gktn", tg.annotation_mask)
        side = tg.sidecar()
        side.update(id=v.id, sigma_mode="adaptive" if args.sigma is None else "fixed")
        write_json(d / "targets.json", side)
        written.append({"id": v.id, "dir": str(d), "frames": tg.num_frames})
    _emit({"videos": written})
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = {v.id: v for v in parse_tube_file(args.gt)}
    pred = {v.id: v for v in parse_tube_file(args.pred, prediction=True)}
    missing_pred = sorted(set(gt) - set(pred))
    missing_gt = sorted(set(pred) - set(gt))
    if missing_pred or missing_gt:
        raise CLIError(EXIT_INVALID, f"video ids differ: missing from pred {missing_pred}, missing from gt {missing_gt}")
    results = []
    for vid, g in gt.items():
        p = pred[vid]
        interval = g.interval if args.temporal_gt else p.interval
        try:
            results.append(result_from_boxes(g.interval, g.boxes, interval, p.boxes))
        except GKCMNError as exc:
            raise CLIError(EXIT_INVALID, f"video {vid}: {exc}") from exc
    report = aggregate(results)
    if args.temporal_gt:
        # the override only isolates vIoU; tIoU still scores the predicted intervals
        t = [tiou(pred[vid].interval, g.interval) for vid, g in gt.items()]
        report = replace(report, m_tiou=float(np.mean(t)))
    _emit(report.to_dict())
    return EXIT_OK


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, TemporalInterval):
        return [obj.start, obj.end]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def cmd_fit_demo(args) -> int:
    try:
        cfg = demo_config(args.demo, args.steps, args.lr, args.seed, args.backtrack)
    except GKCMNError as exc:
        raise CLIError(EXIT_INVALID, str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.demo == "heatmap":
            res = fit_heatmap_demo(synthetic_targets(args.seed, num_frames=args.frames), cfg)
            keep = ("argmax_correct",)
        elif args.demo == "sizes":
            res = fit_sizes_demo(synthetic_targets(args.seed, num_frames=args.frames, sigma=None), cfg)
            keep = ("mean_giou",)
        else:
            gt = synthetic_interval(args.seed, args.sequence_length)
            res = fit_temporal_demo(gt, CandidateScheme.default(args.sequence_length), cfg)
            res.extra["gt"] = gt
            keep = ("tiou", "tube", "gt")
    except DivergenceError as exc:
        summary = {"demo": args.demo, "diverged": True, "step": exc.step, "reason": exc.reason, "converged": False}
        write_json(out / "summary.json", summary)
        _log(f"fit-demo {args.demo}: {exc}")
        _emit(summary)
        return EXIT_DIVERGED
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for k, loss in enumerate(res.loss_curve):
            w.writerow([k, repr(float(loss))])
    summary = {k: v for k, v in res.summary().items() if k in ("initial", "final", "steps", "converged") or k in keep}
    summary.update(demo=args.demo, seed=args.seed, learning_rate=cfg.learning_rate, diverged=False)
    summary = _json_safe(summary)
    write_json(out / "summary.json", summary)
    _emit(summary)
    if not res.converged:
        _log(f"fit-demo {args.demo}: did not converge")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise CLIError(EXIT_PARSE, "--trials must be >= 1")
    report = run_gradchecks(args.loss, args.trials, args.tol, args.seed)
    _emit(report)
    if not report["passed"]:
        w = report["worst"]
        _log(f"gradcheck {args.loss}: {report['failed_trials']}/{args.trials} trials failed; "
             f"worst trial {w['trial']} index {w['index']} rel error {w['max_rel_error']:.3e}")
        return EXIT_GRADCHECK
    return EXIT_OK


def _load_config(path) -> ModelConfig:
    if path is None:
        return ModelConfig()
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise CLIError(EXIT_PARSE, f"{path}: config must be a JSON object")
    try:
        return ModelConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise CLIError(EXIT_PARSE, f"{path}: {exc}") from exc


def _read_tensor(path: Path, name: str):
    try:
        return read_gktn(path)
    except OSError as exc:
        raise CLIError(EXIT_INVALID, f"{name}: cannot read {path}: {exc.strerror}") from exc
    except FormatError as exc:
        raise CLIError(EXIT_INVALID, f"{name}: {exc}") from exc


def cmd_forward(args) -> int:
    config = _load_config(args.config)
    feats = Path(args.features)
    visual = _read_tensor(feats / "visual.gktn", "visual")
    sentence = _read_tensor(feats / "sentence.gktn", "sentence")
    if visual.ndim != 4:
        raise CLIError(EXIT_INVALID, f"visual: expected (d, T, h, w), got shape {visual.shape}")
    if sentence.ndim != 2:
        raise CLIError(EXIT_INVALID, f"sentence: expected (N, D), got shape {sentence.shape}")
    try:
        if args.weights:
            weights = load_weights(args.weights)
        else:
            weights = GKCMNWeights.random(visual.shape[0], sentence.shape[1], config, seed=args.seed)
        out = forward(visual, sentence, weights, config)
    except FileNotFoundError as exc:
        raise CLIError(EXIT_INVALID, f"weights: {exc}") from exc
    except (GKCMNError, KeyError) as exc:
        raise CLIError(EXIT_INVALID, str(exc)) from exc
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    write_gktn(d / "heatmaps.gktn", out.spatial.heatmaps)
    write_gktn(d / "size_raw.gktn", out.spatial.size_raw)
    write_gktn(d / "scores.gktn", out.embedding.scores)
    write_gktn(d / "offsets.gktn", out.embedding.offsets)
    write_json(d / "prediction.json", {"videos": [prediction_record(args.id, out, config)]})
    _emit({"out": str(d), "tube": [out.tube.start, out.tube.end], "confidence": out.tube_confidence})
    return EXIT_OK


def cmd_init_weights(args) -> int:
    config = _load_config(args.config)
    w = GKCMNWeights.random(args.visual_dim, args.word_dim, config, seed=args.seed)
    _emit({"manifest": str(save_weights(w, args.out))})
    return EXIT_OK


def cmd_synth_features(args) -> int:
    visual, sentence = synthetic_features(args.seed, args.frames, args.height, args.width, args.visual_dim, args.words, args.word_dim)
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    write_gktn(d / "visual.gktn", visual)
    write_gktn(d / "sentence.gktn", sentence)
    _emit({"visual": list(visual.shape), "sentence": list(sentence.shape), "out": str(d)})
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gkcmn", description="Anchor-free spatio-temporal grounding toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("encode-targets", help="encode Gaussian heatmap/size/mask targets per video")
    s.add_argument("--annotations", required=True)
    s.add_argument("--map-size", type=int, default=16)
    s.add_argument("--sigma", type=_sigma_mode, default=None, help="adaptive (default) or fixed:X")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode_targets)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--temporal-gt", action="store_true", help="use gt intervals for vIoU")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("fit-demo", help="fit free parameters under one loss")
    s.add_argument("--demo", choices=sorted(DEFAULT_LR), required=True)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--sequence-length", type=int, default=32)
    s.add_argument("--backtrack", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_demo)

    s = sub.add_parser("gradcheck", help="finite-difference check of a loss gradient")
    s.add_argument("--loss", choices=sorted(INSTANCES), required=True)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("forward", help="run the network over GKTN feature tensors")
    s.add_argument("--features", required=True, help="directory with visual.gktn and sentence.gktn")
    s.add_argument("--weights", default=None, help="weights.json manifest; seeded random weights if omitted")
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--id", default="video0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("init-weights", help="write seeded random weights as a manifest")
    s.add_argument("--visual-dim", type=int, default=32)
    s.add_argument("--word-dim", type=int, default=32)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init_weights)

    s = sub.add_parser("synth-features", help="write random feature tensors for a forward pass")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--height", type=int, default=7)
    s.add_argument("--width", type=int, default=7)
    s.add_argument("--visual-dim", type=int, default=32)
    s.add_argument("--words", type=int, default=6)
    s.add_argument("--word-dim", type=int, default=32)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_features)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        _log(f"gkcmn {args.command}: {exc}")
        return exc.code
    except ShapeError as exc:
        _log(f"gkcmn {args.command}: {exc}")
        return EXIT_INVALID
