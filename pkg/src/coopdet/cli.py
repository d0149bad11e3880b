"""Command-line entry point: gen, train, infer, eval, align, compare.

Failures print one JSON object on stderr, e.g.
``{"error": "data", "type": "MissingFile", "message": "..."}``, and exit with
2 (usage), 3 (data) or 4 (numeric).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from . import codec
from .detect import CLASS_NAMES, Detection
from .evalkit import EvalReport, compare, evaluate, pr_csv, report_csv
from .fusion import AlignmentMode
from .modalign import fixel_origin, mod_padding, padded_extent
from .model import CoopModel
from .neural.serialize import ModelFileError
from .pipeline import detect_frame
from .sensing import PixelExtent
from .simworld import DatasetError, SceneParams, generate_frames, read_dataset, write_dataset
from .train import NumericError, TrainConfig, config_dict, train

log = logging.getLogger("coopdet")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
SCHEMA_VERSION = 1

PRED_COLUMNS = ["frame_id", "class", "confidence", "cx", "cy", "w", "h", "c_t", "message_bytes", "fallback"]


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    """Training run document (JSON). Unknown keys are rejected."""

    schema_version: int = SCHEMA_VERSION
    preset: str = "tiny"
    bank: tuple[int, ...] = (2, 4)
    mode: str = "tma"
    seed: int = 0
    epochs: int = 6
    batch_size: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int | None = None
    remote_drop: float = 0.0
    val_iou: float = 0.7
    val_data: str | None = None

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise DataError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"config schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
        cfg = cls(**doc)
        cfg.bank = tuple(cfg.bank)
        if cfg.val_data is not None and base is not None:
            cfg.val_data = str((base / cfg.val_data).resolve()) if not Path(cfg.val_data).is_absolute() else cfg.val_data
        return cfg

    def train_config(self, workers: int = 1) -> TrainConfig:
        try:
            return TrainConfig(
                epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps, bank=self.bank, mode=self.mode,
                preset=self.preset, seed=self.seed, max_steps=self.max_steps, remote_drop=self.remote_drop,
                val_iou=self.val_iou, workers=workers,
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid config: {exc}") from None


def load_config(path: Path) -> RunConfig:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from None
    try:
        return RunConfig.from_dict(doc, path.parent)
    except TypeError as exc:
        raise DataError(f"invalid config: {exc}") from None


def _require_dir(path: Path, what: str) -> None:
    if not path.is_dir():
        raise DataError(f"{what} {path} is not a directory")


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise DataError(f"{what} {path} does not exist")


def _require_parent(path: Path) -> None:
    if not path.parent.is_dir():
        raise DataError(f"output directory {path.parent} does not exist")


# --------------------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    if args.scenes < 0:
        raise UsageError("--scenes must be >= 0")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise DataError(f"output directory {out} is not empty")
    params = SceneParams(occlusion=args.occlusion == "on")
    frames = generate_frames(args.seed, args.scenes, params, workers=args.workers)
    write_dataset(out, frames, args.seed, params, split=args.split)
    print(json.dumps({"frames": len(frames), "out": str(out)}))
    return 0


def cmd_train(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _require_dir(data, "dataset")
    cfg = RunConfig()
    if args.config:
        _require_file(Path(args.config), "config")
        cfg = load_config(Path(args.config))
    if cfg.val_data is not None:
        _require_dir(Path(cfg.val_data), "validation dataset")
    _require_parent(out)
    tcfg = cfg.train_config(args.workers)
    _, frames = read_dataset(data)
    val = read_dataset(cfg.val_data)[1] if cfg.val_data else None
    if not frames:
        raise DataError(f"dataset {data} has no frames")
    model, report = train(frames, tcfg, val)
    model.save(out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".csv")
    log_path.write_text(report.to_csv())
    summary = {"model": str(out), "log": str(log_path), "steps": len(report.steps),
               "final_loss": report.steps[-1].loss if report.steps else None,
               "selection_counts": {str(k): v for k, v in sorted(report.selection_counts().items())},
               "config": config_dict(tcfg)}
    if report.validation is not None:
        summary["validation_ap"] = {CLASS_NAMES[c]: r.ap for c, r in sorted(report.validation.classes.items())}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _infer_job(args):
    model_path, frame, budget, mode = args
    model = _load_model_cached(model_path)
    return detect_frame(model, frame.ego_cloud, frame.scene.ego, frame.coop_cloud, frame.scene.coop,
                        budget, mode=mode, frame_id=frame.index)


_MODEL_CACHE: dict[str, CoopModel] = {}


def _load_model_cached(path: str) -> CoopModel:
    if path not in _MODEL_CACHE:
        _MODEL_CACHE[path] = CoopModel.load(path)
    return _MODEL_CACHE[path]


def prediction_rows(result) -> list[list]:
    tail = [result.c_t if result.c_t is not None else "", result.message_bytes, int(result.fallback)]
    if not result.detections:
        return [[result.frame_id, "", "", "", "", "", ""] + tail]
    return [[result.frame_id, CLASS_NAMES[d.cls], repr(d.confidence), repr(d.cx), repr(d.cy),
             repr(d.w), repr(d.h)] + tail for d in result.detections]


def cmd_infer(args) -> int:
    model_path, data, out = Path(args.model), Path(args.data), Path(args.out)
    _require_file(model_path, "model")
    _require_dir(data, "dataset")
    _require_parent(out)
    if args.budget < 0:
        raise UsageError("--budget must be >= 0")
    model = CoopModel.load(model_path)
    _MODEL_CACHE[str(model_path)] = model
    _, frames = read_dataset(data)
    jobs = [(str(model_path), f, args.budget, args.mode) for f in frames]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_infer_job, jobs))
    else:
        results = [_infer_job(j) for j in jobs]
    results.sort(key=lambda r: r.frame_id)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PRED_COLUMNS)
    for r in results:
        w.writerows(prediction_rows(r))
    out.write_text(buf.getvalue())
    fallbacks = sum(r.fallback for r in results)
    print(json.dumps({"frames": len(results), "fallback_frames": fallbacks, "out": str(out)}))
    return 0


def read_predictions(path: Path) -> dict[int, list[Detection]]:
    """Parse an infer CSV into detections grouped by frame id."""
    dets: dict[int, list[Detection]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:7] != PRED_COLUMNS[:7]:
            raise DataError(f"{path}: header does not match the prediction schema")
        for lineno, row in enumerate(reader, start=2):
            try:
                fid = int(row["frame_id"])
                dets.setdefault(fid, [])
                if not row["class"]:
                    continue
                cls = CLASS_NAMES.index(row["class"])
                dets[fid].append(Detection(cls, float(row["confidence"]), float(row["cx"]), float(row["cy"]),
                                           float(row["w"]), float(row["h"])))
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction row ({exc})") from None
    return dets


def cmd_eval(args) -> int:
    pred, data, out = Path(args.pred), Path(args.data), Path(args.out)
    _require_file(pred, "predictions")
    _require_dir(data, "dataset")
    _require_parent(out)
    if not 0.0 < args.iou <= 1.0:
        raise UsageError("--iou must be in (0, 1]")
    dets = read_predictions(pred)
    _, frames = read_dataset(data)
    pairs = [(dets.get(f.index, []), f.ground_truth) for f in frames]
    report = evaluate(pairs, args.iou, model=args.name or pred.stem, mode=args.mode_label)
    out.write_text(report_csv(report))
    pr_path = Path(args.pr_out) if args.pr_out else out.with_name(out.stem + "_pr.csv")
    pr_path.write_text(pr_csv(report))
    print(json.dumps({"ap": {CLASS_NAMES[c]: r.ap for c, r in sorted(report.classes.items())},
                      "report": str(out), "pr": str(pr_path)}, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    reports = []
    for p in args.reports:
        path = Path(p)
        _require_file(path, "report")
        reports.append(_read_report(path))
    sys.stdout.write(compare(reports))
    return 0


def _read_report(path: Path) -> EvalReport:
    from .evalkit import ClassResult

    classes, model, mode, thr = {}, "", "", 0.0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                c = CLASS_NAMES.index(row["class"])
                classes[c] = ClassResult(float(row["ap"]), int(row["tp"]), int(row["fp"]), int(row["fn"]),
                                         int(row["gt_count"]))
                model, mode, thr = row["model"], row["mode"], float(row["iou_threshold"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: not an eval report ({exc})") from None
    return EvalReport(classes, thr, model, mode)


def parse_extent(text: str) -> PixelExtent:
    try:
        x0, y0, x1, y1 = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--extent expects four integers x0,y0,x1,y1, got {text!r}") from None
    if x1 <= x0 or y1 <= y0:
        raise UsageError("--extent needs x1 > x0 and y1 > y0")
    return PixelExtent(x0, x1, y0, y1)


def cmd_align(args) -> int:
    extent = parse_extent(args.extent)
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    pad = mod_padding(extent, args.k)
    origin = fixel_origin(padded_extent(extent, pad), args.k).origin
    print(f"p=({pad.p_l},{pad.p_r},{pad.p_t},{pad.p_b})")
    print(f"fixel origin ({origin[0]},{origin[1]})")
    return 0


# --------------------------------------------------------------------------- plumbing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coopdet", description="Cooperative BEV detection toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--occlusion", choices=("on", "off"), default="on")
    g.add_argument("--split", default="train")
    g.add_argument("--out", required=True)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a cooperative detector")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="per-step CSV (default: <out>.csv)")
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run detection under a bandwidth budget")
    i.add_argument("--model", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--budget", type=int, required=True, help="bytes per message")
    i.add_argument("--mode", choices=[m.value for m in AlignmentMode], default="tma")
    i.add_argument("--out", required=True)
    i.add_argument("--workers", type=int, default=1)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--iou", type=float, default=0.7)
    e.add_argument("--out", required=True)
    e.add_argument("--pr-out")
    e.add_argument("--name", help="model label for the report")
    e.add_argument("--mode-label", default="")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("align", help="print MOD padding and fixel origin for a pixel extent")
    a.add_argument("--extent", required=True, help="x0,y0,x1,y1")
    a.add_argument("--k", type=int, required=True)
    a.set_defaults(func=cmd_align)

    c = sub.add_parser("compare", help="merge eval reports into one table")
    c.add_argument("reports", nargs="+")
    c.set_defaults(func=cmd_compare)
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": msg}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: gen, train, infer, eval, align, compare")
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except NumericError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (DataError, DatasetError, ModelFileError, codec.CodecError, OSError, KeyError, json.JSONDecodeError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except FloatingPointError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
