"""Detection matching, precision-recall curves and all-points-interpolated AP."""

from __future__ import annotations

import csv
import io
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .detect import CLASS_NAMES, Detection, GroundTruth, iou


@dataclass(frozen=True)
class PRPoint:
    recall: float
    precision: float
    confidence: float


@dataclass
class ClassResult:
    ap: float
    tp: int
    fp: int
    fn: int
    gt_count: int
    curve: list[PRPoint] = field(default_factory=list)


@dataclass
class EvalReport:
    classes: dict[int, ClassResult]
    iou_threshold: float
    model: str = ""
    mode: str = ""

    def ap(self, cls: int) -> float:
        return self.classes[cls].ap


def match(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.7):
    """Greedy matching within one frame.

    Returns ``(ordered, flags)``: the detections sorted by descending confidence
    (ties keep input order) and a True/False (TP/FP) flag for each.
    """
    ordered = sorted(dets, key=lambda d: -d.confidence)
    taken = [False] * len(gts)
    flags = []
    for d in ordered:
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(gts):
            if taken[j] or g.cls != d.cls:
                continue
            v = iou(d.box, g.box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
        flags.append(best >= 0)
    return ordered, flags


def pr_curve(flags: Sequence[bool], gt_count: int, confidences: Sequence[float] | None = None) -> list[PRPoint]:
    confidences = confidences if confidences is not None else [float("nan")] * len(flags)
    tp = fp = 0
    out = []
    for f, c in zip(flags, confidences):
        tp += bool(f)
        fp += not f
        recall = tp / gt_count if gt_count else 0.0
        out.append(PRPoint(recall, tp / (tp + fp), c))
    return out


def average_precision(flags: Sequence[bool], gt_count: int) -> float:
    """AP = sum_i (r_i - r_{i-1}) * max_{j >= i} p_j over the confidence-sorted flags.

    Recall only moves at true positives, by exactly 1 / gt_count, so the sum is
    the mean of the interpolated precision at the TP ranks. It is evaluated in
    rationals and rounded once, which makes the result independent of
    summation order.
    """
    if gt_count < 0:
        raise ValueError("gt_count must be >= 0")
    if gt_count == 0:
        return 1.0 if not flags else 0.0
    precision = []
    tp = 0
    for i, f in enumerate(flags):
        tp += bool(f)
        precision.append(Fraction(tp, i + 1))
    total = Fraction(0)
    running = Fraction(0)
    for i in range(len(flags) - 1, -1, -1):
        running = max(running, precision[i])
        if flags[i]:
            total += running
    return float(total / gt_count)


def evaluate(frames: Iterable[tuple[Sequence[Detection], Sequence[GroundTruth]]],
             iou_threshold: float = 0.7, classes: Sequence[int] = (0, 1),
             model: str = "", mode: str = "") -> EvalReport:
    """Match per frame, then pool detections of each class across frames by confidence."""
    pooled: dict[int, list[tuple[float, int, bool]]] = {c: [] for c in classes}
    gt_counts = {c: 0 for c in classes}
    seq = 0
    for dets, gts in frames:
        for g in gts:
            if g.cls in gt_counts:
                gt_counts[g.cls] += 1
        ordered, flags = match(dets, gts, iou_threshold)
        for d, f in zip(ordered, flags):
            if d.cls in pooled:
                pooled[d.cls].append((d.confidence, seq, f))
                seq += 1
    results = {}
    for c in classes:
        rows = sorted(pooled[c], key=lambda r: (-r[0], r[1]))
        flags = [r[2] for r in rows]
        tp = sum(flags)
        results[c] = ClassResult(
            ap=average_precision(flags, gt_counts[c]),
            tp=tp, fp=len(flags) - tp, fn=gt_counts[c] - tp, gt_count=gt_counts[c],
            curve=pr_curve(flags, gt_counts[c], [r[0] for r in rows]),
        )
    return EvalReport(results, iou_threshold, model, mode)


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "mode", "class", "iou_threshold", "ap", "tp", "fp", "fn", "gt_count"])
    for c, r in sorted(report.classes.items()):
        w.writerow([report.model, report.mode, _name(c), repr(report.iou_threshold), repr(r.ap),
                    r.tp, r.fp, r.fn, r.gt_count])
    return buf.getvalue()


def pr_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "rank", "confidence", "precision", "recall"])
    for c, r in sorted(report.classes.items()):
        for i, pt in enumerate(r.curve):
            w.writerow([_name(c), i, repr(pt.confidence), repr(pt.precision), repr(pt.recall)])
    return buf.getvalue()


def compare(reports: Sequence[EvalReport]) -> str:
    """One row per (model, mode) with per-class AP, ordered by model name then mode."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "mode", "vehicle_ap", "pedestrian_ap"])
    for r in sorted(reports, key=lambda r: (r.model, r.mode)):
        veh = r.classes.get(0)
        ped = r.classes.get(1)
        w.writerow([r.model, r.mode, repr(veh.ap) if veh else "", repr(ped.ap) if ped else ""])
    return buf.getvalue()


def _name(c: int) -> str:
    return CLASS_NAMES[c] if 0 <= c < len(CLASS_NAMES) else str(c)
