"""Grid detection head: cell decoding, IoU, NMS and the YOLO-style loss.

Channel layout of a raw head output with B boxes and C classes::

    [tx, ty, tw, th, tc] * B, then C shared class logits

Box centre inside a cell is sigmoid(tx), sigmoid(ty); size is exp(tw), exp(th)
in fixel units; confidence is sigmoid(tc); class probabilities are
sigmoid(class logits).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

CLASS_NAMES = ("vehicle", "pedestrian")


@dataclass(frozen=True)
class HeadSpec:
    boxes_per_cell: int = 2
    class_count: int = 2
    fixel_size: float = 4 / 2.5  # meters per cell

    def __post_init__(self):
        if self.boxes_per_cell < 1 or self.class_count < 1:
            raise ValueError("need at least one box and one class")
        if not self.fixel_size > 0:
            raise ValueError("fixel_size must be positive")

    @property
    def channels(self) -> int:
        return self.boxes_per_cell * 5 + self.class_count


@dataclass(frozen=True)
class Detection:
    cls: int
    confidence: float
    cx: float
    cy: float
    w: float
    h: float

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class GroundTruth:
    cls: int
    cx: float
    cy: float
    w: float
    h: float

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Axis-aligned IoU of (cx, cy, w, h) boxes."""
    ax0, ax1 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay0, ay1 = a[1] - a[3] / 2, a[1] + a[3] / 2
    bx0, bx1 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by0, by1 = b[1] - b[3] / 2, b[1] + b[3] / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return float(inter / union)


def decode_grid(raw: np.ndarray, origin: Sequence[float], spec: HeadSpec,
                conf_threshold: float = 0.05) -> list[Detection]:
    """Turn a (channels, H, W) head output into detections in global meters.

    ``origin`` is the fixel coordinate of cell (0, 0); it may be fractional for
    grids that are not lattice aligned.
    """
    if raw.ndim != 3 or raw.shape[0] != spec.channels:
        raise ValueError(f"raw grid {raw.shape} does not have {spec.channels} channels")
    raw = raw.astype(np.float64)
    _, gh, gw = raw.shape
    nb = spec.boxes_per_cell
    cls_ids = raw[5 * nb:].argmax(axis=0)
    cols = np.arange(gw)[None, :]
    rows = np.arange(gh)[:, None]
    dets: list[Detection] = []
    for b in range(nb):
        tx, ty, tw, th, tc = raw[5 * b:5 * b + 5]
        conf = sigmoid(tc)
        keep = np.argwhere(conf >= conf_threshold)
        if not len(keep):
            continue
        cx = (origin[0] + cols + sigmoid(tx)) * spec.fixel_size
        cy = (origin[1] + rows + sigmoid(ty)) * spec.fixel_size
        w = np.exp(tw) * spec.fixel_size
        h = np.exp(th) * spec.fixel_size
        for r, c in keep:
            dets.append(Detection(int(cls_ids[r, c]), float(conf[r, c]), float(cx[r, c]), float(cy[r, c]),
                                  float(w[r, c]), float(h[r, c])))
    return dets


def encode_box(box: Sequence[float], origin: Sequence[float], spec: HeadSpec):
    """Inverse of the decoding rule: (cell_col, cell_row, tx, ty, tw, th) for a box in meters."""
    gx = box[0] / spec.fixel_size - origin[0]
    gy = box[1] / spec.fixel_size - origin[1]
    col, row = math.floor(gx), math.floor(gy)
    fx, fy = gx - col, gy - row
    if not (0.0 < fx < 1.0 and 0.0 < fy < 1.0):
        raise ValueError("box centre lies on a cell border and has no finite encoding")
    return col, row, logit(fx), logit(fy), math.log(box[2] / spec.fixel_size), math.log(box[3] / spec.fixel_size)


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy per-class suppression of boxes overlapping a kept box by >= threshold."""
    order = sorted(dets, key=lambda d: (-d.confidence, d.cls, d.cx, d.cy))
    kept: list[Detection] = []
    for d in order:
        if all(k.cls != d.cls or iou(k.box, d.box) < iou_threshold for k in kept):
            kept.append(d)
    return kept


class LossOutput(NamedTuple):
    loss: float
    grad: np.ndarray
    skipped: int


def yolo_loss(raw: np.ndarray, truth: Sequence[GroundTruth], spec: HeadSpec,
              origin: Sequence[float] = (0.0, 0.0), lambda_coord: float = 5.0,
              lambda_noobj: float = 0.5) -> LossOutput:
    """Sum-of-squares detection loss and its exact gradient w.r.t. ``raw``.

    Each target goes to the cell holding its centre; within the cell the
    predictor with the highest IoU (lowest index on ties) not already taken is
    responsible. Targets whose centre falls outside the grid are skipped.
    """
    if raw.ndim != 3 or raw.shape[0] != spec.channels:
        raise ValueError(f"raw grid {raw.shape} does not have {spec.channels} channels")
    nb, nc = spec.boxes_per_cell, spec.class_count
    _, gh, gw = raw.shape
    fs = spec.fixel_size
    conf_idx = [5 * b + 4 for b in range(nb)]
    sig_conf = sigmoid(raw[conf_idx])  # (B, H, W)
    responsible = np.zeros((nb, gh, gw), dtype=bool)
    grad = np.zeros_like(raw)
    loss = 0.0
    skipped = 0
    class_target: dict[tuple[int, int], np.ndarray] = {}

    for gt in truth:
        gx = gt.cx / fs - origin[0]
        gy = gt.cy / fs - origin[1]
        col, row = math.floor(gx), math.floor(gy)
        if not (0 <= col < gw and 0 <= row < gh) or not 0 <= gt.cls < nc:
            skipped += 1
            continue
        tgt_box = (gx - col, gy - row, gt.w / fs, gt.h / fs)
        best, best_iou = -1, -1.0
        for b in range(nb):
            if responsible[b, row, col]:
                continue
            tx, ty, tw, th = raw[5 * b:5 * b + 4, row, col]
            pred = (float(sigmoid(tx)), float(sigmoid(ty)), math.exp(tw), math.exp(th))
            v = iou(pred, tgt_box)
            if v > best_iou:
                best, best_iou = b, v
        if best < 0:
            skipped += 1
            continue
        responsible[best, row, col] = True
        b = best
        tx, ty, tw, th, tc = raw[5 * b:5 * b + 5, row, col]
        sx, sy = sigmoid(tx), sigmoid(ty)
        ew, eh = math.exp(tw / 2), math.exp(th / 2)
        ex, ey = sx - tgt_box[0], sy - tgt_box[1]
        ew_err, eh_err = ew - math.sqrt(tgt_box[2]), eh - math.sqrt(tgt_box[3])
        sc = sig_conf[b, row, col]
        loss += lambda_coord * (ex * ex + ey * ey + ew_err * ew_err + eh_err * eh_err)
        loss += (sc - 1.0) ** 2
        grad[5 * b, row, col] += lambda_coord * 2 * ex * sx * (1 - sx)
        grad[5 * b + 1, row, col] += lambda_coord * 2 * ey * sy * (1 - sy)
        grad[5 * b + 2, row, col] += lambda_coord * 2 * ew_err * 0.5 * ew
        grad[5 * b + 3, row, col] += lambda_coord * 2 * eh_err * 0.5 * eh
        grad[5 * b + 4, row, col] += 2 * (sc - 1.0) * sc * (1 - sc)
        onehot = class_target.setdefault((row, col), np.zeros(nc))
        onehot[gt.cls] = 1.0

    noobj = ~responsible
    loss += lambda_noobj * float(np.sum(np.where(noobj, sig_conf ** 2, 0.0)))
    g_noobj = lambda_noobj * 2 * sig_conf * sig_conf * (1 - sig_conf)
    for b in range(nb):
        grad[conf_idx[b]] += np.where(noobj[b], g_noobj[b], 0.0)

    for (row, col), onehot in class_target.items():
        sp = sigmoid(raw[5 * nb:, row, col])
        err = sp - onehot
        loss += float(np.sum(err * err))
        grad[5 * nb:, row, col] += 2 * err * sp * (1 - sp)

    if skipped:
        log.warning("yolo_loss skipped %d target(s) outside the grid or without a free predictor", skipped)
    return LossOutput(float(loss), grad, skipped)
