"""Joint training of the shared extractor, the encoder/decoder bank and the head.

Every step samples one bank member uniformly, runs both observers through the
same extractor parameters, sends the cooperative features through that
member, aligns and sums them into the ego grid and back-propagates the
ego-side detection loss into every component.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .detect import GroundTruth, yolo_loss
from .evalkit import EvalReport, evaluate
from .fusion import AlignmentMode, place, place_backward
from .model import CoopModel
from .pipeline import View, detect_frame, make_view, remote_offset
from .simworld import Frame

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 6
    batch_size: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    bank: tuple[int, ...] = (2, 4)
    mode: str = "tma"
    preset: str = "tiny"
    seed: int = 0
    max_steps: int | None = None
    remote_drop: float = 0.0
    val_iou: float = 0.7
    workers: int = 1
    recalibrate_bn: bool = True

    def __post_init__(self):
        self.bank = tuple(self.bank)
        if not self.bank:
            raise ValueError("bank must not be empty")
        if list(self.bank) != sorted(set(self.bank)):
            raise ValueError("bank channel counts must be strictly ascending")
        AlignmentMode(self.mode)
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.remote_drop <= 1.0:
            raise ValueError("remote_drop must be in [0, 1]")


@dataclass
class StepRecord:
    step: int
    epoch: int
    c_t: int
    loss: float


@dataclass
class TrainReport:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    member_loss: dict[int, list[float]] = field(default_factory=dict)
    validation: EvalReport | None = None

    def selection_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for s in self.steps:
            counts[s.c_t] = counts.get(s.c_t, 0) + 1
        return counts

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "epoch", "c_t", "loss"])
        for s in self.steps:
            w.writerow([s.step, s.epoch, s.c_t, repr(s.loss)])
        return buf.getvalue()


@dataclass
class Sample:
    ego: View
    coop: View
    offset: tuple[int, int]
    truth: list[GroundTruth]


@dataclass
class Batch:
    ego: np.ndarray  # (B, 3, H, W)
    coop: np.ndarray
    offsets: list[tuple[int, int]]
    origins: list[tuple[float, float]]
    truth: list[list[GroundTruth]]
    remote: np.ndarray  # (B,) bool, False where the remote map is dropped

    @classmethod
    def of(cls, samples: Sequence[Sample], remote: np.ndarray | None = None) -> "Batch":
        n = len(samples)
        return cls(
            np.stack([s.ego.image for s in samples]),
            np.stack([s.coop.image for s in samples]),
            [s.offset for s in samples],
            [s.ego.origin for s in samples],
            [s.truth for s in samples],
            np.ones(n, dtype=bool) if remote is None else remote,
        )

    def astype(self, dtype) -> "Batch":
        return Batch(self.ego.astype(dtype), self.coop.astype(dtype), self.offsets, self.origins,
                     self.truth, self.remote)


def make_sample(frame: Frame, grid, k: int, mode) -> Sample:
    s = frame.scene
    ego = make_view(frame.ego_cloud, s.ego, grid, k, mode)
    coop = make_view(frame.coop_cloud, s.coop, grid, k, mode)
    return Sample(ego, coop, remote_offset(ego, coop, s.ego, s.coop, grid, k, mode), list(frame.ground_truth))


def _sample_job(args):
    return make_sample(*args)


def prepare_samples(frames: Sequence[Frame], grid, k: int, mode, workers: int = 1) -> list[Sample]:
    jobs = [(f, grid, k, AlignmentMode(mode)) for f in frames]
    if workers <= 1 or len(jobs) < 2:
        return [make_sample(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sample_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def loss_and_grads(model: CoopModel, batch: Batch, c_t: int, track_stats: bool = True,
                   with_grads: bool = True):
    """Mean per-sample detection loss of the fused pipeline and gradients for every tensor.

    Gradient keys follow ``CoopModel.tensors()``. Members of the bank other than
    ``c_t`` receive no entry.
    """
    enc, dec = model.bank.pair(c_t)
    n = batch.ego.shape[0]
    x = np.concatenate([batch.ego, batch.coop])
    fec_acts = model.fec.forward(x, "train", track_stats)
    feats = fec_acts.output
    f_ego, f_coop = feats[:n], feats[n:]
    dims = f_ego.shape[2:]
    enc_acts = enc.forward(f_coop, "train", track_stats)
    dec_acts = dec.forward(enc_acts.output, "train", track_stats)
    decoded = dec_acts.output
    aligned = np.stack([place(decoded[i], batch.offsets[i], dims) if batch.remote[i]
                        else np.zeros_like(f_ego[i]) for i in range(n)])
    fused = f_ego + aligned
    head_acts = model.head.forward(fused, "train", track_stats)
    raw = head_acts.output
    total = 0.0
    g_raw = np.zeros(raw.shape, dtype=np.float64)
    for i in range(n):
        out = yolo_loss(raw[i].astype(np.float64), batch.truth[i], model.head_spec, batch.origins[i])
        total += out.loss
        g_raw[i] = out.grad
    loss = total / n
    if not with_grads:
        return loss, {}
    g_raw = (g_raw / n).astype(raw.dtype)

    grads: dict[str, np.ndarray] = {}
    g_fused, g = model.head.backward(head_acts, g_raw)
    grads.update({f"head.{k}": v for k, v in g.items()})
    g_dec = np.stack([place_backward(g_fused[i], batch.offsets[i], decoded.shape[2:]) if batch.remote[i]
                      else np.zeros_like(decoded[i]) for i in range(n)])
    g_enc, g = dec.backward(dec_acts, g_dec)
    grads.update({f"dec{c_t}.{k}": v for k, v in g.items()})
    g_coop, g = enc.backward(enc_acts, g_enc)
    grads.update({f"enc{c_t}.{k}": v for k, v in g.items()})
    # one extractor, two observers: both halves of the batch feed the same gradient
    _, g = model.fec.backward(fec_acts, np.concatenate([g_fused, g_coop]))
    grads.update({f"fec.{k}": v for k, v in g.items()})
    return loss, grads


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update of the entries of ``params`` that have a gradient."""
        for name in sorted(grads):
            g = grads[name]
            p = params[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            t = self.t[name] = self.t.get(name, 0) + 1
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def train_step(model: CoopModel, batch: Batch, optimizer: Adam, rng: np.random.Generator,
               c_t: int | None = None) -> tuple[float, int]:
    """One optimisation step; returns (loss, bank member used)."""
    counts = model.bank.channel_counts
    member = counts[int(rng.integers(len(counts)))] if c_t is None else c_t
    loss, grads = loss_and_grads(model, batch, member)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} with c_t={member}")
    optimizer.update(model.tensors(), grads)
    model.touch()
    return loss, member


def recalibrate_bn(model: CoopModel, samples: Sequence[Sample], batch_size: int) -> int:
    """Replace every running statistic by the plain mean of train-mode batch statistics.

    One pass over ``samples`` in order; bank members take turns batch by batch
    so each member's encoder and decoder see an equal share. The exponential
    averages kept during training trail the weights by a few dozen steps,
    which at these batch sizes makes eval-mode outputs drift from train-mode
    ones. Returns the number of batches used.
    """
    for net in model.networks().values():
        net.reset_stats()
    counts = model.bank.channel_counts
    seen = {name: 0 for name in model.networks()}

    def run(name, net, x):
        seen[name] += 1
        return net.forward(x, "train", True, momentum=(seen[name] - 1) / seen[name]).output

    batches = 0
    for j, start in enumerate(range(0, len(samples) - batch_size + 1, batch_size)):
        batch = Batch.of(samples[start:start + batch_size])
        c_t = counts[j % len(counts)]
        enc, dec = model.bank.pair(c_t)
        n = batch.ego.shape[0]
        feats = run("fec", model.fec, np.concatenate([batch.ego, batch.coop]))
        f_ego = feats[:n]
        decoded = run(f"dec{c_t}", dec, run(f"enc{c_t}", enc, feats[n:]))
        dims = f_ego.shape[2:]
        fused = f_ego + np.stack([place(decoded[i], batch.offsets[i], dims) for i in range(n)])
        run("head", model.head, fused)
        batches += 1
    return batches


def batch_loss(model: CoopModel, batch: Batch, c_t: int) -> float:
    """Loss with batch statistics but without touching running stats or parameters."""
    return loss_and_grads(model, batch, c_t, track_stats=False, with_grads=False)[0]


def validate(model: CoopModel, frames: Sequence[Frame], iou_threshold: float = 0.7,
             mode=None, budget: int | None = None) -> EvalReport:
    budget = budget if budget is not None else 1 << 40
    pairs = []
    for f in frames:
        res = detect_frame(model, f.ego_cloud, f.scene.ego, f.coop_cloud, f.scene.coop, budget,
                           mode=mode, frame_id=f.index)
        pairs.append((res.detections, f.ground_truth))
    return evaluate(pairs, iou_threshold)


def train(frames: Sequence[Frame], config: TrainConfig, val_frames: Sequence[Frame] | None = None,
          model: CoopModel | None = None) -> tuple[CoopModel, TrainReport]:
    """Train on ``frames``; returns the model and a per-step report."""
    if val_frames:
        overlap = {id(f) for f in frames} & {id(f) for f in val_frames}
        if overlap:
            raise ValueError("training and validation frames overlap")
    root = np.random.SeedSequence(config.seed)
    init_seed, order_ss, select_ss, drop_ss = root.spawn(4)
    if model is None:
        model = CoopModel.build(config.preset, config.bank, seed=int(init_seed.generate_state(1)[0]),
                                mode=config.mode)
    samples = prepare_samples(frames, model.grid, model.k, config.mode, config.workers)
    order_rng = np.random.default_rng(order_ss)
    select_rng = np.random.default_rng(select_ss)
    drop_rng = np.random.default_rng(drop_ss)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    report = TrainReport(member_loss={c: [] for c in model.bank.channel_counts})
    step = 0
    for epoch in range(config.epochs):
        perm = order_rng.permutation(len(samples))
        losses = []
        for start in range(0, len(perm) - config.batch_size + 1, config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            chosen = [samples[i] for i in perm[start:start + config.batch_size]]
            remote = drop_rng.random(len(chosen)) >= config.remote_drop
            loss, member = train_step(model, Batch.of(chosen, remote), opt, select_rng)
            step += 1
            losses.append(loss)
            report.steps.append(StepRecord(step, epoch, member, loss))
            report.member_loss[member].append(loss)
        if losses:
            report.epoch_loss.append(float(np.mean(losses)))
            log.info("epoch %d: mean loss %.4f over %d steps", epoch, report.epoch_loss[-1], len(losses))
    if config.recalibrate_bn:
        recalibrate_bn(model, samples, config.batch_size)
    if val_frames:
        report.validation = validate(model, val_frames, config.val_iou)
    return model, report


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["bank"] = list(config.bank)
    return d
