"""Frame-level glue: observer views, the transmit/receive path and detection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec
from .codec import ChannelModel, FeatureMap, NoFittingEncoder, Outcome
from .detect import Detection, decode_grid, nms
from .fusion import AlignmentMode, align_nma, align_tma, fuse, nma_offset, tma_offset
from .modalign import aligned_size, fixel_origin, pad_to_size
from .model import CoopModel
from .sensing import GridSpec, Pose2D, observe

EGO_ID, COOP_ID = 0, 1


@dataclass
class View:
    image: np.ndarray  # (3, H, W) float32
    origin: tuple[float, float]  # fixel coordinates of output cell (0, 0)
    aligned: bool  # origin lies on the global fixel lattice


def make_view(cloud: np.ndarray, pose: Pose2D, grid: GridSpec, k: int, mode: AlignmentMode) -> View:
    """BEV image of one observer, MOD-aligned to a fixed size under TMA."""
    bev = observe(cloud, pose, grid)
    if AlignmentMode(mode) is AlignmentMode.TMA:
        w, h = aligned_size(grid.width_px, k), aligned_size(grid.height_px, k)
        padded = pad_to_size(bev, k, w, h)
        fx = fixel_origin(padded.extent, k)
        return View(padded.chw(), fx.origin, True)
    return View(bev.chw(), (bev.extent.x0 / k, bev.extent.y0 / k), False)


def remote_offset(ego: View, remote: View, ego_pose: Pose2D, remote_pose: Pose2D,
                  grid: GridSpec, k: int, mode: AlignmentMode) -> tuple[int, int]:
    if AlignmentMode(mode) is AlignmentMode.TMA:
        return tma_offset(remote.origin, ego.origin)
    return nma_offset(remote_pose, ego_pose, grid, k)


@dataclass
class FrameResult:
    frame_id: int
    detections: list[Detection]
    c_t: int | None
    message_bytes: int
    outcome: str  # delivered | dropped | rejected | no_fitting_encoder
    fallback: bool = field(init=False)

    def __post_init__(self):
        self.fallback = self.outcome != Outcome.DELIVERED.value


def extract(model: CoopModel, view: View) -> FeatureMap:
    data = model.fec(view.image[None])[0]
    origin = tuple(int(v) for v in view.origin) if view.aligned else None
    return FeatureMap(data, origin)


def detect_frame(model: CoopModel, ego_cloud, ego_pose: Pose2D, coop_cloud, coop_pose: Pose2D,
                 budget: int, mode: AlignmentMode | str | None = None, frame_id: int = 0,
                 channel: ChannelModel | None = None, conf_threshold: float = 0.05,
                 nms_threshold: float = 0.5) -> FrameResult:
    """Full cooperative path for one frame as seen by the ego receiver.

    When no encoder fits ``budget`` or the channel loses the message, the
    received map is all zeros and detection runs on ego features alone.
    """
    mode = AlignmentMode(mode or model.mode)
    k = model.k
    ego_view = make_view(ego_cloud, ego_pose, model.grid, k, mode)
    ego_map = extract(model, ego_view)
    dims = (ego_map.height, ego_map.width)

    remote = None
    c_t, nbytes = None, 0
    try:
        c_t = codec.select_encoder(model.bank, budget, dims[0], dims[1])
    except NoFittingEncoder:
        outcome = "no_fitting_encoder"
    else:
        coop_view = make_view(coop_cloud, coop_pose, model.grid, k, mode)
        coop_map = extract(model, coop_view)
        wire = codec.serialize(codec.encode(coop_map, model.bank, c_t), coop_pose, COOP_ID, frame_id)
        nbytes = len(wire)
        channel = channel or ChannelModel(budget)
        result, delivered = channel.transmit(wire)
        outcome = result.value
        if delivered is not None:
            msg = codec.deserialize(delivered)
            decoded = codec.decode(msg, model.bank)
            if mode is AlignmentMode.TMA:
                remote = align_tma(decoded, ego_map.fixel_origin, dims)
            else:
                sender = Pose2D(*msg.pose)
                remote = align_nma(decoded, sender, ego_pose, model.grid, k, dims)
    if remote is None:
        remote = FeatureMap(np.zeros_like(ego_map.data), ego_map.fixel_origin)
    fused = fuse(ego_map, remote)
    raw = model.head(fused.data[None])[0]
    dets = nms(decode_grid(raw, ego_view.origin, model.head_spec, conf_threshold), nms_threshold)
    return FrameResult(frame_id, dets, c_t, nbytes, outcome)


def detect_single(model: CoopModel, ego_cloud, ego_pose: Pose2D, mode=None, frame_id: int = 0,
                  conf_threshold: float = 0.05, nms_threshold: float = 0.5) -> FrameResult:
    """Ego-only detection (the zero-map fallback, forced)."""
    return detect_frame(model, ego_cloud, ego_pose, None, ego_pose, budget=0, mode=mode, frame_id=frame_id,
                        conf_threshold=conf_threshold, nms_threshold=nms_threshold)
