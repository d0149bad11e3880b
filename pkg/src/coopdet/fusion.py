"""Global translation alignment of a received feature map and summation fusion."""

from __future__ import annotations

import enum
import math

import numpy as np

from .codec import FeatureMap
from .sensing import GridSpec, Pose2D


class AlignmentMode(str, enum.Enum):
    TMA = "tma"
    NMA = "nma"


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def _overlap(offset: int, src: int, dst: int) -> tuple[int, int, int]:
    """(dst_start, src_start, length) of a src row placed at ``offset`` in dst."""
    d0 = max(offset, 0)
    s0 = d0 - offset
    n = min(dst - d0, src - s0)
    return d0, s0, max(n, 0)


def place(data: np.ndarray, offset: tuple[int, int], dims: tuple[int, int]) -> np.ndarray:
    """Copy (..., h, w) ``data`` into zeros of spatial ``dims`` at (dx, dy) fixels."""
    dx, dy = offset
    out = np.zeros(data.shape[:-2] + tuple(dims), dtype=data.dtype)
    r0, sr, nr = _overlap(dy, data.shape[-2], dims[0])
    c0, sc, nc = _overlap(dx, data.shape[-1], dims[1])
    if nr and nc:
        out[..., r0:r0 + nr, c0:c0 + nc] = data[..., sr:sr + nr, sc:sc + nc]
    return out


def place_backward(grad: np.ndarray, offset: tuple[int, int], src_dims: tuple[int, int]) -> np.ndarray:
    """Adjoint of ``place``: gradient w.r.t. the unplaced source."""
    dx, dy = offset
    out = np.zeros(grad.shape[:-2] + tuple(src_dims), dtype=grad.dtype)
    r0, sr, nr = _overlap(dy, src_dims[0], grad.shape[-2])
    c0, sc, nc = _overlap(dx, src_dims[1], grad.shape[-1])
    if nr and nc:
        out[..., sr:sr + nr, sc:sc + nc] = grad[..., r0:r0 + nr, c0:c0 + nc]
    return out


def tma_offset(remote_origin: tuple[int, int], ego_origin: tuple[int, int]) -> tuple[int, int]:
    return (remote_origin[0] - ego_origin[0], remote_origin[1] - ego_origin[1])


def nma_offset(remote_pose: Pose2D, ego_pose: Pose2D, grid: GridSpec, k: int) -> tuple[int, int]:
    scale = grid.resolution / k
    return (round_half_away((remote_pose.x - ego_pose.x) * scale),
            round_half_away((remote_pose.y - ego_pose.y) * scale))


def align_tma(remote: FeatureMap, ego_origin: tuple[int, int], ego_dims: tuple[int, int]) -> FeatureMap:
    """Place ``remote`` into the ego fixel grid; offsets are exact integers."""
    if remote.fixel_origin is None:
        raise ValueError("remote feature map carries no fixel origin; it was not MOD-aligned")
    offset = tma_offset(remote.fixel_origin, ego_origin)
    return FeatureMap(place(remote.data, offset, ego_dims), tuple(ego_origin))


def align_nma(remote: FeatureMap, remote_pose: Pose2D, ego_pose: Pose2D, grid: GridSpec, k: int,
              ego_dims: tuple[int, int] | None = None) -> FeatureMap:
    """Ablation path: offset from the pose difference rounded to whole fixels."""
    dims = ego_dims or (remote.height, remote.width)
    offset = nma_offset(remote_pose, ego_pose, grid, k)
    return FeatureMap(place(remote.data, offset, dims), None)


def fuse(ego: FeatureMap, aligned_remote: FeatureMap) -> FeatureMap:
    if ego.data.shape != aligned_remote.data.shape:
        raise ValueError(f"cannot fuse {ego.data.shape} with {aligned_remote.data.shape}")
    return FeatureMap(ego.data + aligned_remote.data, ego.fixel_origin)
