"""Pose math, rotation alignment and BEV rasterization onto the global pixel lattice.

Conventions used throughout the package:

* global frame: x east, y north, z up with the sensor at z=0
* pixel index of a coordinate ``m`` meters is ``floor(m * resolution)``
* image row = global y pixel index - y0, column = global x pixel index - x0 (no flip)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# absorbs float noise such as (x - 40) * 10.4 landing a hair below an integer
_PIXEL_EPS = 1e-6

HEIGHT_BINS: tuple[tuple[float, float], ...] = ((-1.0, 1.0), (1.0, 3.0), (3.0, 5.0))
DENSITY_CLIP = 255


def normalize_angle(angle: float) -> float:
    """Wrap an angle to [-pi, pi); in-range values are returned untouched."""
    if -math.pi <= angle < math.pi:
        return angle
    a = math.fmod(angle + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    a -= math.pi
    # fmod can land exactly on +pi after the shift
    return -math.pi if a >= math.pi else a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise ValueError(f"pose must be finite, got {self}")
        object.__setattr__(self, "heading", normalize_angle(self.heading))


@dataclass(frozen=True)
class GridSpec:
    """BEV raster geometry: ``resolution`` pixels per meter over +-``range`` meters."""

    resolution: float = 10.4
    range: float = 40.0
    width_px: int | None = None
    height_px: int | None = None

    def __post_init__(self):
        if not self.resolution > 0 or not self.range > 0:
            raise ValueError("resolution and range must be positive")
        side = math.ceil(2.0 * self.range * self.resolution - _PIXEL_EPS)
        if self.width_px is None:
            object.__setattr__(self, "width_px", side)
        if self.height_px is None:
            object.__setattr__(self, "height_px", side)

    @classmethod
    def tiny(cls) -> "GridSpec":
        # 64x64 px over +-12.8 m
        return cls(resolution=2.5, range=12.8)


@dataclass(frozen=True)
class PixelExtent:
    """Half-open global pixel box [x0, x1) x [y0, y1)."""

    x0: int
    x1: int
    y0: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass
class BevImage:
    extent: PixelExtent
    data: np.ndarray  # (height, width, 3)

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"BEV data must be HxWx3, got {self.data.shape}")
        if self.data.shape[:2] != (self.extent.height, self.extent.width):
            raise ValueError(f"data {self.data.shape[:2]} does not match extent {self.extent}")

    def chw(self) -> np.ndarray:
        """Channel-first float32 copy for the network."""
        return np.ascontiguousarray(self.data.transpose(2, 0, 1), dtype=np.float32)


def pixel_index(meters, resolution: float):
    """Global pixel index containing the coordinate(s) ``meters``."""
    scaled = np.asarray(meters, dtype=np.float64) * resolution
    return np.floor(scaled + _PIXEL_EPS).astype(np.int64)


def rotate_to_global(cloud: np.ndarray, heading: float) -> np.ndarray:
    """Rotate sensor-frame points counterclockwise by ``heading``; z is untouched."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(heading), math.sin(heading)
    out = cloud.copy()
    out[:, 0] = c * cloud[:, 0] - s * cloud[:, 1]
    out[:, 1] = s * cloud[:, 0] + c * cloud[:, 1]
    return out


def to_sensor_frame(points_global: np.ndarray, pose: Pose2D) -> np.ndarray:
    """Inverse of ``rotate_to_global`` followed by translation by the pose."""
    pts = np.asarray(points_global, dtype=np.float64).reshape(-1, 3).copy()
    pts[:, 0] -= pose.x
    pts[:, 1] -= pose.y
    return rotate_to_global(pts, -pose.heading)


def world_anchor(pose: Pose2D, spec: GridSpec) -> PixelExtent:
    x0 = int(pixel_index(pose.x - spec.range, spec.resolution))
    y0 = int(pixel_index(pose.y - spec.range, spec.resolution))
    return PixelExtent(x0, x0 + spec.width_px, y0, y0 + spec.height_px)


def height_bin(z) -> np.ndarray:
    """Channel index per height, -1 for heights outside every bin."""
    z = np.asarray(z, dtype=np.float64)
    out = np.full(z.shape, -1, dtype=np.int64)
    for i, (lo, hi) in enumerate(HEIGHT_BINS):
        out[(z >= lo) & (z < hi)] = i
    return out


def bev_counts(points_abs: np.ndarray, extent: PixelExtent, resolution: float) -> np.ndarray:
    """Unclipped per-cell point counts, shape (height, width, 3)."""
    pts = np.asarray(points_abs, dtype=np.float64).reshape(-1, 3)
    counts = np.zeros((extent.height, extent.width, 3), dtype=np.int64)
    if len(pts) == 0:
        return counts
    cols = pixel_index(pts[:, 0], resolution) - extent.x0
    rows = pixel_index(pts[:, 1], resolution) - extent.y0
    chans = height_bin(pts[:, 2])
    keep = (chans >= 0) & (cols >= 0) & (cols < extent.width) & (rows >= 0) & (rows < extent.height)
    np.add.at(counts, (rows[keep], cols[keep], chans[keep]), 1)
    return counts


def rasterize(cloud_global: np.ndarray, pose: Pose2D, extent: PixelExtent, spec: GridSpec) -> BevImage:
    """Project a rotation-aligned cloud into a 3-channel density image.

    Absolute positions are the rotated points translated by the pose. Counts are
    clipped at 255 and scaled to [0, 1].
    """
    pts = np.asarray(cloud_global, dtype=np.float64).reshape(-1, 3).copy()
    pts[:, 0] += pose.x
    pts[:, 1] += pose.y
    counts = bev_counts(pts, extent, spec.resolution)
    data = np.minimum(counts, DENSITY_CLIP).astype(np.float64) / DENSITY_CLIP
    return BevImage(extent, data)


def observe(cloud_sensor: np.ndarray, pose: Pose2D, spec: GridSpec) -> BevImage:
    """Sensor-frame cloud to a BEV image anchored at the observer's own extent."""
    return rasterize(rotate_to_global(cloud_sensor, pose.heading), pose, world_anchor(pose, spec), spec)
