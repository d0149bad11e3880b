"""Translation MOD-alignment of BEV extents onto the global fixel lattice.

A feature extractor with downsampling rate ``k`` maps each k x k block of
input pixels to one fixel. Zero-padding the image so that every extent bound
is a multiple of ``k`` makes fixel ``g`` cover global pixels [g*k, (g+1)*k)
for every observer, independent of where the observer stands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensing import BevImage, PixelExtent


@dataclass(frozen=True)
class PaddingSpec:
    p_l: int
    p_r: int
    p_t: int
    p_b: int
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("downsampling rate must be >= 1")
        for pad in (self.p_l, self.p_r, self.p_t, self.p_b):
            if not 0 <= pad < self.k:
                raise ValueError(f"pad {pad} outside [0, {self.k})")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.p_l, self.p_r, self.p_t, self.p_b)


@dataclass(frozen=True)
class FixelExtent:
    gx0: int
    gx1: int
    gy0: int
    gy1: int

    @property
    def width(self) -> int:
        return self.gx1 - self.gx0

    @property
    def height(self) -> int:
        return self.gy1 - self.gy0

    @property
    def origin(self) -> tuple[int, int]:
        return (self.gx0, self.gy0)


def _check_k(k: int) -> None:
    if int(k) != k or k < 1:
        raise ValueError(f"downsampling rate must be a positive integer, got {k}")


def mod_padding(extent: PixelExtent, k: int) -> PaddingSpec:
    """Left/right/top/bottom pads that make every bound of ``extent`` divisible by k.

    Python's ``%`` is already the nonnegative mathematical mod for int operands.
    """
    _check_k(k)
    return PaddingSpec(
        p_l=extent.x0 % k,
        p_r=(-extent.x1) % k,
        p_t=extent.y0 % k,
        p_b=(-extent.y1) % k,
        k=k,
    )


def padded_extent(extent: PixelExtent, pad: PaddingSpec) -> PixelExtent:
    return PixelExtent(extent.x0 - pad.p_l, extent.x1 + pad.p_r, extent.y0 - pad.p_t, extent.y1 + pad.p_b)


def apply_padding(img: BevImage, pad: PaddingSpec) -> BevImage:
    """Zero-pad ``img`` by ``pad``; the pad must have been computed for ``img.extent``."""
    if pad != mod_padding(img.extent, pad.k):
        raise ValueError(f"padding {pad} was not produced for extent {img.extent}")
    data = np.pad(img.data, ((pad.p_t, pad.p_b), (pad.p_l, pad.p_r), (0, 0)))
    return BevImage(padded_extent(img.extent, pad), data)


def pad_to_size(img: BevImage, k: int, width: int, height: int) -> BevImage:
    """MOD-align ``img`` and then extend right/bottom with whole k-blocks up to a fixed size.

    Used to batch observers whose aligned widths differ by one block; extra
    blocks are zeros and keep every bound on the lattice.
    """
    aligned = apply_padding(img, mod_padding(img.extent, k))
    ext = aligned.extent
    extra_w, extra_h = width - ext.width, height - ext.height
    if extra_w < 0 or extra_h < 0 or extra_w % k or extra_h % k:
        raise ValueError(f"cannot grow {ext.width}x{ext.height} to {width}x{height} in blocks of {k}")
    data = np.pad(aligned.data, ((0, extra_h), (0, extra_w), (0, 0)))
    return BevImage(PixelExtent(ext.x0, ext.x1 + extra_w, ext.y0, ext.y1 + extra_h), data)


def aligned_size(size: int, k: int) -> int:
    """Smallest lattice-aligned size that fits any placement of ``size`` pixels."""
    return -(-(size + k - 1) // k) * k


def mod_shift(img: BevImage, k: int) -> BevImage:
    """Fixed-size alternative to padding: shift content right/down by (p_l, p_t).

    The extent is rebased to the lattice-aligned origin; content pushed past the
    right and bottom edges is discarded.
    """
    pad = mod_padding(img.extent, k)
    h, w = img.data.shape[:2]
    out = np.zeros_like(img.data)
    out[pad.p_t:, pad.p_l:] = img.data[: h - pad.p_t, : w - pad.p_l]
    x0 = img.extent.x0 - pad.p_l
    y0 = img.extent.y0 - pad.p_t
    return BevImage(PixelExtent(x0, x0 + w, y0, y0 + h), out)


def mod_padding_3d(extent3, k: int) -> tuple[int, int, int, int, int, int]:
    """Per-axis (front, back) pads for three half-open ranges ((a0, a1), (b0, b1), (c0, c1))."""
    _check_k(k)
    pads: list[int] = []
    for lo, hi in extent3:
        pads.extend((lo % k, (-hi) % k))
    return tuple(pads)  # type: ignore[return-value]


def fixel_origin(padded: PixelExtent, k: int) -> FixelExtent:
    _check_k(k)
    bounds = (padded.x0, padded.x1, padded.y0, padded.y1)
    if any(b % k for b in bounds):
        raise ValueError(f"extent {padded} is not aligned to k={k}")
    return FixelExtent(*(b // k for b in bounds))
