import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopdet.modalign import (
    PaddingSpec, aligned_size, apply_padding, fixel_origin, mod_padding, mod_padding_3d, mod_shift,
    pad_to_size, padded_extent,
)
from coopdet.sensing import BevImage, PixelExtent

ks = st.sampled_from([1, 2, 4, 8, 16])


@st.composite
def extents(draw):
    x0 = draw(st.integers(-5000, 5000))
    y0 = draw(st.integers(-5000, 5000))
    return PixelExtent(x0, x0 + draw(st.integers(1, 900)), y0, y0 + draw(st.integers(1, 900)))


def test_worked_example_k16():
    ext = PixelExtent(5, 837, 16, 848)
    pad = mod_padding(ext, 16)
    assert pad.as_tuple() == (5, 11, 0, 0)
    assert fixel_origin(padded_extent(ext, pad), 16).origin == (0, 1)


def test_negative_bounds_use_mathematical_mod():
    pad = mod_padding(PixelExtent(-5, 3, -16, -1), 4)
    assert pad.as_tuple() == (3, 1, 0, 1)


def test_already_aligned_needs_no_padding():
    assert mod_padding(PixelExtent(-16, 32, 0, 16), 16).as_tuple() == (0, 0, 0, 0)


@given(extents(), ks)
def test_padding_properties(ext, k):
    pad = mod_padding(ext, k)
    assert all(0 <= p < k for p in pad.as_tuple())
    padded = padded_extent(ext, pad)
    assert all(b % k == 0 for b in (padded.x0, padded.x1, padded.y0, padded.y1))
    # minimal: any smaller pad on a side breaks alignment
    if pad.p_l:
        assert (ext.x0 - pad.p_l + 1) % k
    fx = fixel_origin(padded, k)
    assert fx.width * k == padded.width and fx.height * k == padded.height


@given(st.integers(-1000, 1000), st.integers(1, 300), ks)
def test_padding_3d_matches_2d(lo, span, k):
    pads = mod_padding_3d(((lo, lo + span), (lo, lo + span), (lo, lo + span)), k)
    assert pads[:2] == (lo % k, (-(lo + span)) % k)
    assert pads[:2] == pads[2:4] == pads[4:]


def test_padding_spec_validates():
    with pytest.raises(ValueError):
        PaddingSpec(4, 0, 0, 0, 4)
    with pytest.raises(ValueError):
        mod_padding(PixelExtent(0, 1, 0, 1), 0)


def test_fixel_origin_rejects_unaligned():
    with pytest.raises(ValueError):
        fixel_origin(PixelExtent(1, 8, 0, 8), 4)


def _img(ext, rng):
    return BevImage(ext, rng.random((ext.height, ext.width, 3)))


def test_apply_padding_keeps_global_positions():
    rng = np.random.default_rng(0)
    img = _img(PixelExtent(3, 10, -2, 5), rng)
    out = apply_padding(img, mod_padding(img.extent, 4))
    assert out.extent == PixelExtent(0, 12, -4, 8)
    # pixel at global (3, -2) moves to row 2, col 3
    assert np.array_equal(out.data[2, 3], img.data[0, 0])
    assert out.data[:2].sum() == 0 and out.data[:, :3].sum() == 0


def test_apply_padding_rejects_foreign_spec():
    img = BevImage(PixelExtent(3, 10, 0, 4), np.zeros((4, 7, 3)))
    with pytest.raises(ValueError):
        apply_padding(img, PaddingSpec(0, 0, 0, 0, 4))


@given(st.integers(-100, 100), st.integers(-100, 100), st.sampled_from([2, 4, 8]))
def test_pad_to_size_fixed_shape(x0, y0, k):
    size = 20
    img = BevImage(PixelExtent(x0, x0 + size, y0, y0 + size), np.ones((size, size, 3)))
    out = pad_to_size(img, k, aligned_size(size, k), aligned_size(size, k))
    assert out.data.shape[:2] == (aligned_size(size, k),) * 2
    assert out.extent.x0 % k == 0 and out.extent.y0 % k == 0
    assert out.data.sum() == img.data.sum()


def test_aligned_size():
    assert aligned_size(64, 4) == 68
    assert aligned_size(832, 16) == 848
    assert aligned_size(5, 1) == 5


def test_mod_shift_keeps_size():
    rng = np.random.default_rng(1)
    img = _img(PixelExtent(5, 13, 2, 10), rng)
    out = mod_shift(img, 4)
    assert out.data.shape == img.data.shape
    assert out.extent.x0 == 4 and out.extent.y0 == 0
    assert np.array_equal(out.data[2, 1], img.data[0, 0])
