import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopdet.codec import FeatureMap
from coopdet.fusion import (
    align_nma, align_tma, fuse, nma_offset, place, place_backward, round_half_away, tma_offset,
)
from coopdet.sensing import GridSpec, Pose2D

offsets = st.tuples(st.integers(-8, 8), st.integers(-8, 8))


def test_round_half_away():
    assert [round_half_away(v) for v in (0.5, -0.5, 1.49, -1.5, 2.5)] == [1, -1, 1, -2, 3]


def test_place_overlap():
    data = np.arange(6.0).reshape(1, 2, 3)
    out = place(data, (1, -1), (2, 3))
    assert out.tolist() == [[[0.0, 3.0, 4.0], [0.0, 0.0, 0.0]]]


@given(offsets)
def test_place_backward_is_adjoint(off):
    rng = np.random.default_rng(abs(hash(off)) % 2**32)
    x = rng.normal(size=(2, 4, 5))
    g = rng.normal(size=(2, 6, 3))
    assert np.isclose(np.sum(place(x, off, (6, 3)) * g), np.sum(x * place_backward(g, off, (4, 5))))


def test_tma_offset_exact():
    assert tma_offset((5, -3), (2, 4)) == (3, -7)


def test_align_tma_places_by_origin():
    remote = FeatureMap(np.ones((1, 2, 2)), (3, 4))
    out = align_tma(remote, (2, 4), (3, 3))
    assert out.data[0].tolist() == [[0, 1, 1], [0, 1, 1], [0, 0, 0]]
    assert out.fixel_origin == (2, 4)
    with pytest.raises(ValueError):
        align_tma(FeatureMap(np.ones((1, 2, 2))), (0, 0), (2, 2))


def test_nma_offset_rounds_pose_difference():
    grid = GridSpec.tiny()  # 2.5 px/m, k=4 -> 0.625 fixels per meter
    assert nma_offset(Pose2D(0.8, 0.0), Pose2D(0.0, 0.0), grid, 4) == (1, 0)  # 0.5 rounds away
    assert nma_offset(Pose2D(-0.8, 1.0), Pose2D(0.0, 0.0), grid, 4) == (-1, 1)


def test_nma_misplaces_non_lattice_offsets():
    # remote origin one fixel right of ego, but the pose difference says 0.4 fixel -> rounds to 0
    remote = FeatureMap(np.eye(3)[None], None)
    out = align_nma(remote, Pose2D(0.64, 0.0), Pose2D(0.0, 0.0), GridSpec.tiny(), 4)
    assert np.array_equal(out.data, remote.data)


def test_fuse_sums_and_checks_shape():
    a = FeatureMap(np.ones((2, 2, 2)), (0, 0))
    b = FeatureMap(np.full((2, 2, 2), 2.0), (0, 0))
    assert np.all(fuse(a, b).data == 3.0)
    with pytest.raises(ValueError):
        fuse(a, FeatureMap(np.ones((2, 3, 2))))
