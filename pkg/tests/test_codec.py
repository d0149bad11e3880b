import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coopdet import codec
from coopdet.codec import (
    BadMagic, ChannelModel, EncoderBank, FeatureMap, LengthMismatch, NoFittingEncoder, Outcome, Truncated,
    UnknownChannelCount, UnsupportedVersion, decode, deserialize, encode, message_size, select_encoder,
    serialize,
)
from coopdet.sensing import Pose2D

GOLDEN = bytes.fromhex(
    "41465343" "0100" "0100" "07000000" "09000000"
    "0000c03f" "000000c0" "0000803e"
    "03000000" "fcffffff"
    "0100" "0200" "0100"
    "0000803f" "000000c0"
)


def test_golden_message():
    fmap = FeatureMap(np.array([[[1.0, -2.0]]], dtype=np.float32), (3, -4))
    assert serialize(fmap, Pose2D(1.5, -2.0, 0.25), vehicle_id=7, frame_id=9) == GOLDEN
    msg = deserialize(GOLDEN)
    assert (msg.vehicle_id, msg.frame_id, msg.pose, msg.fixel_origin) == (7, 9, (1.5, -2.0, 0.25), (3, -4))
    assert msg.payload.tolist() == [[[1.0, -2.0]]]


def test_header_is_42_bytes():
    assert codec.HEADER_SIZE == 42
    assert message_size(52, 52, 4) == 42 + 43_264


def test_unaligned_flag_round_trip():
    msg = deserialize(serialize(FeatureMap(np.zeros((2, 3, 3), np.float32)), (0.0, 0.0, 0.0)))
    assert msg.fixel_origin is None


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6)),
           elements=st.floats(-1e6, 1e6, width=32)),
    st.tuples(st.integers(-10**6, 10**6), st.integers(-10**6, 10**6)),
    st.integers(0, 2**32 - 1),
)
def test_round_trip_bit_exact(data, origin, frame):
    pose = (np.float32(1.25).item(), np.float32(-3.5).item(), np.float32(0.5).item())
    buf = serialize(FeatureMap(data, origin), pose, vehicle_id=1, frame_id=frame)
    assert len(buf) == message_size(data.shape[1], data.shape[2], data.shape[0])
    msg = deserialize(buf)
    assert msg.payload.tobytes() == data.astype("<f4").tobytes()
    assert msg.fixel_origin == origin and msg.frame_id == frame and msg.pose == pose
    assert serialize(msg.feature_map(), msg.pose, msg.vehicle_id, msg.frame_id) == buf


def test_deserialize_errors():
    with pytest.raises(Truncated):
        deserialize(GOLDEN[:41])
    with pytest.raises(BadMagic):
        deserialize(b"XXXX" + GOLDEN[4:])
    with pytest.raises(UnsupportedVersion):
        deserialize(GOLDEN[:4] + b"\x02\x00" + GOLDEN[6:])
    with pytest.raises(LengthMismatch):
        deserialize(GOLDEN[:-1])
    with pytest.raises(LengthMismatch):
        deserialize(GOLDEN + b"\0\0\0\0")


def test_select_encoder():
    assert select_encoder([2, 4, 8], 50_000, 52, 52) == 4
    assert select_encoder([2, 4, 8], message_size(52, 52, 8), 52, 52) == 8
    with pytest.raises(NoFittingEncoder):
        select_encoder([2, 4, 8], message_size(52, 52, 2) - 1, 52, 52)


@given(st.integers(0, 200_000))
def test_select_encoder_monotone(budget):
    try:
        c = select_encoder([1, 2, 4, 8], budget, 16, 16)
    except NoFittingEncoder:
        assert budget < message_size(16, 16, 1)
        return
    assert message_size(16, 16, c) <= budget
    bigger = [x for x in (1, 2, 4, 8) if x > c]
    assert all(message_size(16, 16, x) > budget for x in bigger)


def test_bank_encode_decode_shapes():
    bank = EncoderBank.init((2, 4), 16, 16, np.random.default_rng(0))
    fmap = FeatureMap(np.random.default_rng(1).random((16, 5, 6)).astype(np.float32), (1, 2))
    for c_t in (2, 4):
        enc = encode(fmap, bank, c_t)
        assert enc.data.shape == (c_t, 5, 6) and enc.fixel_origin == (1, 2)
        dec = decode(enc, bank)
        assert dec.data.shape == (16, 5, 6)
    with pytest.raises(UnknownChannelCount):
        bank.pair(3)
    with pytest.raises(codec.CodecError):
        encode(FeatureMap(np.zeros((3, 2, 2), np.float32)), bank, 2)


def test_channel_model():
    ch = ChannelModel(100)
    assert ch.transmit(b"x" * 101) == (Outcome.REJECTED, None)
    assert ch.transmit(b"x" * 100) == (Outcome.DELIVERED, b"x" * 100)
    lossy = ChannelModel(100, drop_probability=1.0)
    assert lossy.transmit(b"x")[0] is Outcome.DROPPED
    a = [ChannelModel(10, 0.5, seed=3).transmit(b"x")[0] for _ in range(3)]
    assert len(set(a)) == 1
    with pytest.raises(ValueError):
        ChannelModel(-1)
