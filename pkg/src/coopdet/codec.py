"""Encoder/decoder bank, feature-message wire format and a lossy capacity-limited link.

Wire format, little-endian, 42-byte header followed by the payload::

    offset size  field
    0      4     magic "AFSC"
    4      2     version (u16)
    6      2     flags (u16), bit 0 set when fixel_origin is lattice aligned
    8      4     vehicle_id (u32)
    12     4     frame_id (u32)
    16     12    pose x, y, heading (3 x f32)
    28     8     fixel_origin gx0, gy0 (2 x i32)
    36     6     height, width, c_t (3 x u16)
    42     ...   height*width*c_t f32 values, channel-major then row-major
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .neural import Network
from .neural.presets import decoder as decoder_config
from .neural.presets import encoder as encoder_config

MAGIC = b"AFSC"
VERSION = 1
HEADER = struct.Struct("<4sHHII3f2i3H")
HEADER_SIZE = HEADER.size
FLAG_ALIGNED = 1
assert HEADER_SIZE == 42


class CodecError(ValueError):
    pass


class BadMagic(CodecError):
    pass


class Truncated(CodecError):
    pass


class LengthMismatch(CodecError):
    pass


class UnsupportedVersion(CodecError):
    pass


class NoFittingEncoder(CodecError):
    pass


class UnknownChannelCount(CodecError, KeyError):
    pass


@dataclass
class FeatureMap:
    data: np.ndarray  # (channels, height, width)
    fixel_origin: tuple[int, int] | None = None

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"feature map must be CxHxW, got {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class FeatureMessage:
    vehicle_id: int
    frame_id: int
    pose: tuple[float, float, float]
    fixel_origin: tuple[int, int] | None
    payload: np.ndarray  # (c_t, height, width) float32
    version: int = VERSION

    @property
    def c_t(self) -> int:
        return self.payload.shape[0]

    @property
    def size(self) -> int:
        return message_size(self.payload.shape[1], self.payload.shape[2], self.c_t)

    def feature_map(self) -> FeatureMap:
        return FeatureMap(self.payload, self.fixel_origin)


def message_size(h: int, w: int, c_t: int) -> int:
    return HEADER_SIZE + 4 * h * w * c_t


def serialize(fmap: FeatureMap, pose, vehicle_id: int = 0, frame_id: int = 0) -> bytes:
    c, h, w = fmap.data.shape
    if max(c, h, w) > 0xFFFF:
        raise CodecError(f"dims {fmap.data.shape} exceed 16-bit header fields")
    x, y, heading = (pose.x, pose.y, pose.heading) if hasattr(pose, "heading") else pose
    aligned = fmap.fixel_origin is not None
    gx0, gy0 = fmap.fixel_origin if aligned else (0, 0)
    head = HEADER.pack(MAGIC, VERSION, FLAG_ALIGNED if aligned else 0, vehicle_id, frame_id,
                       x, y, heading, gx0, gy0, h, w, c)
    return head + np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()


def deserialize(buf: bytes) -> FeatureMessage:
    if len(buf) < HEADER_SIZE:
        raise Truncated(f"message has {len(buf)} bytes, header alone needs {HEADER_SIZE}")
    magic, version, flags, vid, fid, x, y, hd, gx0, gy0, h, w, c = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"message version {version} not supported")
    expected = message_size(h, w, c)
    if len(buf) != expected:
        raise LengthMismatch(f"header announces {expected} bytes, got {len(buf)}")
    payload = np.frombuffer(buf, dtype="<f4", offset=HEADER_SIZE).reshape(c, h, w).astype(np.float32)
    origin = (gx0, gy0) if flags & FLAG_ALIGNED else None
    return FeatureMessage(vid, fid, (x, y, hd), origin, payload, version)


@dataclass
class EncoderBank:
    """c_t -> (encoder, decoder) pairs sharing the extractor's feature width."""

    members: dict[int, tuple[Network, Network]]

    def __post_init__(self):
        if not self.members:
            raise ValueError("encoder bank must not be empty")

    @classmethod
    def init(cls, channel_counts, feature_channels: int, width: int, rng: np.random.Generator) -> "EncoderBank":
        members = {}
        for c_t in sorted(channel_counts):
            enc = Network.init(encoder_config(c_t, feature_channels, width), rng)
            dec = Network.init(decoder_config(c_t, feature_channels), rng)
            members[c_t] = (enc, dec)
        return cls(members)

    @property
    def channel_counts(self) -> list[int]:
        return sorted(self.members)

    def pair(self, c_t: int) -> tuple[Network, Network]:
        try:
            return self.members[c_t]
        except KeyError:
            raise UnknownChannelCount(f"no encoder with c_t={c_t} in bank {self.channel_counts}") from None


def select_encoder(bank, budget: int, h: int, w: int) -> int:
    """Largest c_t in ``bank`` whose full message fits into ``budget`` bytes."""
    counts = bank.channel_counts if isinstance(bank, EncoderBank) else sorted(bank)
    if not counts:
        raise ValueError("encoder bank must not be empty")
    fitting = [c for c in counts if message_size(h, w, c) <= budget]
    if not fitting:
        raise NoFittingEncoder(
            f"smallest message ({message_size(h, w, counts[0])} bytes, c_t={counts[0]}) exceeds budget {budget}"
        )
    return fitting[-1]


def encode(fmap: FeatureMap, bank: EncoderBank, c_t: int) -> FeatureMap:
    enc, _ = bank.pair(c_t)
    if fmap.channels != enc.config.in_channels:
        raise CodecError(f"feature map has {fmap.channels} channels, encoder expects {enc.config.in_channels}")
    return FeatureMap(enc(fmap.data[None])[0], fmap.fixel_origin)


def decode(msg: FeatureMessage | FeatureMap, bank: EncoderBank) -> FeatureMap:
    fmap = msg.feature_map() if isinstance(msg, FeatureMessage) else msg
    _, dec = bank.pair(fmap.channels)
    return FeatureMap(dec(fmap.data[None])[0], fmap.fixel_origin)


class Outcome(enum.Enum):
    DELIVERED = "delivered"
    DROPPED = "dropped"
    REJECTED = "rejected"


class ChannelModel:
    """Per-frame byte budget with seeded random loss.

    Over-capacity messages are rejected at send time; the drop draw only
    happens for messages that fit.
    """

    def __init__(self, capacity: int, drop_probability: float = 0.0, seed: int = 0):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        if not 0.0 <= drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        self.capacity = capacity
        self.drop_probability = drop_probability
        self._rng = np.random.default_rng(seed)

    def transmit(self, msg: bytes) -> tuple[Outcome, bytes | None]:
        if len(msg) > self.capacity:
            return Outcome.REJECTED, None
        if self._rng.random() < self.drop_probability:
            return Outcome.DROPPED, None
        return Outcome.DELIVERED, msg


def transmit(channel: ChannelModel, msg: bytes) -> tuple[Outcome, bytes | None]:
    return channel.transmit(msg)
