"""Named network configurations.

``table1_*`` are the full-size layouts; ``tiny_*`` are the desk-scale versions
(two pooling stages, so K = 4) that the test suite actually trains.
"""

from __future__ import annotations

from .network import Conv, MaxPool2, NetworkConfig

_P = MaxPool2()


def table1_fec() -> NetworkConfig:
    return NetworkConfig("table1_fec", 3, (
        Conv(3, 24), _P,
        Conv(3, 48), _P,
        Conv(3, 64), Conv(3, 32), Conv(3, 64), _P,
        Conv(3, 128), Conv(3, 64), Conv(3, 128), _P,
        Conv(3, 128), Conv(3, 128),
    ))


def fscod_last_layer(c_t: int) -> Conv:
    """Bandwidth-sized last FEC layer of the single-network baseline (no BN, no activation)."""
    if c_t < 1:
        raise ValueError("c_t must be >= 1")
    return Conv(3, c_t, batchnorm=False, leaky=False)


def fscod_fec(c_t: int, base: NetworkConfig | None = None) -> NetworkConfig:
    """Baseline extractor: ``base`` with its last conv replaced by the c_t-channel layer."""
    base = base or table1_fec()
    return NetworkConfig(f"fscod_fec_{c_t}", base.in_channels, base.layers[:-1] + (fscod_last_layer(c_t),))


def tiny_fec() -> NetworkConfig:
    return NetworkConfig("tiny_fec", 3, (Conv(3, 8), _P, Conv(3, 16), _P, Conv(3, 16)))


def encoder(c_t: int, in_channels: int = 128, width: int = 128) -> NetworkConfig:
    if c_t < 1:
        raise ValueError("c_t must be >= 1")
    return NetworkConfig(f"encoder_{c_t}", in_channels, (Conv(1, width), Conv(1, width), Conv(1, c_t)))


def decoder(c_t: int, out_channels: int = 128) -> NetworkConfig:
    """Last layer width equals the extractor output so decoded maps live in its feature space."""
    if c_t < 1:
        raise ValueError("c_t must be >= 1")
    return NetworkConfig(f"decoder_{c_t}", c_t, (Conv(1, out_channels), Conv(1, out_channels), Conv(1, out_channels)))


def detector_head(out_channels: int = 20, in_channels: int = 128) -> NetworkConfig:
    return NetworkConfig("table1_head", in_channels, (
        Conv(1, 128), Conv(3, 256), Conv(1, 512), Conv(1, 1024), Conv(3, 2048),
        Conv(1, 1024), Conv(1, 2048), Conv(3, 1024),
        Conv(1, out_channels, batchnorm=False, leaky=False),
    ))


def tiny_head(out_channels: int = 12, in_channels: int = 16) -> NetworkConfig:
    return NetworkConfig("tiny_head", in_channels, (
        Conv(1, 32), Conv(3, 32), Conv(3, 32),
        Conv(1, out_channels, batchnorm=False, leaky=False),
    ))


PRESETS = {
    "table1": {"fec": table1_fec, "head": detector_head, "width": 128},
    "tiny": {"fec": tiny_fec, "head": tiny_head, "width": 16},
}
