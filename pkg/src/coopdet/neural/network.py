"""Sequential CNN built from Conv and MaxPool2 layer specs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import layers as L


class ShapeError(ValueError):
    """Input or parameter shape does not match the network config."""


class StaleActivations(RuntimeError):
    """Backward called with activations that no longer match the parameters."""


@dataclass(frozen=True)
class Conv:
    kernel: int
    out_channels: int
    batchnorm: bool = True
    leaky: bool = True


@dataclass(frozen=True)
class MaxPool2:
    pass


LayerSpec = Union[Conv, MaxPool2]


@dataclass(frozen=True)
class NetworkConfig:
    name: str
    in_channels: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if not any(isinstance(s, Conv) for s in self.layers):
            raise ValueError("network needs at least one conv layer")

    @property
    def downsampling(self) -> int:
        return 2 ** sum(isinstance(s, MaxPool2) for s in self.layers)

    @property
    def out_channels(self) -> int:
        return [s for s in self.layers if isinstance(s, Conv)][-1].out_channels

    def receptive_radius(self) -> int:
        """Pixels an output fixel's receptive field extends beyond its own k x k block."""
        stride, radius = 1, 0
        for spec in self.layers:
            if isinstance(spec, Conv):
                radius += (spec.kernel // 2) * stride
            else:
                stride *= 2
        return radius

    def output_shape(self, h: int, w: int) -> tuple[int, int, int]:
        k = self.downsampling
        return (self.out_channels, h // k, w // k)


def _param_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c = config.in_channels
    for i, spec in enumerate(config.layers):
        if isinstance(spec, Conv):
            shapes[f"{i}.weight"] = (spec.out_channels, c, spec.kernel, spec.kernel)
            shapes[f"{i}.bias"] = (spec.out_channels,)
            if spec.batchnorm:
                for name in ("gamma", "beta", "running_mean", "running_var"):
                    shapes[f"{i}.{name}"] = (spec.out_channels,)
            c = spec.out_channels
    return shapes


BUFFER_SUFFIXES = (".running_mean", ".running_var")


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


@dataclass
class Activations:
    """Everything backward needs from one train-mode forward pass."""

    output: np.ndarray
    outputs: list[np.ndarray]
    caches: list[tuple]
    version: int
    owner_id: int


@dataclass
class Network:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    version: int = field(default=0)

    @classmethod
    def init(cls, config: NetworkConfig, rng: np.random.Generator, dtype=np.float32) -> "Network":
        """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero bias, unit BN scale."""
        params: dict[str, np.ndarray] = {}
        for name, shape in _param_shapes(config).items():
            if name.endswith(".weight"):
                fan_in = shape[1] * shape[2] * shape[3]
                bound = math.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
            elif name.endswith((".gamma", ".running_var")):
                params[name] = np.ones(shape, dtype=dtype)
            else:
                params[name] = np.zeros(shape, dtype=dtype)
        return cls(config, params)

    def validate(self) -> None:
        expected = _param_shapes(self.config)
        if set(expected) != set(self.params):
            raise ShapeError(f"{self.config.name}: parameter names differ from config")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{self.config.name}: {name} has shape {self.params[name].shape}, expected {shape}")

    def astype(self, dtype) -> "Network":
        return Network(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()}, self.version)

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if not is_buffer(k)}

    def touch(self) -> None:
        """Mark parameters as modified; invalidates outstanding activations."""
        self.version += 1

    def forward(self, x: np.ndarray, mode: str = "eval", track_stats: bool = True,
                momentum: float = L.BN_MOMENTUM) -> Activations:
        return forward(self, x, mode, track_stats, momentum)

    def reset_stats(self) -> None:
        for name, arr in self.params.items():
            if name.endswith(".running_mean"):
                arr[...] = 0
            elif name.endswith(".running_var"):
                arr[...] = 1

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x, "eval").output

    def backward(self, acts: Activations, dout: np.ndarray):
        return backward(self, acts, dout)


def forward(net: Network, x: np.ndarray, mode: str = "eval", track_stats: bool = True,
            momentum: float = L.BN_MOMENTUM) -> Activations:
    """Run every layer; ``mode`` is "train" (batch statistics) or "eval" (running statistics)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != net.config.in_channels:
        raise ShapeError(f"{net.config.name}: expected (N, {net.config.in_channels}, H, W), got {x.shape}")
    p = net.params
    outputs: list[np.ndarray] = []
    caches: list[tuple] = []
    h = x
    for i, spec in enumerate(net.config.layers):
        if isinstance(spec, MaxPool2):
            h, idx = L.maxpool2_forward(h)
            caches.append(("pool", idx))
        else:
            z, cols = L.conv2d_forward(h, p[f"{i}.weight"], p[f"{i}.bias"])
            bn_cache = None
            if spec.batchnorm:
                z, bn_cache = L.batchnorm_forward(
                    z, p[f"{i}.gamma"], p[f"{i}.beta"], p[f"{i}.running_mean"], p[f"{i}.running_var"],
                    train, track_stats, momentum,
                )
            pre_act = z
            if spec.leaky:
                z = L.leaky_relu_forward(z)
            caches.append(("conv", (cols, h.shape) if train else None, bn_cache, pre_act if train else None))
            h = z
        outputs.append(h)
    return Activations(h, outputs, caches, net.version, id(net) if train else -1)


def backward(net: Network, acts: Activations, dout: np.ndarray):
    """Reverse-mode pass. Returns (input gradient, dict of parameter gradients)."""
    if acts.owner_id != id(net) or acts.version != net.version:
        raise StaleActivations(f"{net.config.name}: activations do not come from a train-mode forward of these parameters")
    if dout.shape != acts.output.shape:
        raise ShapeError(f"{net.config.name}: upstream gradient {dout.shape} != output {acts.output.shape}")
    p = net.params
    grads: dict[str, np.ndarray] = {}
    g = dout
    for i in range(len(net.config.layers) - 1, -1, -1):
        spec = net.config.layers[i]
        cache = acts.caches[i]
        if isinstance(spec, MaxPool2):
            g = L.maxpool2_backward(g, cache[1])
            continue
        _, (cols, in_shape), bn_cache, pre_act = cache
        if spec.leaky:
            g = L.leaky_relu_backward(g, pre_act)
        if spec.batchnorm:
            g, grads[f"{i}.gamma"], grads[f"{i}.beta"] = L.batchnorm_backward(g, bn_cache, p[f"{i}.gamma"])
        g, grads[f"{i}.weight"], grads[f"{i}.bias"] = L.conv2d_backward(g, cols, in_shape, p[f"{i}.weight"])
    return g, grads
