"""The cooperative detector: shared extractor, encoder/decoder bank and detection head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import EncoderBank
from .detect import HeadSpec
from .fusion import AlignmentMode
from .neural import Network
from .neural.presets import PRESETS
from .neural.network import _param_shapes
from .neural.serialize import ModelShapeMismatch, check_shapes, load_model, save_model
from .sensing import GridSpec

GRIDS = {"tiny": GridSpec.tiny, "table1": GridSpec}


@dataclass
class CoopModel:
    preset: str
    grid: GridSpec
    head_spec: HeadSpec
    fec: Network
    bank: EncoderBank
    head: Network
    mode: AlignmentMode = AlignmentMode.TMA

    @classmethod
    def build(cls, preset: str = "tiny", bank=(2, 4), seed: int = 0, mode=AlignmentMode.TMA,
              boxes_per_cell: int = 2, class_count: int = 2, grid: GridSpec | None = None) -> "CoopModel":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        p = PRESETS[preset]
        grid = grid or GRIDS[preset]()
        rng = np.random.default_rng(seed)
        fec = Network.init(p["fec"](), rng)
        feat = fec.config.out_channels
        head_spec = HeadSpec(boxes_per_cell, class_count, fec.config.downsampling / grid.resolution)
        bank_ = EncoderBank.init(bank, feat, p["width"], rng)
        head = Network.init(p["head"](head_spec.channels, feat), rng)
        return cls(preset, grid, head_spec, fec, bank_, head, AlignmentMode(mode))

    @property
    def k(self) -> int:
        return self.fec.config.downsampling

    def networks(self) -> dict[str, Network]:
        nets = {"fec": self.fec, "head": self.head}
        for c_t, (enc, dec) in self.bank.members.items():
            nets[f"enc{c_t}"] = enc
            nets[f"dec{c_t}"] = dec
        return nets

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in self.networks().items():
            for name, arr in net.params.items():
                out[f"{prefix}.{name}"] = arr
        return out

    def meta(self) -> dict:
        return {
            "preset": self.preset,
            "bank": self.bank.channel_counts,
            "mode": self.mode.value,
            "grid": {"resolution": self.grid.resolution, "range": self.grid.range,
                     "width_px": self.grid.width_px, "height_px": self.grid.height_px},
            "head": {"boxes_per_cell": self.head_spec.boxes_per_cell, "class_count": self.head_spec.class_count},
        }

    def astype(self, dtype) -> "CoopModel":
        bank = EncoderBank({c: (e.astype(dtype), d.astype(dtype)) for c, (e, d) in self.bank.members.items()})
        return CoopModel(self.preset, self.grid, self.head_spec, self.fec.astype(dtype), bank,
                         self.head.astype(dtype), self.mode)

    def touch(self) -> None:
        for net in self.networks().values():
            net.touch()

    def save(self, path) -> None:
        save_model(path, self.tensors(), self.meta())

    @classmethod
    def load(cls, path) -> "CoopModel":
        tensors, meta = load_model(path)
        try:
            model = cls.build(meta["preset"], meta["bank"], mode=meta["mode"],
                              boxes_per_cell=meta["head"]["boxes_per_cell"],
                              class_count=meta["head"]["class_count"], grid=GridSpec(**meta["grid"]))
        except (KeyError, TypeError) as exc:
            raise ModelShapeMismatch(f"model metadata incomplete: {exc}") from None
        expected = {}
        for prefix, net in model.networks().items():
            for name, shape in _param_shapes(net.config).items():
                expected[f"{prefix}.{name}"] = shape
        check_shapes(tensors, expected)
        for prefix, net in model.networks().items():
            for name in net.params:
                net.params[name] = tensors[f"{prefix}.{name}"]
        return model
