"""Flat ``key = value`` configuration covering every module.

Lines starting with ``#`` and blank lines are ignored.  Unknown keys are an
error so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .backbone import BackboneConfig
from .codec import CodecConfig
from .reasoner import StubConfig
from .refiner import RefinerConfig
from .training import TrainConfig


@dataclass(frozen=True)
class SystemConfig:
    # shared dimensions
    d: int = 64
    N: int = 8
    V: int = 256
    V_text: int = 512
    seed: int = 0
    deterministic: bool = False
    # backbone
    backbone_layers: int = 4
    backbone_heads: int = 4
    context_limit: int = 2048
    # refiner
    d_r: int = 32
    refiner_layers: int = 2
    refiner_heads: int = 4
    # codec
    d_c: int = 16
    frame_hop: int = 480
    sample_rate: int = 24000
    kernel_frames: int = 2
    kmeans_iters: int = 20
    codec_train_rows: int = 4096
    # streaming
    group: int = 4
    frame_budget: int = 8
    # training
    lr: float = 5e-5
    momentum: float = 0.9
    clip_norm: float = 1.0
    batch_size: int = 4
    pool_size: int = 16
    optimizer: str = "adamw"

    def stub(self) -> StubConfig:
        return StubConfig(d=self.d, V_text=self.V_text, seed=self.seed)

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            d=self.d, n_layers=self.backbone_layers, n_heads=self.backbone_heads, V=self.V,
            N=self.N, V_text=self.V_text, context_limit=self.context_limit,
            seed=self.seed + 1, deterministic=self.deterministic,
        )

    def refiner(self) -> RefinerConfig:
        return RefinerConfig(
            d_r=self.d_r, n_layers=self.refiner_layers, n_heads=self.refiner_heads, N=self.N,
            V=self.V, d_backbone=self.d, seed=self.seed + 2, deterministic=self.deterministic,
        )

    def codec(self) -> CodecConfig:
        return CodecConfig(
            N=self.N, V=self.V, d_c=self.d_c, frame_hop=self.frame_hop,
            sample_rate=self.sample_rate, kernel_frames=self.kernel_frames,
            kmeans_iters=self.kmeans_iters, seed=self.seed + 3,
        )

    def train(self, steps: int = 200) -> TrainConfig:
        return TrainConfig(
            steps=steps, batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
            clip_norm=self.clip_norm, seed=self.seed, pool_size=self.pool_size,
            optimizer=self.optimizer,
        )

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(kind, raw: str):
    if kind in (bool, "bool"):
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ValueError(f"not a boolean: {raw!r}") from None
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config(text: str, base: SystemConfig = SystemConfig()) -> SystemConfig:
    types = {f.name: f.type for f in fields(SystemConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(types[key], raw)
    return dataclasses.replace(base, **values)


def load_config(path) -> SystemConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dumps_config(cfg: SystemConfig) -> str:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(out) + "\n"
