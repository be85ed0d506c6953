"""Decoding policy shared by the backbone and the refiner."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SamplerConfig:
    """Greedy by default (``temperature == 0``, lowest index wins ties).

    ``max_frames`` caps a coarse stream; ``min_frames`` suppresses the
    end-of-audio code until that many frames have been emitted.
    """

    temperature: float = 0.0
    top_k: int = 0
    seed: int = 0
    max_frames: int = 1000
    min_frames: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_frames < 0 or self.min_frames < 0:
            raise ValueError("frame limits must be >= 0")

    @property
    def greedy(self) -> bool:
        return self.temperature == 0.0


def choose(logits, sampler: SamplerConfig, rng: np.random.Generator | None = None) -> int:
    """Pick one index from a logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    if sampler.greedy:
        return int(np.argmax(z))
    z = z / sampler.temperature
    if 0 < sampler.top_k < z.size:
        kth = np.partition(z, -sampler.top_k)[-sampler.top_k]
        z = np.where(z >= kth, z, -np.inf)
    p = np.exp(z - z.max())
    p /= p.sum()
    if rng is None:
        rng = np.random.default_rng(sampler.seed)
    return int(rng.choice(z.size, p=p))
