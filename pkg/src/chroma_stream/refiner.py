"""Frame-synchronous residual-level refiner.

Each frame is refined independently from its coarse code and the backbone
hidden state.  Inside a frame a small causal transformer runs over ``N``
positions: position 0 carries the projected hidden state plus the coarse-code
embedding, position ``j`` carries the embedding of level ``j``.  The output at
position ``j-1`` goes through head ``j`` to give the logits for level ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import LevelOutOfRange
from .layers import DTYPE, CausalTransformer, FrozenTransformer, Linear, ordered_matmul
from .sampling import SamplerConfig, choose
from .tokens import AcousticFrame


@dataclass(frozen=True)
class RefinerConfig:
    d_r: int = 32
    n_layers: int = 2
    n_heads: int = 4
    N: int = 8
    V: int = 256
    d_backbone: int = 64
    seed: int = 1
    deterministic: bool = False

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.V < 2:
            raise ValueError("V must be >= 2")


@dataclass
class RefineInput:
    coarse_code: int
    backbone_hidden: torch.Tensor

    def __post_init__(self):
        self.coarse_code = int(self.coarse_code)
        self.backbone_hidden = torch.as_tensor(self.backbone_hidden, dtype=DTYPE)
        if not torch.isfinite(self.backbone_hidden).all():
            raise ValueError("backbone hidden state must be finite")


class Refiner(nn.Module):
    def __init__(self, config: RefinerConfig = RefinerConfig()):
        super().__init__()
        self.config = c = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(c.seed)
            self.transformer = CausalTransformer(
                c.d_r, c.n_layers, c.n_heads, c.N, deterministic=c.deterministic
            )
            self.hidden_proj = Linear(c.d_backbone, c.d_r, deterministic=c.deterministic)
            # row j embeds level-j codes; row 0 is the coarse code
            self.level_embed = nn.Parameter(torch.randn(c.N, c.V, c.d_r, dtype=DTYPE) / np.sqrt(c.d_r))
            self.head_weight = nn.Parameter(
                torch.randn(c.N - 1, c.d_r, c.V, dtype=DTYPE) / np.sqrt(c.d_r)
            )
            self.head_bias = nn.Parameter(torch.zeros(c.N - 1, c.V, dtype=DTYPE))

    def _inputs(self, coarse, hidden, prefix: Sequence[int]) -> torch.Tensor:
        first = self.hidden_proj(hidden[None])[0] + self.level_embed[0, coarse]
        rows = [first] + [self.level_embed[j + 1, int(c)] for j, c in enumerate(prefix)]
        return torch.stack(rows)

    def _head(self, level: int, h: torch.Tensor) -> torch.Tensor:
        w = self.head_weight[level - 1]
        if self.config.deterministic:
            return ordered_matmul(h[None], w)[0] + self.head_bias[level - 1]
        return h @ w + self.head_bias[level - 1]

    def level_logits(self, inp: RefineInput, prefix: Sequence[int], level: int) -> torch.Tensor:
        """Logits over level ``level`` given the coarse code, hidden state and levels 1..level-1."""
        if not 1 <= level < self.config.N:
            raise LevelOutOfRange(f"level {level} outside [1, {self.config.N})")
        if len(prefix) != level - 1:
            raise ValueError(f"level {level} needs a prefix of {level - 1} codes, got {len(prefix)}")
        out = self.transformer(self._inputs(inp.coarse_code, inp.backbone_hidden, prefix))
        return self._head(level, out[-1])

    def teacher_forced(self, coarse: torch.Tensor, hidden: torch.Tensor, targets: torch.Tensor):
        """Per-level logits (L, N-1, V) for L frames with ground-truth level prefixes.

        ``targets`` is (L, N-1) holding levels 1..N-1.  Frames are independent,
        so they run as one batch of intra-frame sequences.
        """
        c = self.config
        coarse = torch.as_tensor(coarse).long()
        targets = torch.as_tensor(targets).long()
        first = self.hidden_proj(hidden) + self.level_embed[0, coarse]
        levels = torch.arange(1, c.N - 1)
        rest = self.level_embed[levels[None, :], targets[:, : c.N - 2]]
        h = self.transformer(torch.cat([first[:, None, :], rest], dim=1))  # (L, N-1, d_r)
        return torch.einsum("tld,ldv->tlv", h, self.head_weight) + self.head_bias

    def _snapshot(self) -> dict:
        """Numpy copy of the weights, rebuilt whenever any parameter changes."""
        key = tuple((p.data_ptr(), p._version) for p in self.parameters())
        snap = getattr(self, "_snap", None)
        if snap is None or snap["key"] != key:
            with torch.no_grad():
                snap = {
                    "key": key,
                    "tf": FrozenTransformer(self.transformer),
                    "proj_w": self.hidden_proj.weight.numpy().copy(),
                    "proj_b": self.hidden_proj.bias.numpy().copy(),
                    "embed": self.level_embed.numpy().copy(),
                    "head_w": self.head_weight.numpy().copy(),
                    "head_b": self.head_bias.numpy().copy(),
                }
            self._snap = snap
        return snap

    @torch.no_grad()
    def refine_frame(self, inp: RefineInput, sampler: SamplerConfig = SamplerConfig()) -> AcousticFrame:
        """Generate levels 1..N-1 one after another; level 0 is copied from the input.

        Outside deterministic mode this runs incrementally on a numpy snapshot
        (one new position per level); logits match :meth:`level_logits` to rounding.
        """
        rng = None if sampler.greedy else np.random.default_rng([sampler.seed, inp.coarse_code])
        codes: list = []
        if self.config.deterministic:
            for level in range(1, self.config.N):
                logits = self.level_logits(inp, codes, level)
                codes.append(choose(logits.numpy(), sampler, rng))
            return AcousticFrame([inp.coarse_code] + codes)
        s = self._snapshot()
        state = s["tf"].new_state(self.config.N)
        h = np.asarray(inp.backbone_hidden, dtype=np.float64)
        x = h @ s["proj_w"] + s["proj_b"] + s["embed"][0, inp.coarse_code]
        for level in range(1, self.config.N):
            out = s["tf"].step(x, state)
            codes.append(choose(out @ s["head_w"][level - 1] + s["head_b"][level - 1], sampler, rng))
            x = s["embed"][level, codes[-1]]
        return AcousticFrame([inp.coarse_code] + codes)

    def log_prob(self, inp: RefineInput, levels: Sequence[int]) -> float:
        """log p(c^{1:N-1} | c^0, h) as the sum of per-level log-softmax terms."""
        total = 0.0
        with torch.no_grad():
            for level in range(1, self.config.N):
                z = self.level_logits(inp, list(levels[: level - 1]), level)
                total += float(torch.log_softmax(z, -1)[int(levels[level - 1])])
        return total
