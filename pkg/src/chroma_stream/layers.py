"""Decoder-only causal transformer blocks shared by the backbone and refiner.

Everything runs in float64 on unbatched ``(L, d)`` tensors.  With
``deterministic=True`` every reduction (linear layers, norms, softmax sums,
attention mixing) is an explicit left-to-right accumulation, so a position's
result does not depend on how many other rows share the kernel call.  That is
what makes cached single-step decoding bit-identical to a full masked pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64


def ordered_matmul(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """``x @ w`` accumulated strictly in order over the shared axis."""
    acc = x[..., 0:1] * w[..., 0:1, :]
    for i in range(1, w.shape[-2]):
        acc = acc + x[..., i : i + 1] * w[..., i : i + 1, :]
    return acc


def ordered_sum(x: torch.Tensor) -> torch.Tensor:
    """Sum over the last axis, in order, keeping the axis."""
    acc = x[..., 0:1]
    for i in range(1, x.shape[-1]):
        acc = acc + x[..., i : i + 1]
    return acc


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, deterministic: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_in, d_out, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=DTYPE)) if bias else None
        self.deterministic = deterministic
        nn.init.normal_(self.weight, std=1.0 / math.sqrt(d_in))

    def forward(self, x):
        y = ordered_matmul(x, self.weight) if self.deterministic else x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class RMSNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-6, deterministic: bool = False):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(d, dtype=DTYPE))
        self.eps = eps
        self.deterministic = deterministic

    def forward(self, x):
        sq = x * x
        ms = (ordered_sum(sq) if self.deterministic else sq.sum(-1, keepdim=True)) / x.shape[-1]
        return x * torch.rsqrt(ms + self.eps) * self.scale


def rope_tables(max_len: int, head_dim: int, base: float = 10000.0):
    half = head_dim // 2
    inv = base ** (-torch.arange(half, dtype=DTYPE) / max(half, 1))
    ang = torch.arange(max_len, dtype=DTYPE)[:, None] * inv[None, :]
    return torch.cos(ang), torch.sin(ang)


def apply_rope(x, cos, sin):
    """Rotate pairs (first half, second half) of the last axis; x is (H, L, hd)."""
    half = cos.shape[-1]
    if half == 0:
        return x
    x1, x2, rest = x[..., :half], x[..., half : 2 * half], x[..., 2 * half :]
    return torch.cat((x1 * cos - x2 * sin, x1 * sin + x2 * cos, rest), dim=-1)


@dataclass
class KvCache:
    """Per-layer key/value histories, preallocated to the context limit.

    Single writer: one generation session owns and mutates a cache.
    """

    keys: list
    values: list
    capacity: int
    cached_length: int = 0

    @classmethod
    def empty(cls, n_layers: int, capacity: int, d: int) -> "KvCache":
        return cls(
            [torch.zeros(capacity, d, dtype=DTYPE) for _ in range(n_layers)],
            [torch.zeros(capacity, d, dtype=DTYPE) for _ in range(n_layers)],
            capacity,
        )

    @property
    def n_layers(self) -> int:
        return len(self.keys)

    def layer(self, i: int):
        """Cached (keys, values) of layer ``i`` as ``cached_length x d`` views."""
        n = self.cached_length
        return self.keys[i][:n], self.values[i][:n]

    def clone(self) -> "KvCache":
        return KvCache(
            [k.clone() for k in self.keys],
            [v.clone() for v in self.values],
            self.capacity,
            self.cached_length,
        )


class Attention(nn.Module):
    def __init__(self, d: int, n_heads: int, deterministic: bool = False):
        super().__init__()
        if d % n_heads:
            raise ValueError(f"d={d} not divisible by n_heads={n_heads}")
        self.d, self.n_heads, self.hd = d, n_heads, d // n_heads
        self.deterministic = deterministic
        self.qkv = Linear(d, 3 * d, bias=False, deterministic=deterministic)
        self.o = Linear(d, d, bias=False, deterministic=deterministic)

    def _heads(self, x):
        """(..., m, d) -> (..., H, m, hd)"""
        return x.reshape(*x.shape[:-1], self.n_heads, self.hd).transpose(-2, -3)

    def _mix(self, q, k, v, mask):
        scale = 1.0 / math.sqrt(self.hd)
        if self.deterministic:
            scores = ordered_matmul(q, k.transpose(-1, -2)) * scale
        else:
            scores = (q @ k.transpose(-1, -2)) * scale
        scores = scores.masked_fill(mask, float("-inf"))
        m = scores.amax(-1, keepdim=True)
        e = torch.exp(scores - m)
        denom = ordered_sum(e) if self.deterministic else e.sum(-1, keepdim=True)
        p = e / denom
        return ordered_matmul(p, v) if self.deterministic else p @ v

    def forward(self, x, cos, sin, start: int = 0, cache: KvCache | None = None, layer: int = 0):
        m = x.shape[-2]
        pos = slice(start, start + m)
        q, k, v = self.qkv(x).split(self.d, dim=-1)
        q = apply_rope(self._heads(q), cos[pos], sin[pos])
        k = apply_rope(self._heads(k), cos[pos], sin[pos])
        v = self._heads(v)
        if cache is not None:
            # cache path is unbatched: (H, m, hd) -> (m, d)
            cache.keys[layer][pos] = k.transpose(0, 1).reshape(m, self.d)
            cache.values[layer][pos] = v.transpose(0, 1).reshape(m, self.d)
            k = self._heads(cache.keys[layer][: start + m])
            v = self._heads(cache.values[layer][: start + m])
        total = k.shape[-2]
        qi = torch.arange(start, start + m)[:, None]
        ki = torch.arange(total)[None, :]
        ctx = self._mix(q, k, v, ki > qi)
        ctx = ctx.transpose(-2, -3).reshape(*x.shape[:-2], m, self.d)
        return self.o(ctx)


class MLP(nn.Module):
    def __init__(self, d: int, hidden: int, deterministic: bool = False):
        super().__init__()
        self.hidden = hidden
        self.gate_up = Linear(d, 2 * hidden, bias=False, deterministic=deterministic)
        self.down = Linear(hidden, d, bias=False, deterministic=deterministic)

    def forward(self, x):
        gate, up = self.gate_up(x).split(self.hidden, dim=-1)
        return self.down(nn.functional.silu(gate) * up)


class Block(nn.Module):
    def __init__(self, d: int, n_heads: int, mlp_ratio: int = 4, deterministic: bool = False):
        super().__init__()
        self.norm1 = RMSNorm(d, deterministic=deterministic)
        self.attn = Attention(d, n_heads, deterministic=deterministic)
        self.norm2 = RMSNorm(d, deterministic=deterministic)
        self.mlp = MLP(d, mlp_ratio * d, deterministic=deterministic)

    def forward(self, x, cos, sin, start=0, cache=None, layer=0):
        x = x + self.attn(self.norm1(x), cos, sin, start, cache, layer)
        return x + self.mlp(self.norm2(x))


class CausalTransformer(nn.Module):
    """Stack of pre-norm blocks with rotary positions and a final norm."""

    def __init__(self, d, n_layers, n_heads, max_len, mlp_ratio=4, deterministic=False):
        super().__init__()
        self.d, self.max_len = d, max_len
        self.blocks = nn.ModuleList(
            Block(d, n_heads, mlp_ratio, deterministic) for _ in range(n_layers)
        )
        self.norm = RMSNorm(d, deterministic=deterministic)
        cos, sin = rope_tables(max_len, d // n_heads)
        self.register_buffer("cos", cos, persistent=False)
        self.register_buffer("sin", sin, persistent=False)

    def new_cache(self) -> KvCache:
        return KvCache.empty(len(self.blocks), self.max_len, self.d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Full causal pass over ``x`` (..., L, d) starting at position 0."""
        for block in self.blocks:
            x = block(x, self.cos, self.sin)
        return self.norm(x)

    def extend(self, x: torch.Tensor, cache: KvCache) -> torch.Tensor:
        """Append ``x`` (m, d) after the cached positions, writing the cache in place."""
        start = cache.cached_length
        for i, block in enumerate(self.blocks):
            x = block(x, self.cos, self.sin, start, cache, i)
        cache.cached_length = start + x.shape[-2]
        return self.norm(x)


class FrozenTransformer:
    """Numpy snapshot of a :class:`CausalTransformer` for one-row incremental steps.

    Small per-step workloads are dominated by framework call overhead; plain
    numpy is several times cheaper there.  Arithmetic follows the fast
    (non-deterministic) torch path, so results agree to rounding.
    """

    def __init__(self, tf: CausalTransformer):
        def arr(t):
            return t.detach().cpu().numpy().copy()

        self.d = tf.d
        attn = tf.blocks[0].attn if len(tf.blocks) else None
        self.n_heads = attn.n_heads if attn else 1
        self.hd = attn.hd if attn else tf.d
        self.cos, self.sin = arr(tf.cos), arr(tf.sin)
        self.layers = [
            dict(
                n1=arr(b.norm1.scale), eps1=b.norm1.eps,
                qkv=arr(b.attn.qkv.weight), o=arr(b.attn.o.weight),
                n2=arr(b.norm2.scale), eps2=b.norm2.eps,
                gate_up=arr(b.mlp.gate_up.weight), down=arr(b.mlp.down.weight), hidden=b.mlp.hidden,
            )
            for b in tf.blocks
        ]
        self.final, self.final_eps = arr(tf.norm.scale), tf.norm.eps

    def new_state(self, capacity: int) -> dict:
        shape = (self.n_heads, capacity, self.hd)
        return {
            "keys": [np.zeros(shape) for _ in self.layers],
            "values": [np.zeros(shape) for _ in self.layers],
            "length": 0,
        }

    @staticmethod
    def _norm(x, scale, eps):
        return x / np.sqrt((x * x).sum() / x.shape[-1] + eps) * scale

    def _rope(self, x, pos):
        half = self.cos.shape[-1]
        if half == 0:
            return x
        c, s = self.cos[pos], self.sin[pos]
        x1, x2 = x[:, :half], x[:, half : 2 * half]
        return np.concatenate((x1 * c - x2 * s, x1 * s + x2 * c, x[:, 2 * half :]), axis=-1)

    def step(self, x: np.ndarray, state: dict) -> np.ndarray:
        """Append one row ``x`` (d,) at the next position; returns the normed output row."""
        pos = state["length"]
        H, hd, d = self.n_heads, self.hd, self.d
        scale = 1.0 / math.sqrt(hd)
        for i, lay in enumerate(self.layers):
            q, k, v = np.split(self._norm(x, lay["n1"], lay["eps1"]) @ lay["qkv"], 3)
            keys, values = state["keys"][i], state["values"][i]
            keys[:, pos] = self._rope(k.reshape(H, hd), pos)
            values[:, pos] = v.reshape(H, hd)
            q = self._rope(q.reshape(H, hd), pos)
            scores = np.einsum("hd,hld->hl", q, keys[:, : pos + 1]) * scale
            e = np.exp(scores - scores.max(-1, keepdims=True))
            p = e / e.sum(-1, keepdims=True)
            ctx = np.einsum("hl,hld->hd", p, values[:, : pos + 1]).reshape(d)
            x = x + ctx @ lay["o"]
            gu = self._norm(x, lay["n2"], lay["eps2"]) @ lay["gate_up"]
            gate, up = gu[: lay["hidden"]], gu[lay["hidden"] :]
            x = x + (gate / (1.0 + np.exp(-gate)) * up) @ lay["down"]
        state["length"] = pos + 1
        return self._norm(x, self.final, self.final_eps)
