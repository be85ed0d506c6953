"""Autoregressive coarse-code generator.

A small causal transformer reads a conditioning prefix (speaker position,
reference text, reference frames) followed by the interleaved response
stream.  The output at the item just before each coarse code gives that
code's logits and the hidden state handed to the refiner.

Layout of a response with two text tokens and four codes::

    prefix ... | t1  a1  a2  t2  a3  a4
    predicts   |  a1  a2  --  a3  a4  --
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ContextOverflow
from .layers import DTYPE, CausalTransformer, KvCache, Linear
from .reasoner import ReasonerOutput
from .sampling import SamplerConfig, choose
from .tokens import CODES_PER_TEXT, PAD, Code, TextToken, frames_to_array


@dataclass(frozen=True)
class BackboneConfig:
    d: int = 64
    n_layers: int = 4
    n_heads: int = 4
    V: int = 256
    N: int = 8
    V_text: int = 512
    context_limit: int = 2048
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError("d must be divisible by n_heads")
        if self.V < 2:
            raise ValueError("V must be >= 2")
        if self.context_limit < 1:
            raise ValueError("context_limit must be >= 1")

    @property
    def eos_code(self) -> int:
        return self.V - 1


@dataclass
class ConditioningPrefix:
    ref_audio_codes: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))
    ref_text_tokens: tuple = ()
    speaker_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ref_audio_codes = frames_to_array(self.ref_audio_codes)
        self.ref_text_tokens = tuple(self.ref_text_tokens)
        if self.speaker_embedding is not None:
            self.speaker_embedding = np.asarray(self.speaker_embedding, dtype=np.float64)
            if not np.isfinite(self.speaker_embedding).all():
                raise ValueError("speaker embedding must be finite")

    def __len__(self):
        return (
            (self.speaker_embedding is not None)
            + len(self.ref_text_tokens)
            + len(self.ref_audio_codes)
        )


@dataclass
class BackboneStepOutput:
    logits: torch.Tensor
    hidden: torch.Tensor


@dataclass
class StreamFrame:
    """One emitted coarse code, its hidden state and the text item fed just before it (if any)."""

    code: int
    hidden: torch.Tensor
    text: Optional[TextToken] = None


class Backbone(nn.Module):
    def __init__(self, config: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.config = c = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(c.seed)
            self.transformer = CausalTransformer(
                c.d, c.n_layers, c.n_heads, c.context_limit, deterministic=c.deterministic
            )
            self.code_embed = nn.Parameter(torch.randn(c.N, c.V, c.d, dtype=DTYPE) / np.sqrt(c.d))
            self.text_embed = nn.Parameter(torch.randn(c.V_text, c.d, dtype=DTYPE) / np.sqrt(c.d))
            self.text_bias = nn.Parameter(0.1 * torch.randn(c.d, dtype=DTYPE))
            self.audio_bias = nn.Parameter(0.1 * torch.randn(c.d, dtype=DTYPE))
            self.speaker_proj = Linear(c.d, c.d, deterministic=c.deterministic)
            self.head = Linear(c.d, c.V, deterministic=c.deterministic)

    # --- embeddings -----------------------------------------------------------

    def embed_item(self, item, e_row=None, h_row=None) -> torch.Tensor:
        """Embed one interleaved item.

        Text items sum their reasoner embedding row, hidden-state row and the
        text modality bias (missing rows count as zero, as for pad tokens past
        the transcript).  Code items look up the level-0 table and add the
        audio modality bias.
        """
        if isinstance(item, Code):
            return self.code_embed[0, item.value] + self.audio_bias
        if not isinstance(item, TextToken):
            raise TypeError(f"cannot embed {item!r}")
        out = self.text_bias
        if e_row is not None:
            out = out + torch.as_tensor(e_row, dtype=DTYPE)
        if h_row is not None:
            out = out + torch.as_tensor(h_row, dtype=DTYPE)
        return out

    def _text_rows(self, reasoner: ReasonerOutput):
        return (
            torch.as_tensor(reasoner.text_embeddings, dtype=DTYPE),
            torch.as_tensor(reasoner.hidden_states, dtype=DTYPE),
        )

    def embed_prefix(self, prefix: ConditioningPrefix) -> torch.Tensor:
        rows = []
        if prefix.speaker_embedding is not None:
            spk = torch.as_tensor(prefix.speaker_embedding, dtype=DTYPE)
            rows.append(self.speaker_proj(spk[None])[0])
        for tok in prefix.ref_text_tokens:
            rows.append(self.text_embed[tok.id] + self.text_bias)
        ref = prefix.ref_audio_codes
        if len(ref):
            levels = torch.arange(ref.shape[1])[None, :]
            emb = self.code_embed[levels, torch.as_tensor(ref)]
            rows.extend(emb.sum(1) + self.audio_bias)
        if not rows:
            return torch.zeros(0, self.config.d, dtype=DTYPE)
        return torch.stack(rows)

    def embed_response(self, reasoner: ReasonerOutput, codes: Sequence[int]):
        """Teacher-forced response embeddings and the row index predicting each code."""
        e, h = self._text_rows(reasoner)
        rows, pred_at = [], []
        for k, code in enumerate(codes):
            if k % CODES_PER_TEXT == 0:
                g = k // CODES_PER_TEXT
                if g < reasoner.T:
                    rows.append(self.embed_item(reasoner.text_tokens[g], e[g], h[g]))
                else:
                    rows.append(self.embed_item(PAD))
            pred_at.append(len(rows) - 1)
            if k < len(codes) - 1:
                rows.append(self.embed_item(Code(int(code))))
        return torch.stack(rows), pred_at

    # --- passes ---------------------------------------------------------------

    def forward_full(self, x: torch.Tensor):
        """Non-cached causal pass over embeddings (L, d) -> (logits (L, V), hidden (L, d))."""
        if x.shape[0] > self.config.context_limit:
            raise ContextOverflow(f"{x.shape[0]} positions exceed {self.config.context_limit}")
        hidden = self.transformer(x)
        return self.head(hidden), hidden

    def teacher_forced(self, prefix: ConditioningPrefix, reasoner: ReasonerOutput, codes):
        """Logits (L, V) and hidden states (L, d) for every target coarse code."""
        p = self.embed_prefix(prefix)
        r, pred_at = self.embed_response(reasoner, codes)
        logits, hidden = self.forward_full(torch.cat([p, r]))
        idx = torch.as_tensor(pred_at) + p.shape[0]
        return logits[idx], hidden[idx]

    def prefill(self, prefix: ConditioningPrefix, reasoner: ReasonerOutput | None = None) -> KvCache:
        """Encode the conditioning prefix into a fresh KV cache.

        Reasoner rows are not part of the prefix: they enter item by item
        during streaming.  ``reasoner`` is accepted only for a width check.
        """
        if reasoner is not None and reasoner.d != self.config.d:
            raise ValueError(f"reasoner width {reasoner.d} != backbone d {self.config.d}")
        if len(prefix) > self.config.context_limit:
            raise ContextOverflow(f"prefix of {len(prefix)} exceeds {self.config.context_limit}")
        cache = self.transformer.new_cache()
        x = self.embed_prefix(prefix)
        if x.shape[0]:
            self.transformer.extend(x, cache)
        return cache

    def step(self, cache: KvCache, input_embedding: torch.Tensor) -> BackboneStepOutput:
        """Append one embedded item to the cache and return its logits and hidden state."""
        if cache.cached_length >= self.config.context_limit:
            raise ContextOverflow("KV cache is full")
        hidden = self.transformer.extend(torch.as_tensor(input_embedding, dtype=DTYPE)[None], cache)
        return BackboneStepOutput(self.head(hidden)[0], hidden[0])

    def generate_stream(
        self,
        prefix: ConditioningPrefix,
        reasoner: ReasonerOutput,
        sampler: SamplerConfig = SamplerConfig(),
    ) -> "CoarseStream":
        return CoarseStream(self, prefix, reasoner, sampler)


class CoarseStream:
    """Lazy iterator of :class:`StreamFrame` following the 1:2 schedule.

    Pull-driven: no work happens until the consumer asks for the next frame.
    ``finish_reason`` is ``"eos"`` or ``"frame_cap"`` once exhausted.
    """

    def __init__(self, backbone: Backbone, prefix, reasoner: ReasonerOutput, sampler: SamplerConfig):
        if reasoner.T == 0:
            raise ValueError("reasoner output is empty")
        self.backbone = backbone
        self.reasoner = reasoner
        self.sampler = sampler
        self.finish_reason: Optional[str] = None
        self.frames_emitted = 0
        self.cache = None
        self._prefix = prefix
        self._iter = self._run()

    def __iter__(self) -> Iterator[StreamFrame]:
        return self

    def __next__(self) -> StreamFrame:
        return next(self._iter)

    def _pick(self, logits: torch.Tensor, rng) -> int:
        z = logits.detach().numpy()
        eos = self.backbone.config.eos_code
        if self.frames_emitted < self.sampler.min_frames:
            z = z.copy()
            z[eos] = -np.inf
        return choose(z, self.sampler, rng)

    @torch.no_grad()
    def _run(self):
        bb, cfg = self.backbone, self.backbone.config
        rng = np.random.default_rng(self.sampler.seed)
        self.cache = bb.prefill(self._prefix, self.reasoner)
        e, h = bb._text_rows(self.reasoner)
        group = 0
        pending = None  # last code, fed lazily right before the next step
        while True:
            for slot in range(CODES_PER_TEXT):
                if self.frames_emitted >= self.sampler.max_frames:
                    self.finish_reason = "frame_cap"
                    return
                text = None
                if pending is not None:
                    out = bb.step(self.cache, bb.embed_item(Code(pending)))
                if slot == 0:
                    if group < self.reasoner.T:
                        text = self.reasoner.text_tokens[group]
                        emb = bb.embed_item(text, e[group], h[group])
                    else:
                        text = PAD
                        emb = bb.embed_item(PAD)
                    out = bb.step(self.cache, emb)
                code = self._pick(out.logits, rng)
                if code == cfg.eos_code:
                    self.finish_reason = "eos"
                    return
                self.frames_emitted += 1
                pending = code
                yield StreamFrame(code, out.hidden, text)
            group += 1
