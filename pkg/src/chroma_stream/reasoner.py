"""Frozen, deterministic stand-in for the text/multimodal reasoner.

The stub echoes its input as a response: content tokens pass through a fixed
permutation of the content vocabulary and an end-of-sequence token is
appended.  Embeddings come from a seeded lookup table; hidden states from a
second, fixed causal mixing layer over those embeddings, so the two matrices
differ and downstream code cannot silently ignore one of them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput
from .tokens import EOS, EOS_ID, PAD_ID, TextToken, text_token


@dataclass(frozen=True)
class StubConfig:
    d: int = 64
    V_text: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.V_text < 3:
            raise ValueError("V_text must be >= 3 (pad, eos and one content token)")


@dataclass(frozen=True)
class ReasonerOutput:
    text_embeddings: np.ndarray
    hidden_states: np.ndarray
    text_tokens: tuple

    def __post_init__(self):
        object.__setattr__(self, "text_tokens", tuple(self.text_tokens))
        e, h = self.text_embeddings, self.hidden_states
        if e.shape != h.shape or e.ndim != 2:
            raise ValueError(f"embedding/hidden shapes differ: {e.shape} vs {h.shape}")
        if e.shape[0] != len(self.text_tokens):
            raise ValueError("row count must equal the number of text tokens")
        if not (np.isfinite(e).all() and np.isfinite(h).all()):
            raise ValueError("reasoner output contains non-finite values")

    @property
    def T(self) -> int:
        return len(self.text_tokens)

    @property
    def d(self) -> int:
        return self.text_embeddings.shape[1]


class ReasonerStub:
    """Seeded embedding lookup plus one fixed mixing layer; holds no trainable state."""

    def __init__(self, config: StubConfig = StubConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, v = config.d, config.V_text
        self._embed = rng.standard_normal((v, d)) / np.sqrt(d)
        self._w_self = rng.standard_normal((d, d)) / np.sqrt(d)
        self._w_ctx = rng.standard_normal((d, d)) / np.sqrt(d)
        n_content = v - 2
        self._perm = rng.permutation(n_content) + 2
        for arr in (self._embed, self._w_self, self._w_ctx, self._perm):
            arr.setflags(write=False)

    def respond(self, input_tokens: Sequence[TextToken]) -> list:
        """The fixed echo policy: permuted content tokens followed by EOS."""
        out = []
        for tok in input_tokens:
            if tok.id in (PAD_ID, EOS_ID):
                continue
            if not 0 <= tok.id < self.config.V_text:
                raise ValueError(f"token id {tok.id} outside the text vocabulary")
            out.append(text_token(int(self._perm[tok.id - 2])))
        out.append(EOS)
        return out

    def embed(self, tokens: Sequence[TextToken]) -> np.ndarray:
        return self._embed[[t.id for t in tokens]]

    def reason(
        self,
        input_tokens: Sequence[TextToken],
        input_features: Optional[np.ndarray] = None,
    ) -> ReasonerOutput:
        if len(input_tokens) == 0:
            raise EmptyInput("reasoner needs at least one input token")
        response = self.respond(input_tokens)
        emb = self.embed(response)
        counts = np.arange(1, len(response) + 1)[:, None]
        running_mean = np.cumsum(emb, axis=0) / counts
        pre = emb @ self._w_self + running_mean @ self._w_ctx
        if input_features is not None:
            feats = np.atleast_2d(np.asarray(input_features, dtype=np.float64))
            pre = pre + feats.mean(axis=0) @ self._feature_projection(feats.shape[1])
        hidden = np.tanh(pre)
        return ReasonerOutput(emb.copy(), hidden, response)

    def _feature_projection(self, width: int) -> np.ndarray:
        # keyed by width so the stub stays stateless across calls
        rng = np.random.default_rng([self.config.seed, width])
        return rng.standard_normal((width, self.config.d)) / np.sqrt(width)
