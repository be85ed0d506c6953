"""Assemble reasoner stub, backbone, refiner and codec into one generation system."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import torch

from .backbone import Backbone, ConditioningPrefix
from .codec import RvqCodec, Waveform, analyze_waveform, build_codec, codec_decode_batched, rvq_encode
from .config import SystemConfig
from .latency import EMBED_DIM, extract_speaker_embedding
from .reasoner import ReasonerStub
from .refiner import RefineInput, Refiner
from .sampling import SamplerConfig
from .synthetic import corpus_features
from .tokens import AcousticFrame, Code, InterleavedSequence, TextToken, frames_to_array
from .weights import codec_arrays, codec_from_arrays, load_arrays, load_module, module_arrays, save_arrays


@lru_cache(maxsize=8)
def _trained_codec(codec_config, rows: int, seed: int) -> RvqCodec:
    feats = corpus_features(rows, codec_config.d_c, seed=seed)
    return build_codec(feats, codec_config)


def trained_codec(cfg: SystemConfig) -> RvqCodec:
    """Codec trained on the synthetic corpus; memoized per configuration."""
    return _trained_codec(cfg.codec(), cfg.codec_train_rows, cfg.seed)


def speaker_prompt_vector(waveform: Waveform, d: int, seed: int = 0) -> np.ndarray:
    """Fixed random projection of the 192-dim band statistics to the backbone width."""
    emb = extract_speaker_embedding(waveform).vector
    proj = np.random.default_rng([seed, 0x5B]).standard_normal((EMBED_DIM, d)) / np.sqrt(EMBED_DIM)
    v = emb @ proj
    return v / np.linalg.norm(v)


@dataclass
class GenerationResult:
    frames: np.ndarray
    waveform: Waveform
    finish_reason: str
    schedule: InterleavedSequence = field(default_factory=InterleavedSequence)

    @property
    def duration(self) -> float:
        return self.waveform.duration


@dataclass
class ChromaSystem:
    config: SystemConfig
    stub: ReasonerStub
    backbone: Backbone
    refiner: Refiner
    codec: RvqCodec

    @classmethod
    def build(cls, config: SystemConfig = SystemConfig(), codec: Optional[RvqCodec] = None):
        torch.set_num_threads(1)
        return cls(
            config,
            ReasonerStub(config.stub()),
            Backbone(config.backbone()),
            Refiner(config.refiner()),
            codec if codec is not None else trained_codec(config),
        )

    # --- persistence ---------------------------------------------------------------

    def save(self, path) -> None:
        arrays = {}
        arrays.update(module_arrays(self.backbone, "backbone"))
        arrays.update(module_arrays(self.refiner, "refiner"))
        arrays.update(codec_arrays(self.codec, "codec"))
        save_arrays(path, arrays)

    @classmethod
    def load(cls, path, config: SystemConfig = SystemConfig()) -> "ChromaSystem":
        arrays = load_arrays(path)
        system = cls.build(config, codec=codec_from_arrays(arrays, "codec"))
        load_module(system.backbone, arrays, "backbone")
        load_module(system.refiner, arrays, "refiner")
        return system

    # --- prompting -----------------------------------------------------------------

    def prefix_from_audio(self, waveform: Optional[Waveform], ref_text: Sequence[TextToken] = ()):
        if waveform is None:
            return ConditioningPrefix(ref_text_tokens=ref_text)
        codes = rvq_encode(analyze_waveform(waveform, self.codec), self.codec)
        return ConditioningPrefix(
            ref_audio_codes=codes,
            ref_text_tokens=ref_text,
            speaker_embedding=speaker_prompt_vector(waveform, self.config.d, self.config.seed),
        )

    # --- generation ----------------------------------------------------------------

    def generate(
        self,
        input_tokens: Sequence[TextToken],
        prefix: ConditioningPrefix = ConditioningPrefix(),
        sampler: SamplerConfig = SamplerConfig(),
    ) -> GenerationResult:
        """Untimed end-to-end run: reasoner, coarse stream, refinement, grouped codec decode."""
        reasoned = self.stub.reason(input_tokens)
        stream = self.backbone.generate_stream(prefix, reasoned, sampler)
        frames, items = [], []
        for sf in stream:
            if sf.text is not None:
                items.append(sf.text)
            items.append(Code(sf.code))
            frames.append(self.refiner.refine_frame(RefineInput(sf.code, sf.hidden), sampler))
        if not frames:
            wave = Waveform(np.zeros(0), self.codec.sample_rate)
        else:
            chunks = list(codec_decode_batched(frames, self.codec, self.config.group))
            wave = Waveform(np.concatenate([c.samples for c in chunks]), self.codec.sample_rate)
        return GenerationResult(frames_to_array(frames), wave, stream.finish_reason,
                                InterleavedSequence(items))
