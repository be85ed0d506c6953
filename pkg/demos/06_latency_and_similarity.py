"""
Latency breakdown and speaker similarity
========================================

Ten seconds of audio from the default system, timed per component, in
both sequential and pipelined modes. Then speaker similarity between
synthetic voices.
"""

import numpy as np

from chroma_stream import ChromaSystem, SamplerConfig, SystemConfig, compute_sim, emit_report, extract_speaker_embedding, instrument_generation
from chroma_stream.codec import synth_waveform
from chroma_stream.synthetic import random_content_tokens, token_features

system = ChromaSystem.build(SystemConfig())
tokens = random_content_tokens(np.random.default_rng(0), 256, 512)

for mode in ("sequential", "pipelined"):
    out = instrument_generation(system, tokens, mode=mode,
                                sampler=SamplerConfig(max_frames=500, min_frames=500))
    print(mode)
    print(emit_report(out.report))


def voice(speaker, take):
    rng = np.random.default_rng([speaker, take])
    ids = [t.id for t in random_content_tokens(rng, 40, 512)]
    feats = token_features(ids, 75, speaker, system.codec.d_c, noise_seed=take)
    return extract_speaker_embedding(synth_waveform(feats, system.codec))


a1, a2, b = voice(1, 0), voice(1, 1), voice(2, 0)
print("same speaker SIM:", round(compute_sim(a1, a2), 4))
print("other speaker SIM:", round(compute_sim(a1, b), 4))
