"""
Prefill, incremental steps and the coarse code stream
======================================================

The backbone encodes a voice prompt once into a KV cache, then extends it
one item at a time. Cached stepping reproduces the uncached pass.
"""

import numpy as np
import torch

from chroma_stream import Backbone, BackboneConfig, ConditioningPrefix, ReasonerStub, SamplerConfig
from chroma_stream.tokens import text_token

torch.set_num_threads(1)
stub = ReasonerStub()
reasoned = stub.reason([text_token(i) for i in (5, 80, 113, 7)])
print("reasoner rows:", reasoned.text_embeddings.shape)

prefix = ConditioningPrefix(
    ref_audio_codes=np.random.default_rng(0).integers(0, 255, (12, 8)),
    speaker_embedding=np.ones(64) / 8.0,
)

for deterministic in (False, True):
    bb = Backbone(BackboneConfig(deterministic=deterministic))
    codes = np.arange(10) * 7 % 255
    with torch.no_grad():
        full_logits, _ = bb.teacher_forced(prefix, reasoned, codes)
        # same rows, but through the cache
        rows, pred_at = bb.embed_response(reasoned, codes)
        cache = bb.prefill(prefix, reasoned)
        stepped = torch.stack([bb.step(cache, r).logits for r in rows])[pred_at]
    gap = float((stepped - full_logits).abs().max())
    print(f"deterministic={deterministic}: max |cached - full| = {gap:.1e}")

# greedy streaming; the text token rides along at the start of each group
stream = bb.generate_stream(prefix, reasoned, SamplerConfig(max_frames=12, min_frames=12))
for frame in stream:
    tag = "pad" if frame.text is not None and frame.text.is_pad else (frame.text.id if frame.text else "")
    print(f"code {frame.code:3d}  text {tag}")
print("finish:", stream.finish_reason, "cache length:", stream.cache.cached_length)
