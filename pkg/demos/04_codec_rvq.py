"""
Residual quantization and causal synthesis
==========================================

Codebooks come from k-means on synthetic speaker features. Each extra
level can only lower the reconstruction error. Audio is produced four
frames at a time, with the same samples as a one-shot synthesis.
"""

import numpy as np

from chroma_stream import SystemConfig, codec_decode_batched, reconstruction_error, rvq_decode, rvq_encode, synth_waveform
from chroma_stream.codec import analyze_waveform, write_wav
from chroma_stream.pipeline import trained_codec
from chroma_stream.synthetic import corpus_features

codec = trained_codec(SystemConfig())
x = corpus_features(400, codec.d_c, seed=99)

for k in range(1, codec.N + 1):
    print(f"levels {k}: mse {reconstruction_error(x, codec, k):.4f}")

codes = rvq_encode(x[:50], codec)
feats = rvq_decode(codes, codec)
whole = synth_waveform(feats, codec)
chunks = list(codec_decode_batched(list(codes), codec, group=4))
print("chunks:", [len(c) // codec.frame_hop for c in chunks][-3:], "frames (last three)")
print("batched == one shot:", np.array_equal(np.concatenate([c.samples for c in chunks]), whole.samples))

# analysis recovers the feature rows from the audio
back = analyze_waveform(whole, codec)
print("round-trip correlation:", round(float(np.corrcoef(back.ravel(), feats.ravel())[0, 1]), 5))
write_wav("demo_codec.wav", whole)
print(f"wrote demo_codec.wav ({whole.duration:.2f} s)")
