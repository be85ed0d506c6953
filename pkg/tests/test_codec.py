import numpy as np
import pytest

from chroma_stream.codec import (
    Codebook,
    CodecConfig,
    RvqCodec,
    Waveform,
    analyze_waveform,
    codec_decode_batched,
    random_codec,
    read_raw_f32,
    read_wav,
    reconstruction_error,
    rvq_decode,
    rvq_encode,
    synth_waveform,
    write_raw_f32,
    write_wav,
)
from chroma_stream.errors import CodeOutOfRange, DimensionMismatch, TooShort
from chroma_stream.synthetic import corpus_features

SMALL = CodecConfig(N=3, V=8, d_c=4, frame_hop=16, sample_rate=800, seed=0)


def test_exact_codeword_encodes_to_itself():
    c = random_codec(SMALL)
    x = c.codebooks[0].entries[5][None]
    codes = rvq_encode(x, c, 1)
    assert codes[0, 0] == 5 and (codes[0, 1:] == 0).all()
    assert np.array_equal(rvq_decode(codes, c, 1), x)


def test_encode_matches_brute_force_scan():
    c = random_codec(SMALL)
    x = np.random.default_rng(1).standard_normal((50, 4))
    codes = rvq_encode(x, c)
    for row, got in zip(x, codes):
        residual = row.copy()
        for j, cb in enumerate(c.codebooks):
            best, best_d = None, np.inf
            for m, e in enumerate(cb.entries):
                dist = float(((residual - e) ** 2).sum())
                if dist < best_d:
                    best, best_d = m, dist
            assert got[j] == best
            residual = residual - cb.entries[best]


def test_lowest_index_wins_ties():
    books = [Codebook(0, np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]))]
    c = RvqCodec(books, 4, 100, np.zeros((1, 2, 4)), np.zeros((4, 2)))
    assert rvq_encode(np.array([[0.0, 1.0]]), c)[0, 0] == 0


def test_more_levels_never_worse(codec):
    x = corpus_features(200, codec.d_c, seed=77)
    errs = [reconstruction_error(x, codec, k) for k in range(1, codec.N + 1)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < errs[0]


def test_reserved_eos_never_selected(codec):
    x = corpus_features(500, codec.d_c, seed=5)
    assert (rvq_encode(x, codec)[:, 0] != codec.eos_code).all()


def test_decode_zero_books_and_range():
    c = RvqCodec([Codebook(j, np.zeros((8, 4))) for j in range(3)], 16, 800,
                 np.zeros((2, 4, 16)), np.zeros((16, 4)))
    assert np.array_equal(rvq_decode(np.zeros((5, 3), dtype=int), c), np.zeros((5, 4)))
    with pytest.raises(CodeOutOfRange):
        rvq_decode(np.array([[8, 0, 0]]), c)


def test_dimension_checks():
    c = random_codec(SMALL)
    with pytest.raises(DimensionMismatch):
        rvq_encode(np.zeros((2, 5)), c)
    with pytest.raises(ValueError):
        rvq_encode(np.zeros((2, 4)), c, 4)


def test_synth_length_and_zero_input():
    c = random_codec(SMALL)
    w = synth_waveform(np.zeros((6, 4)), c)
    assert len(w) == 6 * 16 and not w.samples.any()
    assert len(synth_waveform(np.ones((1, 4)), c)) == 16


def test_analyze_framing():
    c = random_codec(SMALL)
    assert analyze_waveform(Waveform(np.zeros(4 * 16 + 5), 800), c).shape == (4, 4)
    with pytest.raises(TooShort):
        analyze_waveform(Waveform(np.zeros(15), 800), c)


def test_silence_gives_bias_rows(codec):
    rows = analyze_waveform(Waveform(np.zeros(3 * codec.frame_hop), codec.sample_rate), codec)
    assert np.allclose(rows, codec.analysis_bias[None])


def test_round_trip_correlation(codec):
    x = rvq_decode(rvq_encode(corpus_features(300, codec.d_c, seed=9), codec), codec)
    y = analyze_waveform(synth_waveform(x, codec), codec)
    corr = np.corrcoef(x.ravel(), y.ravel())[0, 1]
    assert corr > 0.9


@pytest.mark.parametrize("n, sizes", [(8, [4, 4]), (5, [4, 1]), (3, [3])])
def test_batched_chunk_sizes(n, sizes):
    c = random_codec(SMALL)
    frames = np.random.default_rng(n).integers(0, 8, (n, 3))
    chunks = list(codec_decode_batched(list(frames), c, 4))
    assert [len(ch) // c.frame_hop for ch in chunks] == sizes
    full = synth_waveform(rvq_decode(frames, c), c).samples
    assert np.array_equal(np.concatenate([ch.samples for ch in chunks]), full)


def test_waveform_clips_not_wraps():
    w = Waveform(np.array([2.0, -3.0, 0.5]), 10)
    assert w.samples.tolist() == [1.0, -1.0, 0.5]
    with pytest.raises(ValueError):
        Waveform(np.array([np.inf]), 10)


def test_file_round_trips(tmp_path):
    w = Waveform(np.sin(np.linspace(0, 20, 1000)) * 0.7, 24000)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 24000 and np.abs(back.samples - w.samples).max() < 1e-4
    write_raw_f32(tmp_path / "a.f32", w)
    raw = read_raw_f32(tmp_path / "a.f32", 24000)
    assert np.abs(raw.samples - w.samples).max() < 1e-7


def test_deterministic_build():
    from chroma_stream.codec import build_codec

    cfg = CodecConfig(N=2, V=8, d_c=4, frame_hop=8, sample_rate=400, kmeans_iters=5, seed=1)
    feats = corpus_features(256, 4, seed=1)
    a, b = build_codec(feats, cfg), build_codec(feats, cfg)
    assert all(np.array_equal(x.entries, y.entries) for x, y in zip(a.codebooks, b.codebooks))
