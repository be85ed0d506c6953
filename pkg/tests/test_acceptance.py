"""The twelve acceptance criteria, one test each.

Every test records a one-line verdict that is printed in the terminal
summary (``[PASS] criterion  N: ...``) whether it passes or fails.
Run directly with ``python3 tests/test_acceptance.py`` for just this file.
"""
import math

import mpmath
import numpy as np
import pytest
import torch
from scipy.stats import binomtest

from chroma_stream.backbone import Backbone, BackboneConfig, ConditioningPrefix
from chroma_stream.codec import (
    codec_decode_batched,
    reconstruction_error,
    rvq_decode,
    synth_waveform,
)
from chroma_stream.config import SystemConfig
from chroma_stream.harness import instrument_generation
from chroma_stream.latency import (
    TABLE_HEADERS,
    compute_rtf,
    compute_sim,
    emit_report,
    extract_speaker_embedding,
)
from chroma_stream.pipeline import ChromaSystem
from chroma_stream.reasoner import ReasonerStub, StubConfig
from chroma_stream.refiner import RefineInput
from chroma_stream.sampling import SamplerConfig
from chroma_stream.synthetic import corpus_features, random_content_tokens, token_features
from chroma_stream.tokens import (
    PAD,
    Code,
    InterleavedSequence,
    deinterleave,
    interleave,
    text_token,
    validate_ratio,
)
from chroma_stream.training import (
    StageSchedule,
    backbone_loss,
    batch_losses,
    decoder_loss,
    generate_synthetic_pair,
    grad_check,
    train,
)
from chroma_stream.weights import weights_checksum

from conftest import ACCEPTANCE, TINY

mpmath.mp.dps = 50


def verdict(cid, ok, detail):
    ACCEPTANCE[cid] = (bool(ok), detail)
    assert ok, detail


# --- oracles ------------------------------------------------------------------------

def oracle_nll(logits, targets):
    """-(1/L) sum_t log softmax(z_t)[y_t] with 50-digit log-sum-exp."""
    total = mpmath.mpf(0)
    for row, y in zip(logits, targets):
        z = [mpmath.mpf(float(v)) for v in row]
        total += mpmath.log(mpmath.fsum(mpmath.exp(v) for v in z)) - z[int(y)]
    return total / len(targets)


def oracle_factorized(level_logits, targets):
    """-(1/L) sum_t log prod_j p_j: the per-level probabilities multiplied out explicitly."""
    total = mpmath.mpf(0)
    for frame, ys in zip(level_logits, targets):
        prod = mpmath.mpf(1)
        for row, y in zip(frame, ys):
            z = [mpmath.mpf(float(v)) for v in row]
            prod *= mpmath.exp(z[int(y)]) / mpmath.fsum(mpmath.exp(v) for v in z)
        total += -mpmath.log(prod)
    return total / len(targets)


# --- 1 ------------------------------------------------------------------------------

def test_criterion_01_rtf_arithmetic():
    q = compute_rtf(16.58, 38.80)
    ok = abs(q - 0.43) <= 0.005 and f"{q:.2f}" == "0.43"
    verdict(1, ok, f"RTF 16.58/38.80 = {q:.5f}, reported {q:.2f} (expected 0.43 +/- 0.005)")


# --- 2 ------------------------------------------------------------------------------

def test_criterion_02_uniform_loss_constants():
    targets = np.arange(10) * 17 % 256
    lb = backbone_loss(np.zeros((10, 256)), targets)
    ld = decoder_loss(np.zeros((10, 7, 256)), np.zeros((10, 7), dtype=int) + 5)
    eb, ed = abs(lb - math.log(256)), abs(ld - 7 * math.log(256))
    ok = eb < 1e-9 and ed < 1e-9
    verdict(2, ok, f"backbone {lb:.9f} (err {eb:.1e}), decoder {ld:.9f} (err {ed:.1e}), tol 1e-9")


# --- 3 ------------------------------------------------------------------------------

def test_criterion_03_loss_oracle_equivalence():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(500):
        L, N, V = int(rng.integers(1, 5)), int(rng.integers(2, 4)), int(rng.integers(2, 9))
        scale = float(rng.choice([0.1, 1.0, 5.0]))
        z0 = rng.standard_normal((L, V)) * scale
        y0 = rng.integers(0, V, L)
        zl = rng.standard_normal((L, N - 1, V)) * scale
        yl = rng.integers(0, V, (L, N - 1))
        worst = max(worst, abs(backbone_loss(z0, y0) - float(oracle_nll(z0, y0))))
        worst = max(worst, abs(decoder_loss(zl, yl) - float(oracle_factorized(zl, yl))))
    verdict(3, worst <= 1e-10, f"500 instances, max |loss - oracle| = {worst:.2e} (tol 1e-10)")


# --- 4 ------------------------------------------------------------------------------

def test_criterion_04_gradient_checks(tiny_stub, tiny_codec):
    torch.manual_seed(0)
    bb = Backbone(BackboneConfig(**TINY, seed=11))
    from chroma_stream.refiner import Refiner, RefinerConfig

    rf = Refiner(RefinerConfig(d_r=8, n_layers=2, n_heads=2, N=TINY["N"], V=TINY["V"],
                               d_backbone=TINY["d"], seed=12))
    batch = generate_synthetic_pair(4, 6, stub=tiny_stub, codec=tiny_codec, ref_frames=2)

    def lb():
        return batch_losses(bb, rf, batch)[0]

    def ld():
        return batch_losses(bb, rf, batch)[1]

    eb = grad_check(lb, list(bb.parameters()), epsilon=1e-5, n_coords=200, seed=1)
    ed = grad_check(ld, list(rf.parameters()) + list(bb.parameters()), epsilon=1e-5,
                    n_coords=200, seed=2)
    ok = eb < 1e-4 and ed < 1e-4
    verdict(4, ok, f"max rel err backbone_loss {eb:.2e}, decoder_loss {ed:.2e} over 200 coords each (tol 1e-4)")


# --- 5 ------------------------------------------------------------------------------

def test_criterion_05_causality(tiny_backbone, tiny_refiner, tiny_codec):
    rng = np.random.default_rng(5)
    d, N, V = TINY["d"], TINY["N"], TINY["V"]
    bad = {"backbone": 0, "refiner": 0, "codec": 0}
    with torch.no_grad():
        for _ in range(100):
            L = int(rng.integers(2, 24))
            t = int(rng.integers(1, L))
            x = torch.as_tensor(rng.standard_normal((L, d)))
            y = x.clone()
            y[t:] += torch.as_tensor(rng.standard_normal((L - t, d)))
            a_log, a_hid = tiny_backbone.forward_full(x)
            b_log, b_hid = tiny_backbone.forward_full(y)
            if not (torch.equal(a_log[:t], b_log[:t]) and torch.equal(a_hid[:t], b_hid[:t])):
                bad["backbone"] += 1

            F = int(rng.integers(1, 5))
            coarse = torch.as_tensor(rng.integers(0, V, F))
            hidden = torch.as_tensor(rng.standard_normal((F, d)))
            tg = rng.integers(0, V, (F, N - 1))
            j = int(rng.integers(1, N - 1))  # levels > j are perturbed
            tg2 = tg.copy()
            tg2[:, j:] = (tg2[:, j:] + rng.integers(1, V, (F, N - 1 - j))) % V
            a = tiny_refiner.teacher_forced(coarse, hidden, torch.as_tensor(tg))
            b = tiny_refiner.teacher_forced(coarse, hidden, torch.as_tensor(tg2))
            if not torch.equal(a[:, :j], b[:, :j]):
                bad["refiner"] += 1

            Lc = int(rng.integers(2, 12))
            tc = int(rng.integers(0, Lc - 1))
            f = rng.standard_normal((Lc, tiny_codec.d_c)) * 0.3
            g = f.copy()
            g[tc + 1:] += rng.standard_normal((Lc - tc - 1, tiny_codec.d_c))
            hop = tiny_codec.frame_hop
            wa = synth_waveform(f, tiny_codec).samples[: (tc + 1) * hop]
            wb = synth_waveform(g, tiny_codec).samples[: (tc + 1) * hop]
            if not np.array_equal(wa, wb):
                bad["codec"] += 1
    ok = not any(bad.values())
    verdict(5, ok, f"violations over 100 trials each: {bad}")


# --- 6 ------------------------------------------------------------------------------

def _session(rng, bb, stub):
    N, V = bb.config.N, bb.config.V
    prefix = ConditioningPrefix(
        ref_audio_codes=rng.integers(0, V - 1, (int(rng.integers(0, 6)), N)),
        ref_text_tokens=[text_token(int(i)) for i in rng.integers(2, stub.config.V_text, int(rng.integers(0, 4)))],
        speaker_embedding=rng.standard_normal(bb.config.d) if rng.random() < 0.7 else None,
    )
    toks = [text_token(int(i)) for i in rng.integers(2, stub.config.V_text, int(rng.integers(1, 6)))]
    codes = rng.integers(0, V - 1, int(rng.integers(1, 20)))
    return prefix, stub.reason(toks), codes


def _streaming_gap(bb, stub, rng):
    prefix, ro, codes = _session(rng, bb, stub)
    with torch.no_grad():
        p = bb.embed_prefix(prefix)
        r, _ = bb.embed_response(ro, codes)
        full_logits, full_hidden = bb.forward_full(torch.cat([p, r]))
        cache = bb.prefill(prefix, ro)
        outs = [bb.step(cache, row) for row in r]
    step_logits = torch.stack([o.logits for o in outs])
    step_hidden = torch.stack([o.hidden for o in outs])
    P = p.shape[0]
    exact = torch.equal(step_logits, full_logits[P:]) and torch.equal(step_hidden, full_hidden[P:])
    gap = max(float((step_logits - full_logits[P:]).abs().max()),
              float((step_hidden - full_hidden[P:]).abs().max()))
    return gap, exact


def test_criterion_06_streaming_equivalence(tiny_stub):
    rng = np.random.default_rng(6)
    fast = Backbone(BackboneConfig(**TINY, seed=21))
    det = Backbone(BackboneConfig(**TINY, seed=21, deterministic=True))
    worst, det_exact = 0.0, 0
    for _ in range(50):
        gap, _ = _streaming_gap(fast, tiny_stub, rng)
        worst = max(worst, gap)
        _, exact = _streaming_gap(det, tiny_stub, rng)
        det_exact += exact
    ok = worst <= 1e-6 and det_exact == 50
    verdict(6, ok, f"50 sessions: max |cached - full| = {worst:.2e} (tol 1e-6); "
                   f"deterministic mode bit-exact in {det_exact}/50")


# --- 7 ------------------------------------------------------------------------------

def test_criterion_07_interleave_schedule():
    rng = np.random.default_rng(7)
    cfg = dict(d=8, n_layers=1, n_heads=2, V=16, N=2, V_text=20, context_limit=256)
    bb = Backbone(BackboneConfig(**cfg, seed=31))
    stub = ReasonerStub(StubConfig(d=8, V_text=20, seed=32))
    failures = 0
    for s in range(1000):
        toks = random_content_tokens(rng, int(rng.integers(1, 8)), 20)
        sampler = SamplerConfig(temperature=float(rng.choice([0.0, 1.0, 2.0])), seed=s,
                                max_frames=int(rng.integers(1, 30)))
        items = []
        for sf in bb.generate_stream(ConditioningPrefix(), stub.reason(toks), sampler):
            if sf.text is not None:
                items.append(sf.text)
            items.append(Code(sf.code))
        failures += not validate_ratio(InterleavedSequence(items))

    round_trip_bad = 0
    for _ in range(1000):
        T = int(rng.integers(0, 8))
        text = [text_token(int(i)) for i in rng.integers(2, 100, T)]
        n = int(rng.integers(max(1, 2 * T - 1), 2 * T + 8))
        codes = rng.integers(0, 256, n).tolist()
        trunc = n == 2 * T - 1
        seq = interleave(text, codes, truncated=trunc)
        t2, c2 = deinterleave(seq)
        pad_len = -(-n // 2)
        expect = text + [PAD] * (pad_len - T)
        round_trip_bad += not (list(t2) == expect and list(c2) == codes and validate_ratio(seq))
    ok = failures == 0 and round_trip_bad == 0
    verdict(7, ok, f"{1000 - failures}/1000 generated schedules valid; "
                   f"{1000 - round_trip_bad}/1000 interleave round trips exact")


# --- 8 ------------------------------------------------------------------------------

def test_criterion_08_rvq_monotone_and_batched(codec):
    nonmono, curves = 0, []
    for seed in range(100):
        x = corpus_features(64, codec.d_c, seed=1000 + seed)
        errs = [reconstruction_error(x, codec, k) for k in range(1, codec.N + 1)]
        curves.append(errs)
        nonmono += any(b > a for a, b in zip(errs, errs[1:]))
    mean = np.mean(curves, axis=0)
    mean_mono = bool(np.all(np.diff(mean) <= 0))

    rng = np.random.default_rng(8)
    mismatched = 0
    for _ in range(100):
        L = int(rng.integers(1, 23))
        frames = np.column_stack([rng.integers(0, codec.V - 1, L)] +
                                 [rng.integers(0, codec.V, L) for _ in range(codec.N - 1)])
        group = int(rng.choice([1, 2, 3, 4, 5]))
        full = synth_waveform(rvq_decode(frames, codec), codec).samples
        chunks = list(codec_decode_batched(list(frames), codec, group))
        mismatched += not np.array_equal(np.concatenate([c.samples for c in chunks]), full)
    ok = nonmono == 0 and mean_mono and mismatched == 0
    verdict(8, ok, f"error curve non-increasing in {100 - nonmono}/100 matrices, mean "
                   f"[{mean[0]:.4f} .. {mean[-1]:.4f}]; batched == unbatched in {100 - mismatched}/100 streams")


# --- 9 ------------------------------------------------------------------------------

def test_criterion_09_frame_synchrony(tiny_stub, tiny_backbone, tiny_refiner):
    rng = np.random.default_rng(9)
    differ = 0
    for trial in range(100):
        toks = random_content_tokens(rng, 8, tiny_stub.config.V_text)
        sampler = SamplerConfig(temperature=float(rng.choice([0.0, 0.8])), seed=trial,
                                max_frames=100, min_frames=100)
        stream = list(tiny_backbone.generate_stream(ConditioningPrefix(), tiny_stub.reason(toks), sampler))
        in_stream = [tiny_refiner.refine_frame(RefineInput(sf.code, sf.hidden), sampler) for sf in stream]
        k = int(rng.integers(0, len(stream)))
        alone = tiny_refiner.refine_frame(RefineInput(stream[k].code, stream[k].hidden), sampler)
        differ += alone.codes != in_stream[k].codes
    verdict(9, differ == 0, f"isolated vs in-stream refinement identical in {100 - differ}/100 trials")


# --- 10 -----------------------------------------------------------------------------

def test_criterion_10_training_behavior():
    cfg = SystemConfig()
    sys1 = ChromaSystem.build(cfg)
    r1 = train(sys1.backbone, sys1.refiner, sys1.stub, sys1.codec, StageSchedule.for_stage(1), cfg.train(200))
    first, last = r1.trace[0].losses.combined, r1.trace[-1].losses.combined

    sys2 = ChromaSystem.build(cfg)
    before = weights_checksum(sys2.backbone)
    r2 = train(sys2.backbone, sys2.refiner, sys2.stub, sys2.codec, StageSchedule.for_stage(2), cfg.train(100))
    after = weights_checksum(sys2.backbone)
    max_clip = max(r.clipped_norm for r in r1.trace + r2.trace)
    ok = last < first and before == after and max_clip <= 1.0 + 1e-6
    verdict(10, ok, f"stage 1 combined {first:.4f} -> {last:.4f} over 200 steps; stage 2 backbone "
                    f"checksum {'unchanged' if before == after else 'CHANGED'} over 100 steps; "
                    f"max post-clip norm {max_clip:.6f}")


# --- 11 -----------------------------------------------------------------------------

def test_criterion_11_desk_performance(system):
    toks = random_content_tokens(np.random.default_rng(11), 256, system.config.V_text)
    out = instrument_generation(system, toks, sampler=SamplerConfig(max_frames=500, min_frames=500))
    rep = out.report
    rep.check()
    header = emit_report(rep).splitlines()[0]
    expected = "| " + " | ".join(TABLE_HEADERS) + " |"
    ok = (rep.audio_len_s >= 10.0 and rep.rtf < 1.0
          and rep.overall_ttft_ms < 1000 * rep.overall_total_s
          and header == "| Component | TTFT (ms) | Avg Latency per Frame (ms) | Total Duration (s) |"
          and header == expected)
    verdict(11, ok, f"{rep.audio_len_s:.2f}s audio in {rep.overall_total_s:.2f}s: RTF {rep.rtf:.3f}, "
                    f"TTFT {rep.overall_ttft_ms:.1f} ms; header {'matches' if header == expected else 'differs'}")


# --- 12 -----------------------------------------------------------------------------

def speaker_clip(codec, speaker_seed, noise_seed, frames=75):
    rng = np.random.default_rng([speaker_seed, noise_seed])
    toks = [t.id for t in random_content_tokens(rng, frames // 2 + 1, 512)]
    return synth_waveform(token_features(toks, frames, speaker_seed, codec.d_c, noise_seed), codec)


def test_criterion_12_sim_machinery(codec):
    rng = np.random.default_rng(12)
    asym = 0
    for _ in range(100):
        a, b = rng.standard_normal(192), rng.standard_normal(192)
        # power-of-two scales are exact in floating point, so invariance is bit-exact
        c2 = 2.0 ** int(rng.integers(-20, 21))
        c = float(rng.uniform(0.01, 100.0))
        asym += (compute_sim(a, b) != compute_sim(b, a)
                 or compute_sim(c2 * a, b) != compute_sim(a, b)
                 or abs(compute_sim(c * a, b) - compute_sim(a, b)) > 1e-12)

    same, cross = [], []
    for trial in range(30):
        s1, s2 = 100 + 2 * trial, 101 + 2 * trial
        ref = extract_speaker_embedding(speaker_clip(codec, s1, 1))
        same.append(compute_sim(ref, extract_speaker_embedding(speaker_clip(codec, s1, 2))))
        cross.append(compute_sim(ref, extract_speaker_embedding(speaker_clip(codec, s2, 2))))
    wins = int(np.sum(np.array(same) > np.array(cross)))
    p = binomtest(wins, 30, 0.5, alternative="greater").pvalue
    sep = float(np.mean(same) - np.mean(cross))
    ok = asym == 0 and sep > 0 and p < 0.05
    verdict(12, ok, f"symmetry/scale violations {asym}/100; same {np.mean(same):.4f} vs cross "
                    f"{np.mean(cross):.4f} (separation {sep:.4f}), {wins}/30 wins, sign test p = {p:.2e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
