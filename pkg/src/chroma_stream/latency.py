"""Latency accounting, speaker similarity and report formatting.

Timings use ``time.perf_counter_ns`` (monotonic, sub-microsecond).  A report
carries one row per component (reasoner, backbone, decoder, codec decoder)
plus overall figures; the codec decoder works on groups of frames and so has
no time-to-first-token of its own.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import signal

from .errors import TooShort, ZeroAudio, ZeroVector

COMPONENTS = ("reasoner", "backbone", "decoder", "codec_decoder")
COMPONENT_LABELS = {
    "reasoner": "Reasoner",
    "backbone": "Backbone",
    "decoder": "Decoder",
    "codec_decoder": "Codec Decoder",
}
TABLE_HEADERS = ("Component", "TTFT (ms)", "Avg Latency per Frame (ms)", "Total Duration (s)")


def compute_rtf(generation_s: float, audio_s: float) -> float:
    """Generation time divided by generated audio duration."""
    if not audio_s > 0:
        raise ZeroAudio(f"audio duration must be positive, got {audio_s}")
    if generation_s < 0:
        raise ValueError("generation time must be non-negative")
    return generation_s / audio_s


@dataclass(frozen=True)
class ComponentTiming:
    component: str
    ttft_ms: Optional[float]
    avg_frame_ms: float
    total_s: float
    # reasoner only: the same total divided by text tokens instead of frames
    avg_token_ms: Optional[float] = None

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")
        if self.total_s < 0:
            raise ValueError("total_s must be non-negative")
        if (self.ttft_ms is None) != (self.component == "codec_decoder"):
            raise ValueError("ttft_ms is absent exactly for the codec decoder")


@dataclass(frozen=True)
class LatencyReport:
    per_component: tuple
    overall_ttft_ms: float
    overall_total_s: float
    audio_len_s: float
    rtf: float
    overall_avg_frame_ms: float = 0.0
    n_frames: int = 0
    mode: str = "sequential"
    first_chunk_ms: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "per_component", tuple(self.per_component))
        if tuple(c.component for c in self.per_component) != COMPONENTS:
            raise ValueError(f"components must be {COMPONENTS}")
        if not self.audio_len_s > 0:
            raise ZeroAudio("audio_len_s must be positive")

    def component(self, name: str) -> ComponentTiming:
        return self.per_component[COMPONENTS.index(name)]

    def check(self, tol: float = 1e-9) -> None:
        """Assert the accounting invariants; raises AssertionError on violation."""
        ttft_sum = sum(c.ttft_ms for c in self.per_component if c.ttft_ms is not None)
        assert math.isclose(self.overall_ttft_ms, ttft_sum, rel_tol=tol, abs_tol=tol), "TTFT additivity"
        assert math.isclose(
            self.rtf, self.overall_total_s / self.audio_len_s, rel_tol=tol, abs_tol=tol
        ), "RTF consistency"
        assert all(c.total_s >= 0 for c in self.per_component)
        if self.mode == "sequential":
            assert all(self.overall_total_s >= c.total_s for c in self.per_component), (
                "sequential total below a component total"
            )


def build_report(timings: dict, overall_total_s: float, audio_len_s: float, n_frames: int,
                 mode: str = "sequential", first_chunk_ms: Optional[float] = None) -> LatencyReport:
    per = tuple(timings[c] for c in COMPONENTS)
    ttft = sum(c.ttft_ms for c in per if c.ttft_ms is not None)
    return LatencyReport(
        per_component=per,
        overall_ttft_ms=ttft,
        overall_total_s=overall_total_s,
        audio_len_s=audio_len_s,
        rtf=compute_rtf(overall_total_s, audio_len_s),
        overall_avg_frame_ms=1000.0 * overall_total_s / max(n_frames, 1),
        n_frames=n_frames,
        mode=mode,
        first_chunk_ms=first_chunk_ms,
    )


# --- report output ----------------------------------------------------------------

def _row(cells) -> str:
    return "| " + " | ".join(cells) + " |"


def _fmt(x: Optional[float]) -> str:
    return "--" if x is None else f"{x:.2f}"


def emit_report(report: LatencyReport, format: str = "table") -> str:
    """Render the per-component latency breakdown (``table``) or a JSON document (``json``)."""
    if format == "json":
        return json.dumps(asdict(report), indent=2)
    if format != "table":
        raise ValueError(f"unknown format {format!r}")
    lines = [_row(TABLE_HEADERS), _row(["---"] * 4)]
    for c in report.per_component:
        lines.append(_row([COMPONENT_LABELS[c.component], _fmt(c.ttft_ms),
                           _fmt(c.avg_frame_ms), _fmt(c.total_s)]))
    lines.append(_row(["Overall Generation Latency", _fmt(report.overall_ttft_ms),
                       _fmt(report.overall_avg_frame_ms), _fmt(report.overall_total_s)]))
    lines.append(_row(["Generated Audio Length", "--", "--", _fmt(report.audio_len_s)]))
    lines.append(_row(["Generation RTF", "", f"{report.rtf:.2f}", ""]))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> LatencyReport:
    """Inverse of ``emit_report(..., "json")``."""
    raw = json.loads(text)
    raw["per_component"] = tuple(ComponentTiming(**c) for c in raw["per_component"])
    return LatencyReport(**raw)


# --- speaker similarity -------------------------------------------------------------

EMBED_DIM = 192
N_BANDS = 64


@dataclass(frozen=True)
class SpeakerEmbedding:
    vector: np.ndarray
    extractor_id: str = "band-stats-v1"

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if not np.isfinite(v).all():
            raise ValueError("embedding must be finite")
        object.__setattr__(self, "vector", v)


def compute_sim(a, b) -> float:
    """Cosine similarity of two speaker embeddings."""
    va = np.asarray(a.vector if isinstance(a, SpeakerEmbedding) else a, dtype=np.float64)
    vb = np.asarray(b.vector if isinstance(b, SpeakerEmbedding) else b, dtype=np.float64)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ZeroVector("cannot compare a zero embedding")
    cos = float(np.dot(va / na, vb / nb))
    return min(1.0, max(-1.0, cos))


def _band_edges(sample_rate: int, n_fft: int) -> np.ndarray:
    freqs = np.geomspace(60.0, 0.5 * sample_rate, N_BANDS + 1)
    return np.searchsorted(np.fft.rfftfreq(n_fft, 1.0 / sample_rate), freqs)


def _unit_centered(block: np.ndarray) -> np.ndarray:
    block = block - block.mean()
    n = np.linalg.norm(block)
    return block / n if n > 0 else block


def extract_speaker_embedding(w, min_seconds: float = 0.5) -> SpeakerEmbedding:
    """192-dim band statistics: log-energy means, log-energy spreads, temporal deltas.

    Each 64-dim block is mean-centred and unit-normalized so cosine
    similarity compares spectral shape rather than loudness.  The last four
    slots of the delta block hold spectral centroid/spread/skew/kurtosis.
    """
    samples = np.asarray(w.samples, dtype=np.float64)
    rate = int(w.sample_rate)
    if len(samples) < min_seconds * rate:
        raise TooShort(f"need at least {min_seconds}s of audio, got {len(samples) / rate:.3f}s")
    n_fft = 512
    _, _, spec = signal.stft(samples, fs=rate, nperseg=n_fft, noverlap=n_fft // 2, boundary=None)
    power = np.abs(spec) ** 2  # (freq, time)
    edges = _band_edges(rate, n_fft)
    bands = np.stack([
        power[lo:max(hi, lo + 1)].mean(0) for lo, hi in zip(edges[:-1], edges[1:])
    ])
    loge = np.log(bands + 1e-10)  # (64, T)
    mean = loge.mean(1)
    spread = loge.std(1)
    delta = np.abs(np.diff(loge, axis=1)).mean(1) if loge.shape[1] > 1 else np.zeros(N_BANDS)

    freqs = np.fft.rfftfreq(n_fft, 1.0 / rate)
    p = power.mean(1)
    p = p / max(p.sum(), 1e-20)
    centroid = (freqs * p).sum()
    sd = math.sqrt(max(((freqs - centroid) ** 2 * p).sum(), 1e-20))
    skew = (((freqs - centroid) / sd) ** 3 * p).sum()
    kurt = (((freqs - centroid) / sd) ** 4 * p).sum()
    moments = np.array([centroid / rate, sd / rate, np.tanh(skew / 4), np.tanh(kurt / 16)])

    vec = np.concatenate([
        _unit_centered(mean),
        _unit_centered(spread),
        np.concatenate([_unit_centered(delta[: N_BANDS - 4]), moments]),
    ])
    if not np.any(vec):
        raise ZeroVector("silent input has no speaker statistics")
    return SpeakerEmbedding(vec)
