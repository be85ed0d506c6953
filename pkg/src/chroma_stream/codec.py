"""Toy residual-vector-quantized codec with causal waveform synthesis.

Analysis frames the waveform into non-overlapping hops and projects each hop
to a ``d_c``-dim feature row.  Synthesis is a transposed-convolution style
filterbank: feature row ``t`` excites ``K`` hops of windowed sinusoids
starting at hop ``t``, so sample ``s`` only ever sees rows ``<= s // hop``.

Two indices are reserved.  At level 0, ``V - 1`` marks end-of-audio and is
never chosen by the encoder.  At every refinement level, index 0 is the zero
codeword, which makes the reconstruction error non-increasing in the number
of levels for every single frame, not just on average.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np
from scipy.io import wavfile

from .errors import CodeOutOfRange, DimensionMismatch, TooShort
from .tokens import frames_to_array


@dataclass(frozen=True)
class CodecConfig:
    N: int = 8
    V: int = 256
    d_c: int = 16
    frame_hop: int = 480
    sample_rate: int = 24000
    kernel_frames: int = 2
    kmeans_iters: int = 20
    seed: int = 2

    def __post_init__(self):
        if self.frame_hop < 1:
            raise ValueError("frame_hop must be >= 1")
        if self.V < 2 or self.N < 1:
            raise ValueError("need V >= 2 and N >= 1")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.frame_hop


@dataclass
class Codebook:
    level: int
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise ValueError("codebook needs a V x d_c matrix with V >= 2")
        if np.isnan(self.entries).any():
            raise ValueError("codebook contains NaN")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if not np.isfinite(s).all():
            raise ValueError("waveform samples must be finite")
        self.samples = np.clip(s, -1.0, 1.0)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class RvqCodec:
    codebooks: list
    frame_hop: int
    sample_rate: int
    synth_kernel: np.ndarray  # (K, d_c, frame_hop)
    analysis: np.ndarray  # (frame_hop, d_c)
    analysis_bias: np.ndarray = None
    eos_code: Optional[int] = None
    zero_code: bool = False

    def __post_init__(self):
        shapes = {cb.entries.shape for cb in self.codebooks}
        if len(shapes) != 1:
            raise ValueError(f"codebooks disagree on V x d_c: {sorted(shapes)}")
        if self.frame_hop < 1:
            raise ValueError("frame_hop must be >= 1")
        if self.analysis_bias is None:
            self.analysis_bias = np.zeros(self.d_c)

    @property
    def N(self) -> int:
        return len(self.codebooks)

    @property
    def V(self) -> int:
        return self.codebooks[0].entries.shape[0]

    @property
    def d_c(self) -> int:
        return self.codebooks[0].entries.shape[1]

    def selectable(self, level: int) -> np.ndarray:
        """Boolean mask of codewords the encoder may pick at ``level``."""
        mask = np.ones(self.V, dtype=bool)
        if level == 0 and self.eos_code is not None:
            mask[self.eos_code] = False
        return mask


# --- quantization ---------------------------------------------------------------

def _check_levels(k: int, codec: RvqCodec) -> int:
    if not 1 <= k <= codec.N:
        raise ValueError(f"levels must be in [1, {codec.N}], got {k}")
    return k


def nearest(x: np.ndarray, entries: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Index of the closest codeword per row (Euclidean; lowest index on ties)."""
    dist = ((x[:, None, :] - entries[None, :, :]) ** 2).sum(-1)
    if mask is not None:
        dist[:, ~mask] = np.inf
    return dist.argmin(axis=1)


def rvq_encode(features, codec: RvqCodec, levels: int | None = None) -> np.ndarray:
    """Quantize (L, d_c) features into (L, N) codes; levels >= ``levels`` are zero."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != codec.d_c:
        raise DimensionMismatch(f"feature width {x.shape[1]} != codec d_c {codec.d_c}")
    k = _check_levels(codec.N if levels is None else levels, codec)
    codes = np.zeros((x.shape[0], codec.N), dtype=np.int64)
    residual = x.copy()
    for j in range(k):
        entries = codec.codebooks[j].entries
        idx = nearest(residual, entries, codec.selectable(j))
        codes[:, j] = idx
        residual = residual - entries[idx]
    return codes


def rvq_decode(frames, codec: RvqCodec, levels: int | None = None) -> np.ndarray:
    """Sum of codewords over levels ``< levels`` for each frame -> (L, d_c)."""
    codes = frames_to_array(frames)
    k = _check_levels(codec.N if levels is None else levels, codec)
    if codes.size == 0:
        return np.zeros((0, codec.d_c))
    if codes.shape[1] < k:
        raise DimensionMismatch(f"frames carry {codes.shape[1]} levels, need {k}")
    if (codes[:, :k] < 0).any() or (codes[:, :k] >= codec.V).any():
        raise CodeOutOfRange(f"codes must lie in [0, {codec.V})")
    out = np.zeros((codes.shape[0], codec.d_c))
    for j in range(k):
        out = out + codec.codebooks[j].entries[codes[:, j]]
    return out


def reconstruction_error(features, codec: RvqCodec, levels: int) -> float:
    """Mean squared error of an encode/decode round trip at ``levels`` levels."""
    x = np.asarray(features, dtype=np.float64)
    y = rvq_decode(rvq_encode(x, codec, levels), codec, levels)
    return float(np.mean((x - y) ** 2))


# --- waveform synthesis and analysis ----------------------------------------------

def _hop_products(rows: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """rows (L, d_c) @ kernel (d_c, hop), accumulated in a fixed order per element."""
    acc = rows[:, 0:1] * kernel[0]
    for i in range(1, kernel.shape[0]):
        acc = acc + rows[:, i : i + 1] * kernel[i]
    return acc


def _synth_hops(rows: np.ndarray, history: np.ndarray, codec: RvqCodec) -> np.ndarray:
    """Hops for ``rows`` given the previous K-1 rows (oldest first)."""
    K = codec.synth_kernel.shape[0]
    padded = np.concatenate([history, rows]) if K > 1 else rows
    L = rows.shape[0]
    out = np.zeros((L, codec.frame_hop))
    for k in range(K):
        src = padded[K - 1 - k : K - 1 - k + L]
        out = out + _hop_products(src, codec.synth_kernel[k])
    return out


def synth_waveform(features, codec: RvqCodec) -> Waveform:
    """Causal synthesis of L feature rows into exactly L * frame_hop samples."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[0] < 1:
        raise ValueError("need at least one feature row")
    if x.shape[1] != codec.d_c:
        raise DimensionMismatch(f"feature width {x.shape[1]} != codec d_c {codec.d_c}")
    history = np.zeros((codec.synth_kernel.shape[0] - 1, codec.d_c))
    return Waveform(_synth_hops(x, history, codec).reshape(-1), codec.sample_rate)


def analyze_waveform(w: Waveform, codec: RvqCodec) -> np.ndarray:
    """Frame the waveform into hops and project each hop to a feature row."""
    s = np.asarray(w.samples if isinstance(w, Waveform) else w, dtype=np.float64)
    L = len(s) // codec.frame_hop
    if L < 1:
        raise TooShort(f"{len(s)} samples is shorter than one hop of {codec.frame_hop}")
    hops = s[: L * codec.frame_hop].reshape(L, codec.frame_hop)
    return hops @ codec.analysis + codec.analysis_bias


class StreamingSynth:
    """Incremental synthesis that carries the last K-1 feature rows between calls."""

    def __init__(self, codec: RvqCodec):
        self.codec = codec
        self.history = np.zeros((codec.synth_kernel.shape[0] - 1, codec.d_c))

    def push(self, rows: np.ndarray) -> Waveform:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        hops = _synth_hops(rows, self.history, self.codec)
        keep = self.history.shape[0]
        if keep:
            self.history = np.concatenate([self.history, rows])[-keep:]
        return Waveform(hops.reshape(-1), self.codec.sample_rate)


def codec_decode_batched(frames: Iterable, codec: RvqCodec, group: int = 4) -> Iterator[Waveform]:
    """Decode a frame stream in groups of ``group``; a trailing partial group is flushed."""
    if group < 1:
        raise ValueError("group must be >= 1")
    synth = StreamingSynth(codec)
    buf: list = []
    for frame in frames:
        buf.append(frame)
        if len(buf) == group:
            yield synth.push(rvq_decode(buf, codec))
            buf = []
    if buf:
        yield synth.push(rvq_decode(buf, codec))


# --- construction and training ------------------------------------------------------

def filterbank_kernel(config: CodecConfig, amplitude: float = 0.08) -> np.ndarray:
    """Seeded windowed-sinusoid bank, one band per feature dim, K hops long."""
    rng = np.random.default_rng([config.seed, 1])
    K, hop, d_c = config.kernel_frames, config.frame_hop, config.d_c
    n = np.arange(K * hop)
    freqs = np.geomspace(120.0, 0.4 * config.sample_rate, d_c)
    phases = rng.uniform(0, 2 * np.pi, d_c)
    # fast attack over the first hop, exponential release into the following hops
    env = np.where(n < hop, np.sin(0.5 * np.pi * n / hop), np.exp(-(n - hop) / (0.35 * hop)))
    bank = amplitude * env * np.cos(2 * np.pi * freqs[:, None] * n / config.sample_rate + phases[:, None])
    return bank.reshape(d_c, K, hop).transpose(1, 0, 2).copy()


def fit_analysis(features: np.ndarray, codec: RvqCodec, ridge: float = 1e-8):
    """Least-squares hop -> feature projection so analysis inverts synthesis."""
    w = synth_waveform(features, codec)
    hops = w.samples.reshape(-1, codec.frame_hop)
    design = np.hstack([hops, np.ones((hops.shape[0], 1))])
    gram = design.T @ design + ridge * np.eye(design.shape[1])
    sol = np.linalg.solve(gram, design.T @ features)
    return sol[:-1], sol[-1]


def kmeans(data: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm from a random distinct-row start; empty clusters keep their centre."""
    uniq = np.unique(data, axis=0)
    if len(uniq) >= k:
        centres = uniq[rng.choice(len(uniq), size=k, replace=False)].copy()
    else:
        centres = np.vstack([uniq, uniq[rng.integers(len(uniq), size=k - len(uniq))]])
        centres = centres + 1e-6 * rng.standard_normal(centres.shape)
    sq = (data * data).sum(1)[:, None]
    for _ in range(iters):
        dist = sq - 2.0 * data @ centres.T + (centres * centres).sum(1)[None, :]
        assign = dist.argmin(1)
        counts = np.bincount(assign, minlength=k)
        sums = np.stack([np.bincount(assign, weights=col, minlength=k) for col in data.T], axis=1)
        filled = counts > 0
        centres[filled] = sums[filled] / counts[filled, None]
    return centres


def train_codebooks(features: np.ndarray, config: CodecConfig, eos_code=True, zero_code=True):
    """Greedy per-level k-means on successive residuals."""
    rng = np.random.default_rng([config.seed, 2])
    residual = np.asarray(features, dtype=np.float64).copy()
    books = []
    for level in range(config.N):
        reserved = (level == 0 and eos_code) or (level > 0 and zero_code)
        centroids = kmeans(residual, config.V - 1 if reserved else config.V, config.kmeans_iters, rng)
        if level == 0 and eos_code:
            entries = np.vstack([centroids, np.zeros((1, config.d_c))])
        elif level > 0 and zero_code:
            entries = np.vstack([np.zeros((1, config.d_c)), centroids])
        else:
            entries = centroids
        mask = np.ones(config.V, dtype=bool)
        if level == 0 and eos_code:
            mask[config.V - 1] = False
        residual = residual - entries[nearest(residual, entries, mask)]
        books.append(Codebook(level, entries))
    return books


def build_codec(features: np.ndarray, config: CodecConfig = CodecConfig()) -> RvqCodec:
    """Train codebooks on ``features`` and fit the analysis projection."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != config.d_c:
        raise DimensionMismatch(f"feature width {features.shape[1]} != d_c {config.d_c}")
    codec = RvqCodec(
        codebooks=train_codebooks(features, config),
        frame_hop=config.frame_hop,
        sample_rate=config.sample_rate,
        synth_kernel=filterbank_kernel(config),
        analysis=np.zeros((config.frame_hop, config.d_c)),
        eos_code=config.V - 1,
        zero_code=True,
    )
    codec.analysis, codec.analysis_bias = fit_analysis(features, codec)
    return codec


def random_codec(config: CodecConfig, rng: np.random.Generator | None = None) -> RvqCodec:
    """Untrained codec with Gaussian codebooks shrinking by level (for tests and sweeps)."""
    rng = rng or np.random.default_rng(config.seed)
    books = [
        Codebook(j, rng.standard_normal((config.V, config.d_c)) * 0.5**j) for j in range(config.N)
    ]
    return RvqCodec(
        codebooks=books,
        frame_hop=config.frame_hop,
        sample_rate=config.sample_rate,
        synth_kernel=filterbank_kernel(config),
        analysis=np.zeros((config.frame_hop, config.d_c)),
    )


# --- file formats -------------------------------------------------------------------

def write_wav(path, w: Waveform) -> None:
    """16-bit PCM mono WAV."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767).astype("<i2")
    wavfile.write(path, w.sample_rate, pcm)


def read_wav(path) -> Waveform:
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype.kind == "i":
        data = data / float(np.iinfo(data.dtype).max)
    elif data.dtype.kind == "u":
        data = (data - 128.0) / 127.0
    return Waveform(data.astype(np.float64), int(rate))


def write_raw_f32(path, w: Waveform) -> None:
    np.asarray(w.samples, dtype="<f4").tofile(path)


def read_raw_f32(path, sample_rate: int) -> Waveform:
    return Waveform(np.fromfile(path, dtype="<f4").astype(np.float64), sample_rate)
