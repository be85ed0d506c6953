"""Deterministic synthetic speech-like data.

Stands in for a text generator plus TTS engine: text comes from seeded token
draws passed through the reasoner stub, and "speech" is a procedural feature
track.  Each response token holds a fixed phone template for two frames,
coloured by a per-speaker timbre (band gains plus a mean offset), so two
utterances by the same speaker share spectral statistics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokens import EOS_ID, PAD_ID, CODES_PER_TEXT, text_token


@dataclass(frozen=True)
class Timbre:
    offset: np.ndarray
    gains: np.ndarray


def speaker_timbre(speaker_seed: int, d_c: int) -> Timbre:
    rng = np.random.default_rng([speaker_seed, 0x5EED])
    return Timbre(0.8 * rng.standard_normal(d_c), rng.uniform(0.4, 1.6, d_c))


def phone_template(token_id: int, d_c: int) -> np.ndarray:
    if token_id in (PAD_ID, EOS_ID):
        return np.zeros(d_c)
    return np.random.default_rng([token_id, 0xF0E]).standard_normal(d_c)


def speaker_vector(speaker_seed: int, d: int) -> np.ndarray:
    """Toy prompt embedding for the backbone's speaker position."""
    v = np.random.default_rng([speaker_seed, 0xA11]).standard_normal(d)
    return v / np.linalg.norm(v)


def token_features(token_ids, n_frames: int, speaker_seed: int, d_c: int, noise_seed: int,
                   noise: float = 0.15) -> np.ndarray:
    """Feature track of ``n_frames`` rows; frame t voices token ``t // 2``."""
    timbre = speaker_timbre(speaker_seed, d_c)
    rng = np.random.default_rng([noise_seed, 0xA0])
    rows = np.empty((n_frames, d_c))
    for t in range(n_frames):
        g = t // CODES_PER_TEXT
        tid = token_ids[g] if g < len(token_ids) else PAD_ID
        rows[t] = phone_template(tid, d_c)
    # mild smoothing across frames so transitions are not instantaneous
    smoothed = rows.copy()
    smoothed[1:] = 0.7 * rows[1:] + 0.3 * rows[:-1]
    return timbre.offset + timbre.gains * smoothed + noise * rng.standard_normal((n_frames, d_c))


def random_content_tokens(rng: np.random.Generator, n: int, V_text: int) -> list:
    return [text_token(int(i)) for i in rng.integers(2, V_text, size=n)]


def corpus_features(n_rows: int, d_c: int, seed: int = 0, n_speakers: int = 16,
                    V_text: int = 512) -> np.ndarray:
    """A pool of feature rows from many speakers, for codebook training."""
    rng = np.random.default_rng([seed, 0xC0])
    chunks, total, k = [], 0, 0
    while total < n_rows:
        n = int(rng.integers(20, 80))
        ids = [t.id for t in random_content_tokens(rng, n // 2 + 1, V_text)]
        spk = int(rng.integers(n_speakers))
        chunks.append(token_features(ids, n, spk, d_c, noise_seed=seed * 100003 + k))
        total += n
        k += 1
    return np.concatenate(chunks)[:n_rows]
