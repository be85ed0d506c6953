"""Instrumented end-to-end generation in sequential or pipelined mode.

Sequential mode runs every stage in the calling thread, one frame group at
a time.  Pipelined mode runs the backbone, the refiner and the codec decoder
as separate workers joined by bounded queues; a stage blocks once the next
one lags by ``frame_budget`` items.
"""
from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .backbone import ConditioningPrefix
from .codec import StreamingSynth, Waveform, rvq_decode
from .errors import PipelineFailure
from .latency import COMPONENTS, ComponentTiming, LatencyReport, build_report
from .refiner import RefineInput
from .sampling import SamplerConfig
from .tokens import TextToken, frames_to_array

_DONE = object()


@dataclass
class StageClock:
    """Busy time of one stage, plus the time until its first output."""

    first_ns: Optional[int] = None
    busy_ns: int = 0
    items: int = 0

    def record(self, start: int, end: int, items: int = 1) -> None:
        self.busy_ns += end - start
        self.items += items
        if self.first_ns is None:
            self.first_ns = self.busy_ns


@dataclass
class RunOutput:
    report: LatencyReport
    frames: np.ndarray
    waveform: Waveform
    finish_reason: Optional[str]
    chunks: list = field(default_factory=list)


def bounded(source: Iterable, budget: int) -> Iterator:
    """Run ``source`` in a worker thread that stays at most ``budget`` items ahead.

    Exceptions raised by the producer are re-raised in the consumer.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    q: queue.Queue = queue.Queue(maxsize=budget)
    stop = threading.Event()

    def work():
        try:
            for item in source:
                while not stop.is_set():
                    try:
                        q.put((True, item), timeout=0.05)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put((True, _DONE))
        except BaseException as exc:  # handed to the consumer
            q.put((False, exc))

    t = threading.Thread(target=work, daemon=True)
    t.start()
    try:
        while True:
            ok, item = q.get()
            if not ok:
                raise item
            if item is _DONE:
                return
            yield item
    finally:
        stop.set()
        t.join(timeout=1.0)


def _timings(clocks: dict, n_frames: int, n_text: int) -> dict:
    out = {}
    for name in COMPONENTS:
        c = clocks[name]
        ttft = None if name == "codec_decoder" else (c.first_ns or 0) / 1e6
        per_frame = c.busy_ns / 1e6 / max(n_frames, 1)
        extra = {}
        if name == "reasoner":
            extra["avg_token_ms"] = c.busy_ns / 1e6 / max(n_text, 1)
        out[name] = ComponentTiming(name, ttft, per_frame, c.busy_ns / 1e9, **extra)
    return out


def _partial(clocks: dict, n_frames: int, n_text: int) -> dict:
    return {"timings": _timings(clocks, n_frames, n_text), "frames": n_frames}


def instrument_generation(
    system,
    input_tokens: Sequence[TextToken],
    *,
    mode: str = "sequential",
    prefix: ConditioningPrefix = ConditioningPrefix(),
    sampler: SamplerConfig = SamplerConfig(),
) -> RunOutput:
    """Generate speech for ``input_tokens`` and time every component."""
    if mode not in ("sequential", "pipelined"):
        raise ValueError(f"unknown mode {mode!r}")
    clocks = {name: StageClock() for name in COMPONENTS}
    group = system.config.group
    frames, chunks = [], []
    first_chunk_ns = None
    n_text = len(input_tokens)
    t0 = time.perf_counter_ns()
    try:
        s = time.perf_counter_ns()
        reasoned = system.stub.reason(input_tokens)
        clocks["reasoner"].record(s, time.perf_counter_ns(), len(input_tokens))
        stream = system.backbone.generate_stream(prefix, reasoned, sampler)

        def coarse():
            while True:
                s = time.perf_counter_ns()
                try:
                    sf = next(stream)
                except StopIteration:
                    return
                clocks["backbone"].record(s, time.perf_counter_ns())
                yield sf

        def refined(source):
            for sf in source:
                s = time.perf_counter_ns()
                fr = system.refiner.refine_frame(RefineInput(sf.code, sf.hidden), sampler)
                clocks["decoder"].record(s, time.perf_counter_ns())
                yield fr

        def grouped(source):
            buf = []
            for fr in source:
                buf.append(fr)
                if len(buf) == group:
                    yield buf
                    buf = []
            if buf:
                yield buf

        if mode == "sequential":
            source = grouped(refined(coarse()))
        else:
            budget = system.config.frame_budget
            source = bounded(grouped(bounded(refined(bounded(coarse(), budget)), budget)),
                             max(1, budget // group))

        synth = StreamingSynth(system.codec)
        for buf in source:
            s = time.perf_counter_ns()
            chunks.append(synth.push(rvq_decode(buf, system.codec)))
            end = time.perf_counter_ns()
            clocks["codec_decoder"].record(s, end, len(buf))
            frames.extend(buf)
            if first_chunk_ns is None:
                first_chunk_ns = end - t0
    except PipelineFailure:
        raise
    except Exception as exc:
        raise PipelineFailure(f"generation failed: {exc}",
                              partial=_partial(clocks, len(frames), n_text)) from exc
    total_s = (time.perf_counter_ns() - t0) / 1e9

    n = len(frames)
    if n == 0:
        raise PipelineFailure("no audio frames were generated", partial=_partial(clocks, 0, n_text))
    wave = Waveform(np.concatenate([c.samples for c in chunks]), system.codec.sample_rate)
    report = build_report(
        _timings(clocks, n, n_text), total_s, wave.duration, n, mode=mode,
        first_chunk_ms=first_chunk_ns / 1e6,
    )
    return RunOutput(report, frames_to_array(frames), wave, stream.finish_reason, chunks)
