"""Command line entry point: ``chroma-stream <subcommand> ...``."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .codec import analyze_waveform, read_wav, rvq_decode, rvq_encode, synth_waveform, write_raw_f32, write_wav
from .config import SystemConfig, load_config
from .harness import instrument_generation
from .latency import compute_sim, emit_report, extract_speaker_embedding
from .pipeline import ChromaSystem
from .sampling import SamplerConfig
from .tokens import EOS_ID, PAD_ID, dump_codes, dumps_sequence, load_codes, text_token
from .training import StageSchedule, train


def _config(args) -> SystemConfig:
    cfg = load_config(args.config) if args.config else SystemConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _system(args) -> ChromaSystem:
    cfg = _config(args)
    if getattr(args, "checkpoint", None):
        return ChromaSystem.load(args.checkpoint, cfg)
    return ChromaSystem.build(cfg)


def _tokens(args, V_text: int):
    if args.text:
        ids = [int(t) for t in args.text.replace(",", " ").split()]
    else:
        rng = np.random.default_rng(args.seed or 0)
        ids = rng.integers(2, V_text, size=args.text_len).tolist()
    bad = [i for i in ids if i in (PAD_ID, EOS_ID) or not 0 <= i < V_text]
    if bad:
        raise SystemExit(f"invalid text token ids: {bad}")
    return [text_token(i) for i in ids]


def _write_audio(path: str, wave) -> None:
    if path.endswith(".wav"):
        write_wav(path, wave)
    else:
        write_raw_f32(path, wave)


def cmd_bench(args) -> int:
    system = _system(args)
    cap = args.frames_cap
    sampler = SamplerConfig(max_frames=cap, min_frames=cap if args.fixed_length else 0,
                            seed=system.config.seed)
    out = instrument_generation(system, _tokens(args, system.config.V_text), mode=args.mode,
                                sampler=sampler)
    sys.stdout.write(emit_report(out.report, args.format))
    return 0


def cmd_generate(args) -> int:
    system = _system(args)
    prefix = system.prefix_from_audio(read_wav(args.ref) if args.ref else None)
    sampler = SamplerConfig(temperature=args.temperature, top_k=args.top_k, seed=system.config.seed,
                            max_frames=args.frames_cap)
    res = system.generate(_tokens(args, system.config.V_text), prefix, sampler)
    _write_audio(args.out, res.waveform)
    if args.codes:
        with open(args.codes, "w") as fh:
            dump_codes(res.frames, fh)
    if args.schedule:
        with open(args.schedule, "w") as fh:
            fh.write(dumps_sequence(res.schedule))
    print(f"{len(res.frames)} frames, {res.duration:.2f}s, finish={res.finish_reason}")
    return 0


def cmd_train(args) -> int:
    system = _system(args)
    schedule = StageSchedule.for_stage(args.stage)
    result = train(system.backbone, system.refiner, system.stub, system.codec, schedule,
                   system.config.train(args.steps),
                   on_step=lambda r: print(r.line()) if args.verbose else None)
    first, last = result.trace[0].losses.combined, result.trace[-1].losses.combined
    print(f"stage {args.stage}: combined loss {first:.4f} -> {last:.4f} over {len(result.trace)} steps")
    if args.trace:
        result.write_trace(args.trace)
    if args.out:
        system.save(args.out)
    return 0


def cmd_encode(args) -> int:
    system = _system(args)
    codes = rvq_encode(analyze_waveform(read_wav(args.input), system.codec), system.codec)
    with open(args.output, "w") as fh:
        dump_codes(codes, fh)
    return 0


def cmd_decode(args) -> int:
    system = _system(args)
    with open(args.input) as fh:
        codes = load_codes(fh)
    _write_audio(args.output, synth_waveform(rvq_decode(codes, system.codec), system.codec))
    return 0


def cmd_sim(args) -> int:
    a = extract_speaker_embedding(read_wav(args.a))
    b = extract_speaker_embedding(read_wav(args.b))
    print(f"{compute_sim(a, b):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chroma-stream")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, text=False):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--checkpoint", help="weights file written by 'train --out'")
        if text:
            sp.add_argument("--text", help="space or comma separated text token ids")
            sp.add_argument("--text-len", type=int, default=256,
                            help="random prompt length when --text is absent")

    sp = sub.add_parser("bench", help="instrumented generation with a latency table")
    common(sp, text=True)
    sp.add_argument("--mode", choices=("sequential", "pipelined"), default="sequential")
    sp.add_argument("--format", choices=("table", "json"), default="table")
    sp.add_argument("--frames-cap", type=int, default=500)
    sp.add_argument("--no-fixed-length", dest="fixed_length", action="store_false",
                    help="allow end-of-audio before the frame cap")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("generate", help="text ids (and optional reference WAV) to audio")
    common(sp, text=True)
    sp.add_argument("--ref", help="reference WAV for voice conditioning")
    sp.add_argument("--out", required=True, help=".wav for 16-bit PCM, anything else for raw float32")
    sp.add_argument("--codes", help="also write frame-major codes here")
    sp.add_argument("--schedule", help="also write the interleaved token schedule here")
    sp.add_argument("--frames-cap", type=int, default=1000)
    sp.add_argument("--temperature", type=float, default=0.0)
    sp.add_argument("--top-k", type=int, default=0)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train on synthetic pairs")
    common(sp)
    sp.add_argument("--stage", type=int, choices=(1, 2), default=1)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--trace", help="write the per-step loss trace (TSV)")
    sp.add_argument("--out", help="write the trained weights")
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("encode", help="WAV to frame-major codes")
    common(sp)
    sp.add_argument("input")
    sp.add_argument("output")
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="frame-major codes to audio")
    common(sp)
    sp.add_argument("input")
    sp.add_argument("output")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("sim", help="speaker similarity of two WAV files")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.set_defaults(func=cmd_sim)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
