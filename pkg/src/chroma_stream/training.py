"""Training objective and loop for the backbone and refiner.

Backbone loss: mean NLL of the coarse codes under teacher forcing.
Decoder loss: per-frame sum over refinement levels of the teacher-forced
NLL, averaged over frames.  The two are mixed as
``(1 - lam) * backbone + lam * decoder``; stage 1 trains both with
``lam = 0.5``, stage 2 freezes the backbone and sets ``lam = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .backbone import Backbone, ConditioningPrefix
from .codec import RvqCodec, rvq_encode
from .errors import CodeOutOfRange, DivergenceDetected, NonFiniteGradient, ShapeMismatch
from .layers import DTYPE
from .reasoner import ReasonerOutput, ReasonerStub
from .refiner import Refiner
from .synthetic import random_content_tokens, speaker_vector, token_features
from .tokens import CODES_PER_TEXT


# --- losses ------------------------------------------------------------------------

def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, True
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), False


def _check_targets(targets: torch.Tensor, V: int):
    if targets.numel() and (targets.min() < 0 or targets.max() >= V):
        raise CodeOutOfRange(f"targets must lie in [0, {V})")


def backbone_loss(logit_rows, targets):
    """Mean over L frames of -log softmax(logits_t)[target_t].

    Returns a tensor (keeping the graph) for tensor input, else a float.
    """
    z, is_tensor = _as_tensor(logit_rows)
    y = torch.as_tensor(np.asarray(targets) if not isinstance(targets, torch.Tensor) else targets)
    y = y.long()
    if z.ndim != 2 or y.ndim != 1 or z.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"logits {tuple(z.shape)} vs targets {tuple(y.shape)}")
    if z.shape[0] == 0:
        raise ShapeMismatch("need at least one frame")
    _check_targets(y, z.shape[1])
    nll = -torch.log_softmax(z, dim=-1).gather(1, y[:, None]).squeeze(1)
    loss = nll.mean()
    return loss if is_tensor else float(loss)


def decoder_loss(level_logits, targets):
    """-(1/L) * sum over frames and refinement levels of the teacher-forced log-probs.

    ``level_logits`` is (L, N-1, V); ``targets`` is (L, N-1).
    """
    z, is_tensor = _as_tensor(level_logits)
    y = torch.as_tensor(np.asarray(targets) if not isinstance(targets, torch.Tensor) else targets)
    y = y.long()
    if z.ndim != 3 or y.ndim != 2 or tuple(z.shape[:2]) != tuple(y.shape):
        raise ShapeMismatch(f"logits {tuple(z.shape)} vs targets {tuple(y.shape)}")
    if z.shape[0] == 0:
        raise ShapeMismatch("need at least one frame")
    _check_targets(y, z.shape[2])
    logp = torch.log_softmax(z, dim=-1).gather(2, y[..., None]).squeeze(2)
    loss = -logp.sum(1).mean()
    return loss if is_tensor else float(loss)


def _scalar(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


@dataclass(frozen=True)
class StageSchedule:
    stage: int
    lam: float
    backbone_frozen: bool

    def __post_init__(self):
        expected = {1: (0.5, False), 2: (1.0, True)}
        if self.stage not in expected:
            raise ValueError("stage must be 1 or 2")
        if (self.lam, self.backbone_frozen) != expected[self.stage]:
            raise ValueError(f"stage {self.stage} requires lam/frozen = {expected[self.stage]}")

    @classmethod
    def for_stage(cls, stage: int) -> "StageSchedule":
        return cls(stage, 0.5 if stage == 1 else 1.0, stage == 2)


@dataclass(frozen=True)
class LossBreakdown:
    backbone_loss: float
    decoder_loss: float
    lam: float
    combined: float

    def __post_init__(self):
        vals = (self.backbone_loss, self.decoder_loss, self.lam, self.combined)
        if not all(math.isfinite(v) for v in vals):
            raise DivergenceDetected(f"non-finite loss breakdown {vals}")


def combined_loss(backbone, decoder, schedule: StageSchedule):
    """Convex mix of the two losses; works on floats or on graph-carrying tensors.

    Returns ``(combined, LossBreakdown)``.
    """
    lam = schedule.lam
    if schedule.backbone_frozen:
        combined = decoder
    else:
        combined = (1.0 - lam) * backbone + lam * decoder
    return combined, LossBreakdown(_scalar(backbone), _scalar(decoder), lam, _scalar(combined))


# --- gradient verification ----------------------------------------------------------

def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    epsilon: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Max relative error between autograd and central differences.

    Coordinates are sampled uniformly (without replacement) over all entries
    of ``params``.  The relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    params = list(params)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    if not all(torch.isfinite(g).all() for g in grads):
        raise NonFiniteGradient("analytic gradient contains NaN/Inf")
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            which = int(np.searchsorted(bounds, flat, side="right"))
            local = int(flat - (bounds[which - 1] if which else 0))
            p = params[which].view(-1)
            orig = p[local].item()
            p[local] = orig + epsilon
            up = float(loss_fn())
            p[local] = orig - epsilon
            down = float(loss_fn())
            p[local] = orig
            numeric = (up - down) / (2 * epsilon)
            analytic = float(grads[which].view(-1)[local])
            if not math.isfinite(numeric):
                raise NonFiniteGradient("finite difference produced NaN/Inf")
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# --- data ---------------------------------------------------------------------------

@dataclass
class TrainingBatch:
    """One synthetic utterance: reasoner conditioning, target frames and prompt."""

    reasoner_out: ReasonerOutput
    target_frames: np.ndarray  # (L, N)
    prefix: ConditioningPrefix
    features: Optional[np.ndarray] = None
    speaker_seed: int = 0

    def __post_init__(self):
        self.target_frames = np.asarray(self.target_frames, dtype=np.int64)
        if len(self.target_frames) < 1:
            raise ValueError("a training pair needs at least one frame")

    @property
    def L(self) -> int:
        return len(self.target_frames)


def generate_synthetic_pair(
    seed: int,
    length: int,
    *,
    stub: ReasonerStub,
    codec: RvqCodec,
    speaker_seed: Optional[int] = None,
    ref_frames: int = 6,
    speaker_dim: Optional[int] = None,
) -> TrainingBatch:
    """Deterministic (text, speech) pair of ``length`` frames.

    Text: seeded content tokens run through the reasoner stub.  Speech:
    procedural features keyed to the response tokens and the speaker's
    timbre, quantized with ``codec``.  The prompt is a second, shorter
    utterance by the same speaker.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng([seed, 0x7A])
    if speaker_seed is None:
        speaker_seed = int(rng.integers(1 << 30))
    V_text = stub.config.V_text
    n_text = max(1, -(-length // CODES_PER_TEXT) - 1)
    prompt = random_content_tokens(rng, n_text, V_text)
    out = stub.reason(prompt)
    ids = [t.id for t in out.text_tokens]
    feats = token_features(ids, length, speaker_seed, codec.d_c, noise_seed=seed)
    frames = rvq_encode(feats, codec)

    ref_tokens = random_content_tokens(rng, max(1, ref_frames // CODES_PER_TEXT), V_text)
    prefix = ConditioningPrefix()
    if ref_frames > 0:
        ref_feats = token_features([t.id for t in ref_tokens], ref_frames, speaker_seed,
                                   codec.d_c, noise_seed=seed + 7919)
        prefix = ConditioningPrefix(
            ref_audio_codes=rvq_encode(ref_feats, codec),
            ref_text_tokens=ref_tokens,
            speaker_embedding=speaker_vector(speaker_seed, speaker_dim or stub.config.d),
        )
    return TrainingBatch(out, frames, prefix, feats, speaker_seed)


# --- forward pass and loop -------------------------------------------------------------

def batch_losses(backbone: Backbone, refiner: Refiner, batch: TrainingBatch, frozen_backbone=False):
    """Teacher-forced (backbone_loss, decoder_loss) tensors for one utterance."""
    codes = batch.target_frames
    if frozen_backbone:
        with torch.no_grad():
            logits, hidden = backbone.teacher_forced(batch.prefix, batch.reasoner_out, codes[:, 0])
    else:
        logits, hidden = backbone.teacher_forced(batch.prefix, batch.reasoner_out, codes[:, 0])
    lb = backbone_loss(logits, torch.as_tensor(codes[:, 0]))
    targets = torch.as_tensor(codes[:, 1:])
    level_logits = refiner.teacher_forced(torch.as_tensor(codes[:, 0]), hidden, targets)
    ld = decoder_loss(level_logits, targets)
    return lb, ld


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch_size: int = 4
    lr: float = 5e-5
    momentum: float = 0.9
    clip_norm: float = 1.0
    seed: int = 0
    pool_size: int = 16
    min_frames: int = 8
    max_frames: int = 24
    optimizer: str = "adamw"


@dataclass
class StepRecord:
    step: int
    losses: LossBreakdown
    grad_norm: float
    clipped_norm: float

    def line(self) -> str:
        l = self.losses
        return (
            f"{self.step}\t{l.backbone_loss!r}\t{l.decoder_loss!r}\t{l.lam!r}\t"
            f"{l.combined!r}\t{self.grad_norm!r}\t{self.clipped_norm!r}"
        )


TRACE_HEADER = "step\tbackbone_loss\tdecoder_loss\tlambda\tcombined\tgrad_norm\tclipped_norm"


@dataclass
class TrainResult:
    trace: list = field(default_factory=list)

    def write_trace(self, path, append: bool = False) -> None:
        mode = "a" if append else "w"
        with open(path, mode) as fh:
            if not append or fh.tell() == 0:
                fh.write(TRACE_HEADER + "\n")
            for rec in self.trace:
                fh.write(rec.line() + "\n")


def read_trace(path) -> list:
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            vals = line.rstrip("\n").split("\t")
            rows.append({k: (int(v) if k == "step" else float(v)) for k, v in zip(header, vals)})
    return rows


def make_pool(config: TrainConfig, stub: ReasonerStub, codec: RvqCodec, speaker_dim: int) -> list:
    rng = np.random.default_rng([config.seed, 0xDA7A])
    pool = []
    for i in range(config.pool_size):
        length = int(rng.integers(config.min_frames, config.max_frames + 1))
        pool.append(
            generate_synthetic_pair(config.seed * 1_000_003 + i, length, stub=stub, codec=codec,
                                    speaker_seed=int(rng.integers(8)), speaker_dim=speaker_dim)
        )
    return pool


def _global_norm(params) -> float:
    sq = sum(float((p.grad.detach() ** 2).sum()) for p in params if p.grad is not None)
    return math.sqrt(sq)


def train(
    backbone: Backbone,
    refiner: Refiner,
    stub: ReasonerStub,
    codec: RvqCodec,
    schedule: StageSchedule,
    config: TrainConfig = TrainConfig(),
    pool: Optional[list] = None,
    on_step: Optional[Callable[[StepRecord], None]] = None,
) -> TrainResult:
    """Run ``config.steps`` optimizer steps over a fixed, seeded pool of synthetic pairs.

    Batches cycle through the pool in a seed-determined order.  In stage 2
    the backbone is excluded from the optimizer and runs without gradients.
    """
    if config.steps < 1:
        raise ValueError("steps must be >= 1")
    if pool is None:
        pool = make_pool(config, stub, codec, backbone.config.d)
    frozen = schedule.backbone_frozen
    params = list(refiner.parameters())
    if not frozen:
        params += list(backbone.parameters())
    backbone.requires_grad_(not frozen)
    if config.optimizer == "sgd":
        opt = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum)
    elif config.optimizer == "adamw":
        opt = torch.optim.AdamW(params, lr=config.lr)
    else:
        raise ValueError(f"unknown optimizer {config.optimizer!r}")

    order_rng = np.random.default_rng([config.seed, 0x0D])
    order: list = []
    result = TrainResult()
    try:
        for step in range(1, config.steps + 1):
            if len(order) < config.batch_size:
                order.extend(order_rng.permutation(len(pool)).tolist())
            batch = [pool[order.pop(0)] for _ in range(config.batch_size)]
            opt.zero_grad(set_to_none=True)
            lbs, lds = [], []
            for item in batch:
                lb, ld = batch_losses(backbone, refiner, item, frozen_backbone=frozen)
                lbs.append(lb)
                lds.append(ld)
            lb = torch.stack(lbs).mean()
            ld = torch.stack(lds).mean()
            loss, breakdown = combined_loss(lb, ld, schedule)
            loss.backward()
            grad_norm = float(torch.nn.utils.clip_grad_norm_(params, config.clip_norm))
            if not math.isfinite(grad_norm):
                raise DivergenceDetected(f"non-finite gradient norm at step {step}")
            rec = StepRecord(step, breakdown, grad_norm, _global_norm(params))
            opt.step()
            result.trace.append(rec)
            if on_step is not None:
                on_step(rec)
    finally:
        backbone.requires_grad_(True)
    return result
