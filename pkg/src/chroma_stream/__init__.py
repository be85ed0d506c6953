"""Streaming speech generation with a 1:2 text/audio schedule, RVQ refinement and a causal codec."""
from .backbone import Backbone, BackboneConfig, ConditioningPrefix
from .codec import (
    CodecConfig,
    RvqCodec,
    Waveform,
    build_codec,
    codec_decode_batched,
    reconstruction_error,
    rvq_decode,
    rvq_encode,
    synth_waveform,
)
from .config import SystemConfig, load_config, parse_config
from .errors import *  # noqa: F401,F403
from .harness import instrument_generation
from .latency import (
    ComponentTiming,
    LatencyReport,
    SpeakerEmbedding,
    compute_rtf,
    compute_sim,
    emit_report,
    extract_speaker_embedding,
    parse_report,
)
from .layers import KvCache
from .pipeline import ChromaSystem
from .reasoner import ReasonerOutput, ReasonerStub, StubConfig
from .refiner import RefineInput, Refiner, RefinerConfig
from .sampling import SamplerConfig
from .tokens import (
    AcousticFrame,
    InterleavedSequence,
    TextToken,
    deinterleave,
    interleave,
    text_token,
    validate_ratio,
)
from .training import (
    StageSchedule,
    TrainConfig,
    backbone_loss,
    combined_loss,
    decoder_loss,
    generate_synthetic_pair,
    grad_check,
    train,
)

__version__ = "0.1.0"
