import numpy as np
import pytest
import torch

from chroma_stream.backbone import Backbone, BackboneConfig
from chroma_stream.codec import CodecConfig, build_codec
from chroma_stream.config import SystemConfig
from chroma_stream.pipeline import ChromaSystem
from chroma_stream.reasoner import ReasonerStub, StubConfig
from chroma_stream.refiner import Refiner, RefinerConfig
from chroma_stream.synthetic import corpus_features

torch.set_num_threads(1)

# Criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {cid:2d}: {detail}")


TINY = dict(d=16, n_layers=2, n_heads=2, V=32, N=4, V_text=40, context_limit=256)


@pytest.fixture(scope="session")
def tiny_stub():
    return ReasonerStub(StubConfig(d=TINY["d"], V_text=TINY["V_text"], seed=3))


@pytest.fixture(scope="session")
def tiny_backbone():
    return Backbone(BackboneConfig(**TINY, seed=4))


@pytest.fixture(scope="session")
def tiny_refiner():
    return Refiner(RefinerConfig(d_r=8, n_layers=2, n_heads=2, N=TINY["N"], V=TINY["V"],
                                 d_backbone=TINY["d"], seed=5))


@pytest.fixture(scope="session")
def tiny_codec():
    cfg = CodecConfig(N=TINY["N"], V=TINY["V"], d_c=8, frame_hop=40, sample_rate=2000,
                      kmeans_iters=10, seed=6)
    return build_codec(corpus_features(1024, cfg.d_c, seed=6), cfg)


@pytest.fixture(scope="session")
def codec():
    """Default-size codec trained on the synthetic corpus."""
    return ChromaSystem.build(SystemConfig()).codec


@pytest.fixture(scope="session")
def system():
    return ChromaSystem.build(SystemConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
