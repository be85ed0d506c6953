import numpy as np
import torch

from chroma_stream.layers import CausalTransformer, ordered_matmul, ordered_sum

torch.manual_seed(0)


def test_ordered_ops_match_torch():
    x = torch.randn(3, 5, 7, dtype=torch.float64)
    w = torch.randn(7, 4, dtype=torch.float64)
    assert torch.allclose(ordered_matmul(x, w), x @ w, atol=1e-12)
    assert torch.allclose(ordered_sum(x), x.sum(-1, keepdim=True), atol=1e-12)


def test_ordered_matmul_independent_of_batch_shape():
    x = torch.randn(6, 7, dtype=torch.float64)
    w = torch.randn(7, 4, dtype=torch.float64)
    full = ordered_matmul(x, w)
    rows = torch.cat([ordered_matmul(x[i:i + 1], w) for i in range(6)])
    assert torch.equal(full, rows)


def test_cache_clone_is_independent():
    tf = CausalTransformer(8, 2, 2, 16)
    cache = tf.new_cache()
    with torch.no_grad():
        tf.extend(torch.randn(3, 8, dtype=torch.float64), cache)
        copy = cache.clone()
        tf.extend(torch.randn(1, 8, dtype=torch.float64), cache)
    assert copy.cached_length == 3 and cache.cached_length == 4


def test_batched_forward_matches_single():
    tf = CausalTransformer(8, 2, 2, 16)
    x = torch.randn(4, 5, 8, dtype=torch.float64)
    with torch.no_grad():
        batched = tf(x)
        single = torch.stack([tf(x[i]) for i in range(4)])
    assert torch.allclose(batched, single, atol=1e-13)


def test_frozen_transformer_steps_match_full_pass():
    from chroma_stream.layers import FrozenTransformer

    tf = CausalTransformer(12, 2, 3, 10)
    x = torch.randn(7, 12, dtype=torch.float64)
    with torch.no_grad():
        full = tf(x).numpy()
    frozen = FrozenTransformer(tf)
    state = frozen.new_state(10)
    steps = [frozen.step(row, state) for row in x.numpy()]
    assert abs(full - np.stack(steps)).max() < 1e-12
