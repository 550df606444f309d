import numpy as np
import pytest
import torch

from vulgraph.encoder import Encoder, GnnGtBlock
from vulgraph.errors import InputError
from vulgraph.graph_core import normalize_adjacency

from conftest import random_graph


def make_block(hidden=8, heads=2, seed=0) -> GnnGtBlock:
    block = GnnGtBlock(hidden, heads)
    block.reset_parameters(torch.Generator().manual_seed(seed))
    return block.double()


def make_encoder(hidden=8, blocks=2, heads=2, seed=0) -> Encoder:
    enc = Encoder(hidden, blocks, heads)
    enc.reset_parameters(torch.Generator().manual_seed(seed))
    return enc.double()


def layer_norm_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)  # biased, matching the layer definition
    return (x - mean) / np.sqrt(var + 1e-5) * w + b


def attention_oracle(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                     heads: int) -> np.ndarray:
    """Literal per-head softmax((xWq)(xWk)^T / sqrt(dh)) (xWv), concatenated."""
    n, h = x.shape
    dh = h // heads
    out = np.zeros((n, h))
    for i in range(heads):
        cols = slice(i * dh, (i + 1) * dh)
        q = x @ wq[:, cols]
        k = x @ wk[:, cols]
        v = x @ wv[:, cols]
        scores = q @ k.T / np.sqrt(dh)
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=1, keepdims=True)
        out[:, cols] = attn @ v
    return out


def test_gcn_matches_oracle():
    rng = np.random.default_rng(40)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        g = random_graph(rng, n, 8, dtype=torch.float64)
        block = make_block(seed=int(rng.integers(1000)))
        a_hat = normalize_adjacency(g.adjacency).matrix
        got = block.gcn(g.features, a_hat).numpy(force=True)
        want = np.maximum(
            a_hat.numpy() @ g.features.numpy() @ block.w_g.weight.numpy(force=True).T,
            0.0)
        assert np.abs(got - want).max() <= 1e-10


def test_attention_matches_oracle():
    rng = np.random.default_rng(41)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        heads = int(rng.choice([1, 2, 4]))
        block = make_block(hidden=8, heads=heads, seed=int(rng.integers(1000)))
        x = torch.from_numpy(rng.standard_normal((n, 8)))
        got = block.attention(x).numpy(force=True)
        # Linear weights are stored (out, in); head i owns output rows i*dh:(i+1)*dh,
        # i.e. columns of the transposed matrix.
        want = attention_oracle(x.numpy(),
                                block.w_q.weight.numpy(force=True).T,
                                block.w_k.weight.numpy(force=True).T,
                                block.w_v.weight.numpy(force=True).T, heads)
        assert np.abs(got - want).max() <= 1e-10


def test_attention_rows_are_convex_mixes_of_values():
    # Softmax weights sum to 1, so each output row lies inside the value hull.
    block = make_block()
    x = torch.randn(6, 8, dtype=torch.float64)
    out = block.attention(x)
    v = (block.w_v(x)).detach()
    for h in range(block.num_heads):
        cols = slice(h * block.head_dim, (h + 1) * block.head_dim)
        assert out[:, cols].max() <= v[:, cols].max() + 1e-9
        assert out[:, cols].min() >= v[:, cols].min() - 1e-9


def test_feed_forward_matches_oracle():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        block = make_block(seed=int(rng.integers(1000)))
        x = torch.from_numpy(rng.standard_normal((n, 8)) * 10.0)
        got = block.feed_forward(x).numpy(force=True)
        u = np.maximum(
            layer_norm_oracle(x.numpy(), block.ln1.weight.numpy(force=True),
                              block.ln1.bias.numpy(force=True))
            @ block.w_f1.weight.numpy(force=True).T, 0.0)
        want = layer_norm_oracle(u, block.ln2.weight.numpy(force=True),
                                 block.ln2.bias.numpy(force=True)) \
            @ block.w_f2.weight.numpy(force=True).T
        assert np.abs(got - want).max() <= 1e-10


def test_feed_forward_expansion_factor():
    block = make_block(hidden=8)
    assert block.w_f1.weight.shape == (32, 8)
    assert block.w_f2.weight.shape == (8, 32)
    assert block.ln2.normalized_shape == (32,)


def test_block_residual_wiring():
    rng = np.random.default_rng(43)
    g = random_graph(rng, 7, 8, dtype=torch.float64)
    block = make_block()
    a_hat = normalize_adjacency(g.adjacency).matrix
    x1 = block.gcn(g.features, a_hat)
    x2 = block.attention(x1) + x1
    want = block.feed_forward(x2) + x2
    got = block(g.features, a_hat)
    assert torch.allclose(got, want, atol=1e-12)


def test_block_ablation_identities():
    rng = np.random.default_rng(44)
    g = random_graph(rng, 6, 8, dtype=torch.float64)
    block = make_block()
    a_hat = normalize_adjacency(g.adjacency).matrix
    # no-gnn: the convolution sublayer is skipped entirely.
    no_gnn = block(g.features, a_hat, use_gnn=False)
    x2 = block.attention(g.features) + g.features
    assert torch.allclose(no_gnn, block.feed_forward(x2) + x2, atol=1e-12)
    # no-gt: attention and feed-forward are skipped.
    no_gt = block(g.features, a_hat, use_gt=False)
    assert torch.allclose(no_gt, block.gcn(g.features, a_hat), atol=1e-12)
    # both off: identity.
    assert torch.equal(block(g.features, a_hat, use_gnn=False, use_gt=False),
                       g.features)


def test_encoder_readout_is_node_mean():
    rng = np.random.default_rng(45)
    g = random_graph(rng, 9, 8, dtype=torch.float64)
    enc = make_encoder()
    a_hat = normalize_adjacency(g.adjacency).matrix
    x = g.features
    for block in enc.blocks:
        x = block(x, a_hat)
    want = x.mean(dim=0)
    assert torch.allclose(enc.encode(g.features, a_hat), want, atol=1e-12)


def test_encoder_permutation_equivariance():
    rng = np.random.default_rng(46)
    for _ in range(10):
        n = int(rng.integers(2, 12))
        g = random_graph(rng, n, 8, dtype=torch.float64)
        enc = make_encoder(seed=int(rng.integers(1000)))
        a_hat = normalize_adjacency(g.adjacency).matrix
        base = enc.encode(g.features, a_hat)
        perm = torch.from_numpy(rng.permutation(n))
        pa = normalize_adjacency(g.adjacency[perm][:, perm]).matrix
        permuted = enc.encode(g.features[perm], pa)
        assert torch.allclose(base, permuted, atol=1e-9)


def test_encoder_batched_matches_single():
    rng = np.random.default_rng(47)
    enc = make_encoder()
    sizes = [3, 7, 5, 1]
    graphs = [random_graph(rng, n, 8, dtype=torch.float64) for n in sizes]
    pad = max(sizes)
    xb = torch.zeros(len(sizes), pad, 8, dtype=torch.float64)
    ab = torch.zeros(len(sizes), pad, pad, dtype=torch.float64)
    mask = torch.zeros(len(sizes), pad, dtype=torch.bool)
    for i, g in enumerate(graphs):
        n = g.node_count
        xb[i, :n] = g.features
        ab[i, :n, :n] = normalize_adjacency(g.adjacency).matrix
        mask[i, :n] = True
    batched = enc.encode(xb, ab, mask)
    for i, g in enumerate(graphs):
        single = enc.encode(g.features, normalize_adjacency(g.adjacency).matrix)
        assert torch.allclose(batched[i], single, atol=1e-10)


def test_encoder_padding_cannot_leak():
    """Garbage in padded rows must not affect real-node outputs."""
    rng = np.random.default_rng(48)
    enc = make_encoder()
    g = random_graph(rng, 5, 8, dtype=torch.float64)
    pad = 9
    def build(fill):
        xb = torch.full((1, pad, 8), fill, dtype=torch.float64)
        ab = torch.zeros(1, pad, pad, dtype=torch.float64)
        xb[0, :5] = g.features
        ab[0, :5, :5] = normalize_adjacency(g.adjacency).matrix
        mask = torch.zeros(1, pad, dtype=torch.bool)
        mask[0, :5] = True
        return enc.encode(xb, ab, mask)
    assert torch.allclose(build(0.0), build(1e6), atol=1e-9)


def test_encoder_validation():
    with pytest.raises(InputError):
        GnnGtBlock(8, 3)  # not divisible
    with pytest.raises(InputError):
        Encoder(8, num_blocks=0)
    enc = make_encoder()
    with pytest.raises(InputError):
        enc.encode(torch.zeros(3, 4, dtype=torch.float64), torch.eye(3, dtype=torch.float64))
    with pytest.raises(InputError):
        enc.encode(torch.zeros(1, 3, 8, dtype=torch.float64),
                   torch.zeros(1, 3, 3, dtype=torch.float64))  # missing mask
