import json
import math

import numpy as np
import pytest
import torch

from vulgraph.errors import InputError, NumericalError
from vulgraph.graph_core import normalize_adjacency
from vulgraph.sapool import (RefineConfig, SAPool, appnp_propagate, pool_once,
                             project_features, refine_graph, score_nodes,
                             select_topk, sparse_normalized_adjacency, topk_count)

from conftest import random_graph


def make_pool(in_dim=6, hidden=8, seed=0, dtype=torch.float64) -> SAPool:
    pool = SAPool(in_dim, hidden, dropout_rate=0.2)
    pool.reset_parameters(torch.Generator().manual_seed(seed))
    return pool.to(dtype)


# --- top-k selection ---------------------------------------------------------

def test_select_topk_basic():
    idx = select_topk(torch.tensor([3.0, 1.0, 2.0]), 0.5)
    assert idx.tolist() == [0, 2]


def test_select_topk_ties_keep_lower_index():
    idx = select_topk(torch.tensor([5.0, 5.0, 5.0, 5.0]), 0.5)
    assert idx.tolist() == [0, 1]


def test_select_topk_returns_ascending():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        z = torch.from_numpy(rng.standard_normal(n))
        k = float(rng.uniform(0.05, 0.95))
        idx = select_topk(z, k)
        lst = idx.tolist()
        assert lst == sorted(lst)
        assert len(lst) == topk_count(n, k)
        # Every kept score >= every dropped score.
        dropped = [i for i in range(n) if i not in set(lst)]
        if dropped:
            assert z[idx].min() >= z[dropped].max()


def test_select_topk_validates():
    with pytest.raises(InputError):
        select_topk(torch.tensor([1.0]), 0.0)
    with pytest.raises(InputError):
        select_topk(torch.tensor([1.0]), 1.0)
    with pytest.raises(InputError):
        select_topk(torch.tensor([]), 0.5)
    with pytest.raises(InputError):
        select_topk(torch.zeros(2, 2), 0.5)


def test_topk_count_exact_arithmetic():
    """ceil(k*n) must behave as exact rational arithmetic for schedule ratios
    (0.1 * 1000 is 100.00000000000001 in binary floating point)."""
    for tenths in range(1, 10):
        k = tenths / 10.0
        for n in range(1, 2001):
            want = max(1, -((-n * tenths) // 10))
            assert topk_count(n, k) == want, (n, k)
    assert topk_count(1000, 0.1) == 100
    assert topk_count(41, 0.1) == 5


# --- projection / propagation / scoring --------------------------------------

def test_project_features_shapes_and_paths():
    pool = make_pool(in_dim=6, hidden=8)
    x = torch.randn(5, 6, dtype=torch.float64)
    raw_out = project_features(x, pool, raw=True)
    assert raw_out.shape == (5, 8)
    hid = torch.randn(5, 8, dtype=torch.float64)
    hid_out = project_features(hid, pool, raw=False)
    assert hid_out.shape == (5, 8)
    with pytest.raises(InputError):
        project_features(hid, pool, raw=True)  # wrong width for the raw map
    with pytest.raises(InputError):
        project_features(x, pool, raw=False)


def test_project_features_is_mlp_with_relu():
    pool = make_pool()
    x = torch.randn(4, 6, dtype=torch.float64)
    got = project_features(x, pool, raw=True)
    want = torch.relu(x @ pool.w_m2_in.weight.T) @ pool.w_m1.weight.T
    assert torch.allclose(got, want, atol=1e-12)


def test_project_features_dropout_only_in_training():
    pool = make_pool()
    x = torch.randn(50, 6, dtype=torch.float64)
    eval_out = project_features(x, pool, raw=True, training=False)
    g1 = torch.Generator().manual_seed(5)
    train_out = project_features(x, pool, raw=True, training=True, generator=g1)
    assert not torch.equal(eval_out, train_out)
    # Zeroed entries and 1/(1-rate) scaling on the survivors.
    mask = train_out != 0
    ratio = train_out[mask] / eval_out[mask]
    assert torch.allclose(ratio, torch.full_like(ratio, 1.0 / 0.8), atol=1e-9)
    # Same generator state reproduces the same mask.
    g2 = torch.Generator().manual_seed(5)
    again = project_features(x, pool, raw=True, training=True, generator=g2)
    assert torch.equal(train_out, again)


def appnp_oracle(x0: np.ndarray, a_hat: np.ndarray, l: int, alpha: float) -> np.ndarray:
    x = x0.copy()
    for _ in range(l):
        x = (1.0 - alpha) * (a_hat @ x) + alpha * x0
    return x


def test_appnp_matches_oracle():
    rng = np.random.default_rng(21)
    for _ in range(100):
        n = int(rng.integers(1, 12))
        g = random_graph(rng, n, 4, dtype=torch.float64)
        norm = normalize_adjacency(g.adjacency)
        l = int(rng.integers(0, 9))
        alpha = float(rng.uniform(0.0, 1.0))
        got = appnp_propagate(g.features, norm, l, alpha).numpy()
        want = appnp_oracle(g.features.numpy(), norm.matrix.numpy(), l, alpha)
        assert np.abs(got - want).max() <= 1e-10


def test_appnp_edge_cases():
    rng = np.random.default_rng(22)
    g = random_graph(rng, 6, 3, dtype=torch.float64)
    norm = normalize_adjacency(g.adjacency)
    assert torch.equal(appnp_propagate(g.features, norm, 0, 0.2), g.features)
    # alpha=1 teleports fully back to the input at every hop.
    assert torch.allclose(appnp_propagate(g.features, norm, 5, 1.0), g.features)
    with pytest.raises(InputError):
        appnp_propagate(g.features, norm, -1, 0.2)
    with pytest.raises(InputError):
        appnp_propagate(g.features, norm, 2, 1.5)


def test_sparse_normalization_equals_dense():
    rng = np.random.default_rng(23)
    for _ in range(20):
        n = int(rng.integers(2, 40))
        g = random_graph(rng, n, 3, edge_prob=0.3, dtype=torch.float64)
        dense = normalize_adjacency(g.adjacency).matrix
        sparse = sparse_normalized_adjacency(g.adjacency)
        assert torch.allclose(sparse.to_dense(), dense, atol=1e-12)
        x = torch.from_numpy(rng.standard_normal((n, 5)))
        via_sparse = appnp_propagate(x, sparse, 4, 0.2)
        via_dense = appnp_propagate(x, normalize_adjacency(g.adjacency), 4, 0.2)
        assert torch.allclose(via_sparse, via_dense, atol=1e-10)


def test_score_nodes_oracle_and_scale_invariance():
    rng = np.random.default_rng(24)
    for _ in range(100):
        n, d = int(rng.integers(1, 10)), int(rng.integers(1, 8))
        x = torch.from_numpy(rng.standard_normal((n, d)))
        h = torch.from_numpy(rng.standard_normal(d))
        got = score_nodes(x, h).numpy()
        want = x.numpy() @ (h.numpy() / np.linalg.norm(h.numpy()))
        assert np.abs(got - want).max() <= 1e-10
        # Scoring depends only on the direction of h.
        assert torch.allclose(score_nodes(x, 3.0 * h), score_nodes(x, h), atol=1e-10)


def test_score_nodes_zero_vector_raises():
    with pytest.raises(NumericalError):
        score_nodes(torch.randn(3, 4), torch.zeros(4))


# --- pooling passes ----------------------------------------------------------

def test_pool_once_gates_selected_nodes():
    rng = np.random.default_rng(30)
    g = random_graph(rng, 12, 6, dtype=torch.float64)
    pool = make_pool()
    cfg = RefineConfig()
    pooled, step = pool_once(g, pool, cfg, 0.5, raw=True)
    # Recompute the pipeline stepwise and check the gated output.
    xp = project_features(g.features, pool, raw=True)
    xa = appnp_propagate(xp, normalize_adjacency(g.adjacency.to(torch.float64)),
                         cfg.appnp_l, cfg.appnp_alpha)
    z = score_nodes(xa, pool.h)
    idx = select_topk(z, 0.5)
    assert step.kept_indices == idx.tolist()
    want = xa[idx] * torch.sigmoid(z[idx]).unsqueeze(1)
    assert torch.allclose(pooled.features, want, atol=1e-12)
    assert pooled.node_count == 6
    assert step.n_before == 12 and step.n_after == 6 and step.k_used == 0.5
    # Adjacency is the induced subgraph of the originals.
    assert torch.equal(pooled.adjacency, g.adjacency[idx][:, idx])


def test_refine_passthrough_below_threshold():
    rng = np.random.default_rng(31)
    g = random_graph(rng, 30, 6)
    pool = make_pool(dtype=torch.float32)
    out, trace = refine_graph(g, pool, RefineConfig(threshold_t=40))
    assert out is g
    assert trace.steps == [] and trace.terminated_by == "below_threshold"
    assert not trace.pooled


def test_refine_schedule_1000_nodes():
    rng = np.random.default_rng(32)
    g = random_graph(rng, 1000, 6, edge_prob=0.01)
    pool = make_pool(dtype=torch.float32)
    out, trace = refine_graph(g, pool, RefineConfig(threshold_t=40))
    assert trace.sizes == [100, 20]
    assert [s.k_used for s in trace.steps] == [0.1, 0.2]
    assert out.node_count == 20
    assert trace.terminated_by == "below_threshold"


def test_refine_schedule_41_nodes():
    rng = np.random.default_rng(33)
    g = random_graph(rng, 41, 6)
    pool = make_pool(dtype=torch.float32)
    out, trace = refine_graph(g, pool, RefineConfig(threshold_t=40))
    assert trace.sizes == [5]
    assert out.node_count == 5


def test_refine_schedule_closed_form_to_single_node():
    cfg = RefineConfig(threshold_t=1, max_iters=16)
    rng = np.random.default_rng(34)
    g = random_graph(rng, 200, 6, edge_prob=0.05)
    pool = make_pool(dtype=torch.float32)
    out, trace = refine_graph(g, pool, cfg)
    # 200 -> 20 (k=0.1) -> 4 (0.2) -> 2 (0.3) -> 1 (0.4); never reaches the cap.
    assert [s.k_used for s in trace.steps] == [0.1, 0.2, 0.3, 0.4]
    assert trace.sizes == [20, 4, 2, 1]
    assert out.node_count == 1
    n = 200
    for s in trace.steps:
        assert s.n_after == topk_count(n, s.k_used)
        n = s.n_after


def test_refine_k_caps():
    cfg = RefineConfig(threshold_t=1, k_start=0.45, k_step=0.3, k_cap=0.5,
                       max_iters=16)
    rng = np.random.default_rng(38)
    g = random_graph(rng, 200, 6, edge_prob=0.05)
    pool = make_pool(dtype=torch.float32)
    out, trace = refine_graph(g, pool, cfg)
    ks = [s.k_used for s in trace.steps]
    assert ks[0] == 0.45
    assert all(k == 0.5 for k in ks[1:])
    assert out.node_count == 1


def test_refine_max_iters_bound():
    cfg = RefineConfig(threshold_t=1, k_start=0.9, k_step=0.0, k_cap=0.9, max_iters=4)
    rng = np.random.default_rng(35)
    g = random_graph(rng, 100, 6)
    pool = make_pool(dtype=torch.float32)
    out, trace = refine_graph(g, pool, cfg)
    assert len(trace.steps) == 4
    assert trace.terminated_by == "max_iters"
    assert out.node_count > 1


def test_refine_trace_serializes():
    rng = np.random.default_rng(36)
    g = random_graph(rng, 120, 6)
    pool = make_pool(dtype=torch.float32)
    _, trace = refine_graph(g, pool, RefineConfig())
    doc = json.loads(json.dumps(trace.to_dict()))
    assert doc["terminated_by"] == "below_threshold"
    assert [s["n_after"] for s in doc["steps"]] == trace.sizes
    assert all(isinstance(i, int) for s in doc["steps"] for i in s["kept_indices"])


def test_refine_forced_replay_reproduces():
    rng = np.random.default_rng(37)
    g = random_graph(rng, 150, 6, dtype=torch.float64)
    pool = make_pool()
    out, trace = refine_graph(g, pool, RefineConfig())
    replay, replay_trace = refine_graph(g, pool, RefineConfig(),
                                        forced_steps=trace.steps)
    assert torch.allclose(out.features, replay.features, atol=1e-12)
    assert replay_trace.sizes == trace.sizes
    assert [s.kept_indices for s in replay_trace.steps] == \
        [s.kept_indices for s in trace.steps]


def test_refine_config_validation():
    with pytest.raises(InputError):
        RefineConfig(threshold_t=0).validate()
    with pytest.raises(InputError):
        RefineConfig(k_start=0.0).validate()
    with pytest.raises(InputError):
        RefineConfig(k_cap=1.0).validate()
    with pytest.raises(InputError):
        RefineConfig(k_start=0.5, k_cap=0.3).validate()
    with pytest.raises(InputError):
        RefineConfig(appnp_alpha=1.2).validate()
    with pytest.raises(InputError):
        RefineConfig(max_iters=0).validate()
