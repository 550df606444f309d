"""Self-adaptive importance pooling: shrink a graph until it fits a node budget.

One pooling pass projects node features through a two-layer MLP, smooths them
with personalized-PageRank style propagation over the normalized adjacency,
scores every node against a learned direction, keeps the top ceil(k * N)
nodes, and gates the survivors by the sigmoid of their scores.  The refine
loop repeats the pass with a growing keep ratio (0.1, 0.2, ... capped at 0.5)
until at most ``threshold_t`` nodes remain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import torch
from torch import Tensor, nn

from .errors import InputError, NumericalError
from .graph_core import LabeledGraph, NormalizedAdjacency, induced_subgraph, normalize_adjacency
from .layers import seeded_dropout, xavier_uniform_

# Above this node count APPNP switches from a dense N x N matmul to a sparse
# one; results are identical, the sparse path just avoids materializing the
# normalized adjacency for graphs with thousands of nodes.
SPARSE_PROPAGATION_MIN_NODES = 128

# Guard against float dust in k * N (0.1 * 1000 = 100.00000000000001) so the
# kept count is ceil of the exact product.
_CEIL_EPS = 1e-9


@dataclass
class RefineConfig:
    """Knobs for the pooling loop."""

    threshold_t: int = 40
    appnp_l: int = 8
    appnp_alpha: float = 0.2
    k_start: float = 0.1
    k_step: float = 0.1
    k_cap: float = 0.5
    max_iters: int = 16

    def validate(self) -> "RefineConfig":
        if self.threshold_t < 1:
            raise InputError(f"threshold_t must be >= 1, got {self.threshold_t}")
        if self.appnp_l < 0:
            raise InputError(f"appnp_l must be >= 0, got {self.appnp_l}")
        if not 0.0 <= self.appnp_alpha <= 1.0:
            raise InputError(f"appnp_alpha must be in [0, 1], got {self.appnp_alpha}")
        if not 0.0 < self.k_start < 1.0:
            raise InputError(f"k_start must be in (0, 1), got {self.k_start}")
        if not 0.0 < self.k_cap < 1.0:
            raise InputError(f"k_cap must be in (0, 1), got {self.k_cap}")
        if self.k_cap < self.k_start:
            raise InputError("k_cap must be >= k_start")
        if self.k_step < 0.0:
            raise InputError(f"k_step must be >= 0, got {self.k_step}")
        if self.max_iters < 1:
            raise InputError(f"max_iters must be >= 1, got {self.max_iters}")
        return self


@dataclass
class RefineStep:
    """Record of one pooling pass."""

    n_before: int
    n_after: int
    k_used: float
    kept_indices: list[int]

    def to_dict(self) -> dict:
        return {
            "n_before": self.n_before,
            "n_after": self.n_after,
            "k_used": self.k_used,
            "kept_indices": list(self.kept_indices),
        }


@dataclass
class RefineTrace:
    """Full history of a refine loop, serializable for audit output."""

    steps: list[RefineStep] = field(default_factory=list)
    terminated_by: str = "below_threshold"

    @property
    def sizes(self) -> list[int]:
        return [s.n_after for s in self.steps]

    @property
    def pooled(self) -> bool:
        return bool(self.steps)

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "terminated_by": self.terminated_by,
        }


class SAPool(nn.Module):
    """Parameters for the pooling pass.

    ``w_m2_in`` projects raw node features (first pass only); ``w_m2_hidden``
    handles later passes whose inputs already live in the hidden space.  All
    linear maps are bias-free.
    """

    def __init__(self, in_dim: int, hidden_dim: int, dropout_rate: float = 0.2):
        super().__init__()
        if in_dim < 1 or hidden_dim < 1:
            raise InputError("in_dim and hidden_dim must be >= 1")
        if not 0.0 <= dropout_rate < 1.0:
            raise InputError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.dropout_rate = dropout_rate
        self.w_m2_in = nn.Linear(in_dim, hidden_dim, bias=False)
        self.w_m2_hidden = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_m1 = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.h = nn.Parameter(torch.empty(hidden_dim))

    def reset_parameters(self, generator: torch.Generator) -> None:
        xavier_uniform_(self.w_m2_in.weight, generator)
        xavier_uniform_(self.w_m2_hidden.weight, generator)
        xavier_uniform_(self.w_m1.weight, generator)
        xavier_uniform_(self.h, generator)


def project_features(x: Tensor, params: SAPool, *, raw: bool, training: bool = False,
                     generator: Optional[torch.Generator] = None) -> Tensor:
    """Two-layer MLP with dropout on the outer map: Drop(W_m1 relu(W_m2 x))."""
    first = params.w_m2_in if raw else params.w_m2_hidden
    if x.ndim != 2 or x.shape[1] != first.in_features:
        raise InputError(
            f"feature matrix must be N x {first.in_features}, got {tuple(x.shape)}"
        )
    x = x.to(first.weight.dtype)
    u = torch.relu(first(x))
    return seeded_dropout(params.w_m1(u), params.dropout_rate, training, generator)


def sparse_normalized_adjacency(adjacency: Tensor) -> Tensor:
    """Sparse COO D^{-1/2} (A + I) D^{-1/2} for a dense 0/1 adjacency."""
    n = adjacency.shape[0]
    off = adjacency.nonzero().t()
    deg_isqrt = (adjacency.sum(dim=1) + 1.0).rsqrt()
    diag_idx = torch.arange(n, device=adjacency.device)
    indices = torch.cat([off, diag_idx.expand(2, n)], dim=1)
    values = torch.cat([deg_isqrt[off[0]] * deg_isqrt[off[1]], deg_isqrt * deg_isqrt])
    return torch.sparse_coo_tensor(indices, values, (n, n), dtype=adjacency.dtype,
                                   check_invariants=False).coalesce()


def appnp_propagate(x0: Tensor, norm_adj: Union[NormalizedAdjacency, Tensor], l: int,
                    alpha: float) -> Tensor:
    """l rounds of x <- (1 - alpha) * A_hat x + alpha * x0."""
    if l < 0:
        raise InputError(f"propagation depth must be >= 0, got {l}")
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    a_hat = norm_adj.matrix if isinstance(norm_adj, NormalizedAdjacency) else norm_adj
    x = x0
    for _ in range(l):
        ax = torch.sparse.mm(a_hat, x) if a_hat.is_sparse else a_hat @ x
        x = (1.0 - alpha) * ax + alpha * x0
    return x


def score_nodes(x: Tensor, h: Tensor) -> Tensor:
    """Project each node feature onto the unit-normalized scoring direction."""
    norm = torch.linalg.vector_norm(h.to(x.dtype))
    if not torch.isfinite(norm) or norm == 0.0:
        raise NumericalError("scoring vector has zero or non-finite norm")
    return x @ (h.to(x.dtype) / norm)


def topk_count(n: int, k: float) -> int:
    """Kept-node count: ceil(k * n) with float-dust protection, at least 1."""
    return max(1, math.ceil(k * n - _CEIL_EPS))


def select_topk(z: Tensor, k: float) -> Tensor:
    """Indices of the ceil(k * N) highest scores, ascending; ties keep lower index."""
    if z.ndim != 1 or z.numel() == 0:
        raise InputError(f"scores must be a non-empty vector, got shape {tuple(z.shape)}")
    if not 0.0 < k < 1.0:
        raise InputError(f"keep ratio must be in (0, 1), got {k}")
    m = topk_count(z.numel(), k)
    order = torch.argsort(z.detach(), descending=True, stable=True)
    return torch.sort(order[:m]).values


def pool_once(graph: LabeledGraph, params: SAPool, cfg: RefineConfig, k: float, *,
              raw: bool, training: bool = False,
              generator: Optional[torch.Generator] = None,
              forced_indices: Optional[Tensor] = None) -> tuple[LabeledGraph, RefineStep]:
    """One pooling pass: project, propagate, score, select, gate.

    ``forced_indices`` replays a previously recorded selection, which lets
    numeric gradient checks hold the discrete choice fixed.
    """
    n = graph.node_count
    xp = project_features(graph.features, params, raw=raw, training=training,
                          generator=generator)
    adj = graph.adjacency.to(xp.dtype)
    if n >= SPARSE_PROPAGATION_MIN_NODES:
        a_hat: Union[NormalizedAdjacency, Tensor] = sparse_normalized_adjacency(adj)
    else:
        a_hat = normalize_adjacency(adj)
    xa = appnp_propagate(xp, a_hat, cfg.appnp_l, cfg.appnp_alpha)
    z = score_nodes(xa, params.h)
    idx = select_topk(z, k) if forced_indices is None else forced_indices.to(torch.long)
    gated = xa[idx] * torch.sigmoid(z[idx]).unsqueeze(1)
    pooled = induced_subgraph(graph, idx)
    pooled.features = gated
    step = RefineStep(n_before=n, n_after=int(idx.numel()), k_used=k,
                      kept_indices=[int(i) for i in idx])
    return pooled, step


def refine_graph(graph: LabeledGraph, params: SAPool, cfg: RefineConfig, *,
                 training: bool = False, generator: Optional[torch.Generator] = None,
                 forced_steps: Optional[Sequence[RefineStep]] = None
                 ) -> tuple[LabeledGraph, RefineTrace]:
    """Pool repeatedly until the graph has at most ``cfg.threshold_t`` nodes.

    The keep ratio starts at ``k_start`` and grows by ``k_step`` per pass up
    to ``k_cap``.  A graph already at or under the budget passes through
    unchanged with an empty trace.  With ``forced_steps`` the loop replays
    exactly those recorded selections instead of choosing its own.
    """
    cfg.validate()
    if forced_steps is not None:
        work = graph
        steps: list[RefineStep] = []
        for i, rec in enumerate(forced_steps):
            work, step = pool_once(
                work, params, cfg, rec.k_used, raw=(i == 0), training=training,
                generator=generator,
                forced_indices=torch.tensor(rec.kept_indices, dtype=torch.long))
            steps.append(step)
        done = work.node_count <= cfg.threshold_t or not steps
        return work, RefineTrace(steps, "below_threshold" if done else "max_iters")

    if graph.node_count <= cfg.threshold_t:
        return graph, RefineTrace([], "below_threshold")

    work = graph
    steps = []
    while work.node_count > cfg.threshold_t and len(steps) < cfg.max_iters:
        # Computed from the pass index (not accumulated) and rounded so the
        # schedule values stay exact: 0.1 + 0.1 + 0.1 != 0.3 in floats.
        k = min(round(cfg.k_start + len(steps) * cfg.k_step, 12), cfg.k_cap)
        work, step = pool_once(work, params, cfg, k, raw=(not steps),
                               training=training, generator=generator)
        steps.append(step)
    done = work.node_count <= cfg.threshold_t
    return work, RefineTrace(steps, "below_threshold" if done else "max_iters")
