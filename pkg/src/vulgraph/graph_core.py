"""Core graph containers and adjacency algebra.

Graphs are undirected and unweighted. Adjacency matrices are stored dense
(desk scale, up to a few thousand nodes); sparse variants used elsewhere are
optimizations over the dense semantics defined here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import torch
from torch import Tensor

from .errors import InputError


@dataclass
class LabeledGraph:
    """An undirected graph with node features and a binary label.

    ``adjacency`` is the source of truth for edges: an N x N symmetric 0/1
    matrix with zero diagonal. ``key_node_mask`` marks nodes known to carry
    the label-relevant signal (optional, used for reporting and synthetic
    corpora). ``node_meta`` carries per-node records (code, kind, line) for
    reporting and re-serialization only; the model never reads it.
    """

    features: Tensor           # N x d, float
    adjacency: Tensor          # N x N, 0/1 symmetric, zero diagonal
    label: int                 # 0 or 1
    key_node_mask: Optional[Tensor] = None   # N bool
    node_meta: Optional[list] = None          # list of dicts, len N
    name: str = ""

    @property
    def node_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def edges(self) -> set:
        """Undirected edge set as (i, j) pairs with i < j."""
        idx = torch.nonzero(torch.triu(self.adjacency, diagonal=1))
        return {(int(i), int(j)) for i, j in idx}

    def validate(self) -> "LabeledGraph":
        """Check the container invariants; returns self for chaining."""
        n = self.node_count
        if n < 1:
            raise InputError("graph must have at least one node")
        if self.adjacency.shape != (n, n):
            raise InputError(
                f"adjacency shape {tuple(self.adjacency.shape)} does not match {n} nodes"
            )
        if not torch.equal(self.adjacency, self.adjacency.T):
            raise InputError("adjacency must be symmetric")
        if torch.any(torch.diagonal(self.adjacency) != 0):
            raise InputError("adjacency must have zero diagonal")
        if self.label not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {self.label}")
        if not torch.isfinite(self.features).all():
            raise InputError("features contain non-finite entries")
        if self.key_node_mask is not None and self.key_node_mask.shape[0] != n:
            raise InputError("key_node_mask length does not match node count")
        if self.node_meta is not None and len(self.node_meta) != n:
            raise InputError("node_meta length does not match node count")
        return self


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetric-normalized adjacency D^{-1/2} (A + I) D^{-1/2}."""

    matrix: Tensor
    source_n: int


def build_adjacency(edges: Iterable[Sequence[int]], n: int) -> Tensor:
    """Build a dense symmetric 0/1 adjacency from undirected index pairs.

    Duplicate and reversed pairs collapse to a single entry; self-pairs are
    dropped (the diagonal stays zero). Returned as float32.
    """
    if n <= 0:
        raise InputError(f"node count must be positive, got {n}")
    a = torch.zeros((n, n), dtype=torch.float32)
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < n and 0 <= j < n):
            raise InputError(f"edge ({i}, {j}) out of range for {n} nodes")
        if i == j:
            continue
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def normalize_adjacency(a: Tensor) -> NormalizedAdjacency:
    """Compute D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.

    Adding I before normalization keeps isolated nodes well-defined
    (degree 1, diagonal entry 1). Preserves the input dtype.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"adjacency must be square, got shape {tuple(a.shape)}")
    if not torch.equal(a, a.T):
        raise InputError("adjacency must be symmetric")
    n = a.shape[0]
    a_hat = a + torch.eye(n, dtype=a.dtype, device=a.device)
    deg = a_hat.sum(dim=1)
    d_inv_sqrt = deg.rsqrt()
    norm = d_inv_sqrt.unsqueeze(1) * a_hat * d_inv_sqrt.unsqueeze(0)
    return NormalizedAdjacency(matrix=norm, source_n=n)


def induced_subgraph(g: LabeledGraph, idx: Sequence[int]) -> LabeledGraph:
    """Restrict ``g`` to the nodes in ``idx`` (strictly ascending indices).

    An edge survives iff both endpoints are selected; indices are remapped to
    0..len(idx)-1 in order. Mask, metadata and label carry over.
    """
    if len(idx) == 0:
        raise InputError("index list must be non-empty")
    prev = -1
    for i in idx:
        if i <= prev:
            raise InputError("indices must be strictly ascending (no duplicates)")
        prev = i
    if prev >= g.node_count:
        raise InputError(f"index {prev} out of range for {g.node_count} nodes")
    sel = torch.as_tensor(list(idx), dtype=torch.long)
    return replace(
        g,
        features=g.features[sel],
        adjacency=g.adjacency[sel][:, sel],
        key_node_mask=None if g.key_node_mask is None else g.key_node_mask[sel],
        node_meta=None if g.node_meta is None else [g.node_meta[i] for i in idx],
    )
