"""Seeded synthetic corpora: long-tail graph sizes with planted label motifs.

Each graph is a random tree plus a few noise edges (connected before any
pooling).  Every node independently becomes a *signature* node with
probability ``sig_rate``, in both classes; signature nodes carry louder
feature noise plus a shift of random sign (two flavors of the same marker,
think source-like and sink-like calls).  A positive graph additionally plants
a motif — ``motif_size`` signature nodes, half of each flavor, wired into a
clique — and flags it in ``key_node_mask``.

This mirrors how risky calls behave in real code: dangerous APIs appear in
safe and vulnerable functions alike, and what marks a vulnerability is a
tight web of dependencies among several of them.  It also shapes how the task
scales: a small graph has few scattered signature nodes, so signature content
is a strong hint, while a large graph accumulates them in both classes and a
classifier has to notice that some of the signature nodes are wired together.
The same corpora can be emitted in the ingest JSON-lines format, with node
``code`` fields synthesized as token strings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import InputError
from .graph_core import LabeledGraph, build_adjacency

# Signature feature shift (wired and scattered signature nodes alike) along
# the normalized all-ones direction, applied with a per-node random sign.
# Strong enough that a single signature node is recognizable; the label still
# requires telling wired from scattered signatures, because both flavors
# appear in both classes.
MOTIF_SHIFT = 5.0

# Signature nodes also carry louder feature noise — call sites with richer
# token statistics than straight-line assignments — so they sit in the tails
# of any linear projection of the features, not just the shift axis.
SIG_NOISE_SCALE = 2.5


@dataclass
class SynthConfig:
    n_graphs: int = 2000
    pareto_shape: float = 1.1
    min_n: int = 10
    max_n: int = 600
    motif_size: int = 5
    feature_dim: int = 100
    vulnerable_fraction: float = 0.4
    noise_edge_prob: float = 0.1
    sig_rate: float = 0.05
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.n_graphs < 1:
            raise InputError(f"n_graphs must be >= 1, got {self.n_graphs}")
        if self.motif_size < 2:
            raise InputError(f"motif_size must be >= 2, got {self.motif_size}")
        if self.min_n < self.motif_size:
            raise InputError(f"min_n ({self.min_n}) must be >= motif_size ({self.motif_size})")
        if not 0.0 <= self.sig_rate <= 1.0:
            raise InputError(f"sig_rate must be in [0, 1], got {self.sig_rate}")
        if self.max_n < self.min_n:
            raise InputError(f"max_n ({self.max_n}) must be >= min_n ({self.min_n})")
        if self.pareto_shape <= 0:
            raise InputError(f"pareto_shape must be positive, got {self.pareto_shape}")
        if not 0.0 <= self.vulnerable_fraction <= 1.0:
            raise InputError(f"vulnerable_fraction must be in [0, 1], got {self.vulnerable_fraction}")
        if not 0.0 <= self.noise_edge_prob <= 1.0:
            raise InputError(f"noise_edge_prob must be in [0, 1], got {self.noise_edge_prob}")
        if self.feature_dim < 1:
            raise InputError(f"feature_dim must be >= 1, got {self.feature_dim}")
        return self


def _truncated_pareto(rng: np.random.Generator, shape: float, lo: int, hi: int) -> int:
    """Inverse-CDF sample from a Pareto(shape) truncated to [lo, hi]."""
    if lo == hi:
        return lo
    u = rng.random()
    tail = (lo / hi) ** shape
    x = lo / (1.0 - u * (1.0 - tail)) ** (1.0 / shape)
    return min(hi, max(lo, int(x)))


def _random_tree_edges(rng: np.random.Generator, n: int) -> list:
    """Random recursive tree: node i attaches to a uniform earlier node."""
    return [(int(rng.integers(0, i)), i) for i in range(1, n)]


def _generate_one(cfg: SynthConfig, rng: np.random.Generator, index: int) -> LabeledGraph:
    n = _truncated_pareto(rng, cfg.pareto_shape, cfg.min_n, cfg.max_n)
    edges = _random_tree_edges(rng, n)
    for i in range(n):
        if rng.random() < cfg.noise_edge_prob:
            j = int(rng.integers(0, n))
            if j != i:
                edges.append((min(i, j), max(i, j)))

    x = rng.standard_normal((n, cfg.feature_dim))
    label = 1 if rng.random() < cfg.vulnerable_fraction else 0
    shift = MOTIF_SHIFT / np.sqrt(cfg.feature_dim)

    # Scattered signature nodes appear in both classes at ``sig_rate``, each
    # a random flavor; a positive graph adds ``motif_size`` more (half of
    # each flavor) and wires those into a clique.
    sig = rng.random(n) < cfg.sig_rate
    pole = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    key_mask = None
    if label == 1:
        motif = rng.choice(n, size=cfg.motif_size, replace=False)
        motif.sort()
        sig[motif] = True
        half = rng.permutation(cfg.motif_size) < cfg.motif_size // 2
        pole[motif] = np.where(half, 1.0, -1.0)
        for a in range(cfg.motif_size):
            for b in range(a + 1, cfg.motif_size):
                edges.append((int(motif[a]), int(motif[b])))
        key_mask = torch.zeros(n, dtype=torch.bool)
        key_mask[torch.from_numpy(motif)] = True
    x[sig] *= SIG_NOISE_SCALE
    x[sig] += (pole[sig, None] * shift)

    meta = [{"sig": bool(sig[i]), "pole": int(pole[i]) if sig[i] else 0}
            for i in range(n)]

    return LabeledGraph(
        features=torch.from_numpy(x).to(torch.float32),
        adjacency=build_adjacency(edges, n),
        label=label,
        key_node_mask=key_mask,
        node_meta=meta,
        name=f"synth-{cfg.seed}-{index:05d}",
    )


def generate_corpus(cfg: SynthConfig) -> list:
    """Generate ``cfg.n_graphs`` labeled graphs, deterministic given the seed.

    Per-graph seeds derive from (seed, index), so any prefix of the corpus is
    stable under changes to n_graphs.
    """
    cfg.validate()
    graphs = []
    for i in range(cfg.n_graphs):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(i,))))
        graphs.append(_generate_one(cfg, rng, i))
    return graphs


# --- JSON-lines emission ----------------------------------------------------

BACKGROUND_VOCAB = 64  # distinct background tokens; motif nodes share one signature


def graph_to_record_dict(g: LabeledGraph, cfg: SynthConfig, rng: np.random.Generator) -> dict:
    """Render a synthetic graph in the ingest JSON schema.

    Background nodes get a pair of random background tokens; signature nodes
    (in both classes) get one of two fixed signature token strings, one per
    flavor, so ingestion reproduces the scattered-vs-wired signature split
    without carrying raw vectors in the file.
    """
    nodes = []
    key = g.key_node_mask
    for i in range(g.node_count):
        sig = bool(g.node_meta[i].get("sig")) if g.node_meta else False
        if sig:
            fn = "sig_source" if g.node_meta[i].get("pole", 1) > 0 else "sig_sink"
            code = f"{fn} ( sig_buf , sig_len )"
            kind = "CallExpression"
        else:
            a, b = rng.integers(0, BACKGROUND_VOCAB, size=2)
            code = f"var_{a} = var_{b} ;"
            kind = "AssignmentExpression"
        nodes.append({
            "id": i,
            "code": code,
            "kind": kind,
            "line": i + 1,
            "key": bool(key[i]) if key is not None else False,
        })
    edges = []
    for i, j in sorted(g.edges):
        etype = "AST" if (i + j) % 3 == 0 else ("CFG" if (i + j) % 3 == 1 else "PDG")
        edges.append({"src": i, "dst": j, "etype": etype})
    return {"name": g.name, "label": g.label, "nodes": nodes, "edges": edges}


def write_corpus_jsonl(cfg: SynthConfig, path, graphs: Optional[list] = None) -> list:
    """Generate (or reuse) a corpus and write it as JSON-lines; returns it."""
    cfg.validate()
    if graphs is None:
        graphs = generate_corpus(cfg)
    with open(path, "w", encoding="utf-8") as f:
        for i, g in enumerate(graphs):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(i, 1)))
            )
            doc = graph_to_record_dict(g, cfg, rng)
            f.write(json.dumps(doc, sort_keys=True, separators=(",", ":")))
            f.write("\n")
    return graphs
