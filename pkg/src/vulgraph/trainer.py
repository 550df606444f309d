"""End-to-end classifier and its training loop.

The model chains the pieces: optional importance pooling (skippable for the
ablation that feeds raw graphs straight through), a bias-free linear adapter
into the encoder width, the stacked GCN+attention encoder with mean readout,
and a two-layer sigmoid head.  Training runs AdamW over minibatches of
graphs, validates once per epoch, and keeps the parameters with the best
validation F1.

Everything is deterministic given three seeds: the data seed fixes the
train/val/test split, the model seed fixes initialization, and the train
seed fixes batch shuffling and dropout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .encoder import Encoder
from .errors import DomainError, InputError
from .graph_core import LabeledGraph, normalize_adjacency
from .layers import xavier_uniform_
from .metrics import compute_metrics
from .sapool import RefineConfig, RefineStep, RefineTrace, SAPool, refine_graph

BCE_EPS = 1e-7


class ClassifierHead(nn.Module):
    """p = sigmoid(w_c2 relu(w_c1 o)); both maps bias-free, single logit."""

    def __init__(self, hidden_dim: int):
        super().__init__()
        self.w_c1 = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_c2 = nn.Linear(hidden_dim, 1, bias=False)

    def reset_parameters(self, generator: torch.Generator) -> None:
        xavier_uniform_(self.w_c1.weight, generator)
        xavier_uniform_(self.w_c2.weight, generator)

    def forward(self, o: Tensor) -> Tensor:
        return torch.sigmoid(self.w_c2(torch.relu(self.w_c1(o)))).squeeze(-1)


def bce_loss(probs: Tensor, labels: Tensor) -> Tensor:
    """Mean binary cross-entropy, computed in 64-bit with probabilities
    clamped to [eps, 1-eps] so saturated sigmoids cannot produce inf."""
    if probs.shape != labels.shape:
        raise InputError(
            f"probs shape {tuple(probs.shape)} != labels shape {tuple(labels.shape)}")
    p = probs.to(torch.float64).clamp(BCE_EPS, 1.0 - BCE_EPS)
    y = labels.to(torch.float64)
    return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean()


@dataclass(frozen=True)
class DataSplit:
    """Index partition of a corpus."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


def split_dataset(n: int, ratios: Sequence[float], seed: int) -> DataSplit:
    """Seeded shuffle, then contiguous cut.

    Val and test take floor(ratio * n) items each; train takes its floor plus
    whatever the flooring left over, so the partition always covers.
    """
    if n < 1:
        raise InputError("cannot split an empty corpus")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise InputError(f"need three non-negative ratios, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InputError(f"ratios must sum to 1, got {sum(ratios)}")
    n_val = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_val - n_test
    perm = np.random.default_rng(seed).permutation(n)
    return DataSplit(
        train=tuple(int(i) for i in perm[:n_train]),
        val=tuple(int(i) for i in perm[n_train:n_train + n_val]),
        test=tuple(int(i) for i in perm[n_train + n_val:]),
    )


def _pad_size(n: int) -> int:
    """Bucket node counts so graphs of similar size share one padded batch."""
    if n <= 64:
        return 8 * math.ceil(n / 8)
    return 64 * math.ceil(n / 64)


class GraphClassifier(nn.Module):
    """Pooling + adapter + encoder + head, with ablation switches.

    ``use_hgr`` gates the pooling loop, ``use_gnn`` the graph-convolution
    sublayers, ``use_gt`` the attention/feed-forward sublayers.  Raw graphs
    (never pooled) enter through ``adapter_raw`` (feature_dim -> hidden);
    pooled graphs already carry hidden-width features and enter through
    ``adapter_pooled``.
    """

    def __init__(self, feature_dim: int, hidden_dim: int = 64, num_blocks: int = 5,
                 num_heads: int = 4, refine: Optional[RefineConfig] = None,
                 dropout_rate: float = 0.2, use_hgr: bool = True,
                 use_gnn: bool = True, use_gt: bool = True):
        super().__init__()
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.refine_cfg = (refine or RefineConfig()).validate()
        self.use_hgr = use_hgr
        self.use_gnn = use_gnn
        self.use_gt = use_gt
        self.sapool = SAPool(feature_dim, hidden_dim, dropout_rate)
        self.adapter_raw = nn.Linear(feature_dim, hidden_dim, bias=False)
        self.adapter_pooled = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.encoder = Encoder(hidden_dim, num_blocks, num_heads)
        self.head = ClassifierHead(hidden_dim)

    def reset_parameters(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        self.sapool.reset_parameters(generator)
        xavier_uniform_(self.adapter_raw.weight, generator)
        xavier_uniform_(self.adapter_pooled.weight, generator)
        self.encoder.reset_parameters(generator)
        self.head.reset_parameters(generator)

    def active_parameter_count(self) -> int:
        """Parameters actually reachable given the ablation switches."""
        total = 0
        for name, p in self.named_parameters():
            if not self.use_hgr and name.startswith(("sapool.", "adapter_pooled.")):
                continue
            if not self.use_gnn and ".w_g." in name:
                continue
            if not self.use_gt and any(
                    part in name
                    for part in (".w_q.", ".w_k.", ".w_v.", ".w_f1.", ".w_f2.",
                                 ".ln1.", ".ln2.")):
                continue
            total += p.numel()
        return total

    def refine(self, g: LabeledGraph, *, training: bool = False,
               generator: Optional[torch.Generator] = None,
               forced_steps: Optional[Sequence[RefineStep]] = None
               ) -> tuple[LabeledGraph, RefineTrace]:
        if not self.use_hgr:
            return g, RefineTrace([], "below_threshold")
        return refine_graph(g, self.sapool, self.refine_cfg, training=training,
                            generator=generator, forced_steps=forced_steps)

    def _adapt(self, x: Tensor, pooled: bool) -> Tensor:
        adapter = self.adapter_pooled if pooled else self.adapter_raw
        return adapter(x.to(adapter.weight.dtype))

    def forward_graph(self, g: LabeledGraph, *, training: bool = False,
                      generator: Optional[torch.Generator] = None,
                      forced_steps: Optional[Sequence[RefineStep]] = None
                      ) -> tuple[Tensor, Tensor, RefineTrace]:
        """One graph through the full pipeline: (probability, embedding, trace)."""
        refined, trace = self.refine(g, training=training, generator=generator,
                                     forced_steps=forced_steps)
        x0 = self._adapt(refined.features, trace.pooled)
        a_hat = normalize_adjacency(refined.adjacency.to(x0.dtype)).matrix
        emb = self.encoder.encode(x0, a_hat, use_gnn=self.use_gnn, use_gt=self.use_gt)
        return self.head(emb), emb, trace

    def forward_batch(self, graphs: Sequence[LabeledGraph], *, training: bool = False,
                      generator: Optional[torch.Generator] = None
                      ) -> tuple[Tensor, Tensor]:
        """Batched pipeline: (probabilities B, embeddings B x hidden).

        Refinement runs per graph; the encoder then runs over groups of
        graphs padded to a shared size bucket, which is where the time goes.
        Semantics match per-graph forwards because padded columns are masked
        out of attention and padded rows are zeroed between blocks.
        """
        if len(graphs) == 0:
            raise InputError("empty batch")
        dtype = self.adapter_raw.weight.dtype
        feats: list[Tensor] = []
        norms: list[Tensor] = []
        pooled_flags: list[bool] = []
        for g in graphs:
            refined, trace = self.refine(g, training=training, generator=generator)
            feats.append(refined.features)
            norms.append(normalize_adjacency(refined.adjacency.to(dtype)).matrix)
            pooled_flags.append(trace.pooled)

        adapted: list[Optional[Tensor]] = [None] * len(graphs)
        for pooled in (False, True):
            members = [i for i, f in enumerate(pooled_flags) if f == pooled]
            if not members:
                continue
            rows = self._adapt(torch.cat([feats[i] for i in members]), pooled)
            offset = 0
            for i in members:
                n = feats[i].shape[0]
                adapted[i] = rows[offset:offset + n]
                offset += n

        groups: dict[int, list[int]] = {}
        for i, f in enumerate(feats):
            groups.setdefault(_pad_size(f.shape[0]), []).append(i)

        embeddings: list[Optional[Tensor]] = [None] * len(graphs)
        for pad in sorted(groups):
            members = groups[pad]
            xb = torch.stack(
                [F.pad(adapted[i], (0, 0, 0, pad - adapted[i].shape[0]))
                 for i in members])
            ab = torch.stack(
                [F.pad(norms[i], (0, pad - norms[i].shape[0], 0, pad - norms[i].shape[0]))
                 for i in members])
            mask = torch.zeros(len(members), pad, dtype=torch.bool)
            for j, i in enumerate(members):
                mask[j, :adapted[i].shape[0]] = True
            group_emb = self.encoder.encode(xb, ab, mask, use_gnn=self.use_gnn,
                                            use_gt=self.use_gt)
            for j, i in enumerate(members):
                embeddings[i] = group_emb[j]
        emb = torch.stack(embeddings)
        return self.head(emb), emb


@dataclass
class Prediction:
    """Evaluated output for one graph."""

    probability: float
    predicted_label: int
    embedding: list[float]
    name: str = ""


def predict_graphs(model: GraphClassifier, graphs: Sequence[LabeledGraph],
                   threshold: float = 0.5, batch_size: int = 256) -> list[Prediction]:
    """Eval-mode batched inference."""
    model.eval()
    out: list[Prediction] = []
    with torch.no_grad():
        for start in range(0, len(graphs), batch_size):
            chunk = graphs[start:start + batch_size]
            probs, embs = model.forward_batch(chunk, training=False)
            for g, p, e in zip(chunk, probs, embs):
                pf = float(p)
                out.append(Prediction(probability=pf,
                                      predicted_label=int(pf >= threshold),
                                      embedding=[float(v) for v in e],
                                      name=g.name))
    return out


@dataclass
class TrainConfig:
    """Optimizer, batching, split and ablation settings."""

    batch_size: int = 1024
    max_iterations: int = 3000
    lr: float = 1e-3
    weight_decay: float = 1e-5
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    threshold: float = 0.5
    patience: Optional[int] = None
    use_hgr: bool = True
    use_gnn: bool = True
    use_gt: bool = True
    eval_batch_size: int = 256

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iterations < 1:
            raise InputError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.lr <= 0:
            raise InputError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise InputError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if len(self.split) != 3 or any(r < 0 for r in self.split):
            raise InputError(f"split must be three non-negative ratios, got {self.split!r}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise InputError(f"split ratios must sum to 1, got {sum(self.split)}")
        if not 0.0 <= self.threshold <= 1.0:
            raise InputError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.patience is not None and self.patience < 1:
            raise InputError(f"patience must be >= 1, got {self.patience}")
        return self


@dataclass
class TrainResult:
    model: GraphClassifier
    history: list[dict] = field(default_factory=list)
    split: Optional[DataSplit] = None
    best_val_f1: Optional[float] = None
    best_step: int = 0
    best_state: Optional[dict] = None


def _clone_state(model: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def evaluate_split(model: GraphClassifier, graphs: Sequence[LabeledGraph],
                   threshold: float = 0.5, batch_size: int = 256) -> dict:
    preds = predict_graphs(model, graphs, threshold, batch_size)
    return compute_metrics([p.probability for p in preds],
                           [g.label for g in graphs], threshold)


def train(corpus: Sequence[LabeledGraph], model: GraphClassifier, cfg: TrainConfig, *,
          seed_data: int = 0, seed_train: int = 0) -> TrainResult:
    """Minibatch AdamW training with per-epoch validation selection.

    One "iteration" is one optimizer step on one minibatch.  Validation runs
    at the end of every epoch (including a final partial one); the returned
    model carries the parameters of the best validation F1, or of the last
    step when the validation split is empty.
    """
    cfg.validate()
    split = split_dataset(len(corpus), cfg.split, seed_data)
    train_set = [corpus[i] for i in split.train]
    val_set = [corpus[i] for i in split.val]
    if {g.label for g in train_set} != {0, 1}:
        raise DomainError("training split must contain both classes")

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr,
                                  weight_decay=cfg.weight_decay,
                                  betas=(0.9, 0.999), eps=1e-8)
    shuffle_seed, dropout_seed = (
        int(s.generate_state(1, np.uint32)[0])
        for s in np.random.SeedSequence(seed_train).spawn(2))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_gen = torch.Generator().manual_seed(dropout_seed)

    history: list[dict] = []
    best_f1 = -1.0
    best_state: Optional[dict] = None
    best_step = 0
    epochs_since_best = 0
    step = 0
    epoch = 0
    while step < cfg.max_iterations:
        epoch += 1
        order = shuffle_rng.permutation(len(train_set))
        for lo in range(0, len(order), cfg.batch_size):
            if step >= cfg.max_iterations:
                break
            batch = [train_set[i] for i in order[lo:lo + cfg.batch_size]]
            model.train()
            probs, _ = model.forward_batch(batch, training=True, generator=dropout_gen)
            y = torch.tensor([float(g.label) for g in batch], dtype=torch.float64)
            loss = bce_loss(probs, y)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            history.append({"step": step, "epoch": epoch, "loss": float(loss.detach())})
        if val_set:
            m = evaluate_split(model, val_set, cfg.threshold, cfg.eval_batch_size)
            row = history[-1]
            row.update({"val_accuracy": m["accuracy"], "val_precision": m["precision"],
                        "val_recall": m["recall"], "val_f1": m["f1"]})
            if m["f1"] > best_f1:
                best_f1 = m["f1"]
                best_state = _clone_state(model)
                best_step = step
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if cfg.patience is not None and epochs_since_best >= cfg.patience:
                    break

    if best_state is None:
        best_state = _clone_state(model)
        best_step = step
    model.load_state_dict(best_state)
    return TrainResult(model=model, history=history, split=split,
                       best_val_f1=(None if best_f1 < 0 else best_f1),
                       best_step=best_step, best_state=best_state)


def check_gradients(model: GraphClassifier, graph: LabeledGraph,
                    step_size: float = 1e-5) -> dict[str, float]:
    """Central finite differences vs autograd for every parameter tensor.

    The pooling selection is recorded once and replayed for every probe so
    the discrete top-k choice cannot flip between perturbed evaluations.
    Run this on a 64-bit model (``model.double()``); returns max relative
    error per parameter tensor.
    """
    model.eval()
    with torch.no_grad():
        _, _, trace = model.forward_graph(graph, training=False)
    forced = trace.steps
    y = torch.tensor([float(graph.label)], dtype=torch.float64)

    def loss_value() -> Tensor:
        p, _, _ = model.forward_graph(graph, training=False, forced_steps=forced)
        return bce_loss(p.reshape(1), y)

    named = [(n, p) for n, p in model.named_parameters()]
    grads = torch.autograd.grad(loss_value(), [p for _, p in named],
                                allow_unused=True)
    report: dict[str, float] = {}
    for (name, p), g in zip(named, grads):
        analytic = torch.zeros_like(p) if g is None else g
        numeric = torch.zeros_like(p)
        flat = p.data.view(-1)
        nflat = numeric.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step_size
            up = loss_value().item()
            flat[i] = orig - step_size
            down = loss_value().item()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * step_size)
        scale = torch.maximum(analytic.abs(), numeric.abs()).clamp(min=1e-6)
        report[name] = float(((analytic - numeric).abs() / scale).max())
    return report
