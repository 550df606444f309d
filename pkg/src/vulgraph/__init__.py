"""Graph-based vulnerability detection: importance pooling over code graphs
followed by stacked GCN + attention encoding and a sigmoid classifier."""

from .config import RunConfig
from .encoder import Encoder, GnnGtBlock
from .errors import DomainError, InputError, NumericalError
from .graph_core import LabeledGraph, build_adjacency, induced_subgraph, normalize_adjacency
from .ingest import TokenEmbedder, fit_token_embeddings, load_corpus_jsonl, tokenize
from .metrics import bucketed_accuracy, compute_metrics, export_embeddings
from .sapool import RefineConfig, RefineTrace, SAPool, refine_graph, select_topk
from .synth import SynthConfig, generate_corpus, write_corpus_jsonl
from .trainer import (GraphClassifier, TrainConfig, bce_loss, check_gradients,
                      predict_graphs, split_dataset, train)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Encoder",
    "GnnGtBlock",
    "GraphClassifier",
    "InputError",
    "LabeledGraph",
    "NumericalError",
    "RefineConfig",
    "RefineTrace",
    "RunConfig",
    "SAPool",
    "SynthConfig",
    "TokenEmbedder",
    "TrainConfig",
    "bce_loss",
    "bucketed_accuracy",
    "build_adjacency",
    "check_gradients",
    "compute_metrics",
    "export_embeddings",
    "fit_token_embeddings",
    "generate_corpus",
    "induced_subgraph",
    "load_corpus_jsonl",
    "normalize_adjacency",
    "predict_graphs",
    "refine_graph",
    "select_topk",
    "split_dataset",
    "tokenize",
    "train",
    "write_corpus_jsonl",
    "__version__",
]
