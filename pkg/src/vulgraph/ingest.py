"""Loading labeled code graphs from JSON and turning code tokens into features.

The on-disk format (one graph per file, or JSON-lines for corpora):

    {"name": str, "label": 0|1,
     "nodes": [{"id": int, "code": str, "kind": str, "line": int?, "key": bool?}, ...],
     "edges": [{"src": int, "dst": int, "etype": "AST"|"CFG"|"PDG"}, ...]}

Node ``code`` fields are expected to be comment-free; no comment stripping
happens here. All three edge kinds are merged into one undirected adjacency.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import InputError
from .graph_core import LabeledGraph, build_adjacency

EDGE_TYPES = ("AST", "CFG", "PDG")


@dataclass
class RawNode:
    id: int
    code: str
    kind: str
    line: Optional[int] = None
    key: bool = False


@dataclass
class RawGraphRecord:
    """A validated graph record with ids remapped to dense 0..N-1."""

    name: str
    label: int
    nodes: list  # list[RawNode], in input order
    edges: list  # list[(src, dst, etype)] with remapped endpoints

    @property
    def node_count(self) -> int:
        return len(self.nodes)


def _require(cond: bool, msg: str):
    if not cond:
        raise InputError(msg)


def parse_graph_record(doc: dict, where: str = "graph") -> RawGraphRecord:
    """Validate a decoded JSON object and remap node ids to 0..N-1."""
    _require(isinstance(doc, dict), f"{where}: record must be a JSON object")
    name = doc.get("name")
    _require(isinstance(name, str) and name != "", f"{where}: 'name' must be a non-empty string")
    label = doc.get("label")
    _require(label in (0, 1), f"{where}: 'label' must be 0 or 1, got {label!r}")
    nodes_in = doc.get("nodes")
    _require(isinstance(nodes_in, list) and len(nodes_in) > 0, f"{where}: 'nodes' must be a non-empty list")
    edges_in = doc.get("edges", [])
    _require(isinstance(edges_in, list), f"{where}: 'edges' must be a list")

    nodes = []
    id_map = {}
    for pos, nd in enumerate(nodes_in):
        loc = f"{where}: node {pos}"
        _require(isinstance(nd, dict), f"{loc}: must be an object")
        nid = nd.get("id")
        _require(isinstance(nid, int) and not isinstance(nid, bool), f"{loc}: 'id' must be an integer")
        _require(nid not in id_map, f"{loc}: duplicate id {nid}")
        code = nd.get("code")
        _require(isinstance(code, str), f"{loc}: 'code' must be a string")
        kind = nd.get("kind")
        _require(isinstance(kind, str), f"{loc}: 'kind' must be a string")
        line = nd.get("line")
        _require(line is None or (isinstance(line, int) and not isinstance(line, bool)),
                 f"{loc}: 'line' must be an integer if present")
        key = nd.get("key", False)
        _require(isinstance(key, bool), f"{loc}: 'key' must be a boolean if present")
        id_map[nid] = pos
        nodes.append(RawNode(id=pos, code=code, kind=kind, line=line, key=key))

    edges = []
    for pos, ed in enumerate(edges_in):
        loc = f"{where}: edge {pos}"
        _require(isinstance(ed, dict), f"{loc}: must be an object")
        etype = ed.get("etype")
        _require(etype in EDGE_TYPES, f"{loc}: unknown etype {etype!r}")
        src, dst = ed.get("src"), ed.get("dst")
        for label_, v in (("src", src), ("dst", dst)):
            _require(isinstance(v, int) and not isinstance(v, bool), f"{loc}: '{label_}' must be an integer")
            _require(v in id_map, f"{loc}: {label_} references unknown id {v}")
        edges.append((id_map[src], id_map[dst], etype))

    return RawGraphRecord(name=name, label=int(label), nodes=nodes, edges=edges)


def load_graph_json(data: bytes | str, where: str = "graph") -> RawGraphRecord:
    """Parse one UTF-8 JSON graph document."""
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InputError(f"{where}: malformed JSON: {e}") from e
    return parse_graph_record(doc, where)


def load_corpus_jsonl(path) -> list:
    """Parse a JSON-lines corpus file into a list of RawGraphRecord."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            records.append(load_graph_json(line, where=f"{path}:{lineno}"))
    if not records:
        raise InputError(f"{path}: corpus contains no records")
    return records


# --- tokenization ----------------------------------------------------------

_TOKEN_RE = re.compile(
    r"[A-Za-z_][A-Za-z0-9_]*"                  # identifiers / keywords
    r"|0[xX][0-9a-fA-F]+"                      # hex literals
    r"|\d+\.\d+(?:[eE][+-]?\d+)?[fFlL]?"       # float literals
    r"|\.\d+(?:[eE][+-]?\d+)?[fFlL]?"
    r"|\d+[uUlL]*"                             # integer literals
    r"|->|\+\+|--|<<=|>>=|<<|>>|<=|>=|==|!=|&&|\|\||\+=|-="
    r"|\*=|/=|%=|&=|\|=|\^=|::|\.\.\."
    r"|[-+*/%=&|^~!<>?:;,.(){}\[\]#@\\\"']"
)


def tokenize(code: str) -> list:
    """Split a C-style code snippet into identifier/number/operator tokens.

    Whitespace separates tokens; punctuation and operators are tokens of
    their own. Total function: anything unmatched is skipped.
    """
    return _TOKEN_RE.findall(code)


# --- embedders -------------------------------------------------------------

@dataclass
class SkipGramConfig:
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025


class TokenEmbedder:
    """Maps tokens to fixed-length vectors.

    ``hash`` mode derives a pseudo-random unit vector per token from a seeded
    hash; it needs no corpus and is exactly reproducible across platforms.
    ``skipgram`` mode holds a trained vocabulary table; unknown tokens map to
    the zero vector.
    """

    FORMAT_VERSION = 1

    def __init__(self, mode: str, dim: int, seed: int, vectors: Optional[dict] = None):
        if mode not in ("hash", "skipgram"):
            raise InputError(f"unknown embedder mode {mode!r}")
        if dim < 1:
            raise InputError(f"embedding dim must be >= 1, got {dim}")
        self.mode = mode
        self.dim = dim
        self.seed = seed
        self.vectors = vectors if vectors is not None else {}
        self._cache: dict = {}

    def embed(self, token: str) -> np.ndarray:
        if self.mode == "hash":
            v = self._cache.get(token)
            if v is None:
                v = _hash_vector(token, self.dim, self.seed)
                self._cache[token] = v
            return v
        v = self.vectors.get(token)
        if v is None:
            return np.zeros(self.dim, dtype=np.float64)
        return v

    def embed_tokens(self, tokens: list) -> np.ndarray:
        """Mean of per-token vectors; zero vector for an empty token list."""
        if not tokens:
            return np.zeros(self.dim, dtype=np.float64)
        acc = np.zeros(self.dim, dtype=np.float64)
        for t in tokens:
            acc += self.embed(t)
        return acc / len(tokens)

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "format_version": self.FORMAT_VERSION,
            "mode": self.mode,
            "dim": self.dim,
            "seed": self.seed,
        }
        if self.mode == "skipgram":
            out["vocab"] = {t: [float(x) for x in v] for t, v in sorted(self.vectors.items())}
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "TokenEmbedder":
        if doc.get("format_version") != cls.FORMAT_VERSION:
            raise InputError(f"unsupported embedder format version {doc.get('format_version')!r}")
        vectors = None
        if doc["mode"] == "skipgram":
            vectors = {t: np.asarray(v, dtype=np.float64) for t, v in doc.get("vocab", {}).items()}
        return cls(mode=doc["mode"], dim=int(doc["dim"]), seed=int(doc["seed"]), vectors=vectors)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, sort_keys=True, separators=(",", ":"))
            f.write("\n")

    @classmethod
    def load(cls, path) -> "TokenEmbedder":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _hash_vector(token: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit-norm vector for a token; independent of PYTHONHASHSEED."""
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, salt=seed.to_bytes(8, "little", signed=True)
    ).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0.0:  # astronomically unlikely; keep the function total
        v[0] = 1.0
        norm = 1.0
    return v / norm


def fit_token_embeddings(
    corpus: list,
    dim: int = 100,
    mode: str = "hash",
    config: Optional[SkipGramConfig] = None,
    seed: int = 0,
) -> TokenEmbedder:
    """Build a TokenEmbedder; trains skip-gram with negative sampling if asked.

    ``corpus`` is a list of token lists. Hash mode ignores it.
    """
    if mode == "hash":
        return TokenEmbedder(mode="hash", dim=dim, seed=seed)
    if mode != "skipgram":
        raise InputError(f"unknown embedder mode {mode!r}")
    if not corpus or all(len(s) == 0 for s in corpus):
        raise InputError("skipgram mode requires a non-empty corpus")
    cfg = config or SkipGramConfig()
    vectors = _train_skipgram(corpus, dim, cfg, seed)
    return TokenEmbedder(mode="skipgram", dim=dim, seed=seed, vectors=vectors)


def _train_skipgram(corpus: list, dim: int, cfg: SkipGramConfig, seed: int) -> dict:
    """Skip-gram with negative sampling, plain SGD over (center, context) pairs."""
    vocab: dict = {}
    counts: list = []
    for sent in corpus:
        for tok in sent:
            i = vocab.get(tok)
            if i is None:
                vocab[tok] = len(counts)
                counts.append(1)
            else:
                counts[i] += 1
    n_vocab = len(vocab)
    rng = np.random.Generator(np.random.PCG64(seed))
    w_in = (rng.random((n_vocab, dim)) - 0.5) / dim
    w_out = np.zeros((n_vocab, dim))

    # unigram^0.75 negative-sampling table
    probs = np.asarray(counts, dtype=np.float64) ** 0.75
    probs /= probs.sum()

    encoded = [np.asarray([vocab[t] for t in sent], dtype=np.int64) for sent in corpus if sent]
    for _epoch in range(cfg.epochs):
        for sent in encoded:
            for pos, center in enumerate(sent):
                lo = max(0, pos - cfg.window)
                hi = min(len(sent), pos + cfg.window + 1)
                for ctx_pos in range(lo, hi):
                    if ctx_pos == pos:
                        continue
                    context = sent[ctx_pos]
                    targets = np.empty(cfg.negatives + 1, dtype=np.int64)
                    targets[0] = context
                    targets[1:] = rng.choice(n_vocab, size=cfg.negatives, p=probs)
                    labels = np.zeros(cfg.negatives + 1)
                    labels[0] = 1.0
                    v = w_in[center]
                    u = w_out[targets]
                    scores = 1.0 / (1.0 + np.exp(-(u @ v)))
                    g = (scores - labels) * cfg.lr
                    w_in[center] = v - g @ u
                    w_out[targets] = u - np.outer(g, v)
    return {tok: w_in[i].copy() for tok, i in vocab.items()}


def to_labeled_graph(rec: RawGraphRecord, emb: TokenEmbedder) -> LabeledGraph:
    """Featurize a raw record: node feature = mean of its code-token vectors."""
    n = rec.node_count
    x = np.zeros((n, emb.dim), dtype=np.float64)
    for node in rec.nodes:
        x[node.id] = emb.embed_tokens(tokenize(node.code))
    adjacency = build_adjacency([(s, d) for s, d, _ in rec.edges], n)
    key_mask = torch.tensor([node.key for node in rec.nodes], dtype=torch.bool)
    meta = [
        {"code": node.code, "kind": node.kind, "line": node.line, "key": node.key}
        for node in rec.nodes
    ]
    return LabeledGraph(
        features=torch.from_numpy(x).to(torch.float32),
        adjacency=adjacency,
        label=rec.label,
        key_node_mask=key_mask if key_mask.any() else None,
        node_meta=meta,
        name=rec.name,
    ).validate()
