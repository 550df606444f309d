"""Versioned, byte-deterministic checkpoint files.

Pickle-based tensor serialization is not byte-stable across runs, so a
checkpoint is a single canonical-JSON document: format version, resolved
config (plus its SHA-256 hash), the token embedder, and every parameter
tensor as base64-encoded little-endian bytes.  Identical state always
produces identical files, which is what makes rerun-idempotency testable.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from torch import Tensor

from .errors import InputError

FORMAT_VERSION = 1


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def _encode_tensor(t: Tensor) -> dict:
    arr = t.detach().cpu().contiguous().numpy()
    return {
        "dtype": str(arr.dtype),
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_tensor(entry: dict) -> Tensor:
    arr = np.frombuffer(base64.b64decode(entry["data"]),
                        dtype=np.dtype(entry["dtype"]))
    return torch.from_numpy(arr.reshape(entry["shape"]).copy())


@dataclass
class Checkpoint:
    config: dict
    state: dict[str, Tensor]
    embedder: Optional[dict] = None
    extra: Optional[dict] = None


def save_checkpoint(path: Union[str, Path], *, state: dict[str, Tensor], config: dict,
                    embedder: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "config_hash": config_hash(config),
        "embedder": embedder,
        "extra": extra or {},
        "tensors": {name: _encode_tensor(t) for name, t in state.items()},
    }
    Path(path).write_text(canonical_json(doc) + "\n")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise InputError(f"checkpoint file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"checkpoint {p} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise InputError(
            f"unsupported checkpoint format (expected version {FORMAT_VERSION})")
    for key in ("config", "config_hash", "tensors"):
        if key not in doc:
            raise InputError(f"checkpoint missing required key {key!r}")
    if config_hash(doc["config"]) != doc["config_hash"]:
        raise InputError("checkpoint config hash mismatch (file corrupted or edited)")
    state = {name: _decode_tensor(entry) for name, entry in doc["tensors"].items()}
    return Checkpoint(config=doc["config"], state=state,
                      embedder=doc.get("embedder"), extra=doc.get("extra") or {})
