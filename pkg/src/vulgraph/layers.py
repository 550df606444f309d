"""Small shared pieces for the learnable modules: seeded init and dropout.

All randomness threads through explicit torch.Generator objects so that
training runs are reproducible from named seeds alone.
"""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import Tensor


def xavier_uniform_(t: Tensor, generator: torch.Generator, fan_in: Optional[int] = None,
                    fan_out: Optional[int] = None) -> Tensor:
    """Fill with U(-a, a), a = sqrt(6 / (fan_in + fan_out)).

    Linear weights are stored (out, in); vectors default to fan_out = 1.
    """
    if t.ndim == 2:
        fo, fi = t.shape
    elif t.ndim == 1:
        fo, fi = 1, t.shape[0]
    else:
        raise ValueError(f"expected 1-D or 2-D tensor, got {t.ndim}-D")
    fi = fi if fan_in is None else fan_in
    fo = fo if fan_out is None else fan_out
    a = math.sqrt(6.0 / (fi + fo))
    with torch.no_grad():
        t.uniform_(-a, a, generator=generator)
    return t


def seeded_dropout(x: Tensor, rate: float, training: bool,
                   generator: Optional[torch.Generator]) -> Tensor:
    """Inverted dropout: identity outside training, so inference needs no rescale."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) < keep)
    return x * mask.to(x.dtype) / keep
