"""Stacked GCN + transformer blocks over a graph, with mean readout.

Each block runs a one-hop graph convolution, then multi-head self-attention
and a feed-forward sublayer, both with residual connections:

    x1 = relu(A_hat x W_g)
    x2 = MHA(x1) + x1
    y  = FFN(x2) + x2

Attention heads use scaled dot products at width hidden/heads and their
outputs are concatenated directly (no output projection).  The feed-forward
sublayer layer-normalizes before each of its two linear maps.  Every linear
map in the encoder is bias-free.

Inputs may be a single graph (N x h features, N x N normalized adjacency) or
a padded batch (B x N x h with a B x N validity mask); padded columns are
excluded from attention by masking scores to a large negative before the
softmax, and padded rows are re-zeroed after every block.
"""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import Tensor, nn

from .errors import InputError
from .layers import xavier_uniform_

# Finite stand-in for -inf when masking attention scores: large enough to
# zero out padded columns after softmax without producing NaN rows.
_MASK_FILL = -1e9

FFN_EXPANSION = 4


class GnnGtBlock(nn.Module):
    """One GCN + attention + feed-forward block."""

    def __init__(self, hidden_dim: int, num_heads: int):
        super().__init__()
        if hidden_dim < 1 or num_heads < 1:
            raise InputError("hidden_dim and num_heads must be >= 1")
        if hidden_dim % num_heads != 0:
            raise InputError(
                f"hidden_dim {hidden_dim} not divisible by num_heads {num_heads}")
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.head_dim = hidden_dim // num_heads
        self.w_g = nn.Linear(hidden_dim, hidden_dim, bias=False)
        # Per-head query/key/value maps stored packed: columns [i*head_dim,
        # (i+1)*head_dim) of each weight belong to head i.
        self.w_q = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_k = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_v = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_f1 = nn.Linear(hidden_dim, FFN_EXPANSION * hidden_dim, bias=False)
        self.w_f2 = nn.Linear(FFN_EXPANSION * hidden_dim, hidden_dim, bias=False)
        self.ln1 = nn.LayerNorm(hidden_dim, eps=1e-5)
        self.ln2 = nn.LayerNorm(FFN_EXPANSION * hidden_dim, eps=1e-5)

    def reset_parameters(self, generator: torch.Generator) -> None:
        for lin in (self.w_g, self.w_q, self.w_k, self.w_v, self.w_f1, self.w_f2):
            xavier_uniform_(lin.weight, generator)
        for ln in (self.ln1, self.ln2):
            nn.init.ones_(ln.weight)
            nn.init.zeros_(ln.bias)

    def gcn(self, x: Tensor, a_hat: Tensor) -> Tensor:
        """relu(A_hat x W_g); 2-D single graph or 3-D padded batch."""
        ax = a_hat @ x if x.ndim == 2 else torch.bmm(a_hat, x)
        return torch.relu(self.w_g(ax))

    def attention(self, x: Tensor, mask: Optional[Tensor] = None) -> Tensor:
        """Multi-head scaled dot-product self-attention, heads concatenated."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x.unsqueeze(0)
        b, n, _ = x.shape
        hd, nh = self.head_dim, self.num_heads

        def split(t: Tensor) -> Tensor:
            return t.view(b, n, nh, hd).permute(0, 2, 1, 3)  # B x H x N x hd

        q, k, v = split(self.w_q(x)), split(self.w_k(x)), split(self.w_v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(hd)     # B x H x N x N
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, None, :], _MASK_FILL)
        out = torch.softmax(scores, dim=-1) @ v              # B x H x N x hd
        out = out.permute(0, 2, 1, 3).reshape(b, n, self.hidden_dim)
        return out.squeeze(0) if squeeze else out

    def feed_forward(self, x: Tensor) -> Tensor:
        """W_f2 LN2(relu(W_f1 LN1(x))) applied position-wise."""
        u = torch.relu(self.w_f1(self.ln1(x)))
        return self.w_f2(self.ln2(u))

    def forward(self, x: Tensor, a_hat: Tensor, mask: Optional[Tensor] = None, *,
                use_gnn: bool = True, use_gt: bool = True) -> Tensor:
        x1 = self.gcn(x, a_hat) if use_gnn else x
        if use_gt:
            x2 = self.attention(x1, mask) + x1
            y = self.feed_forward(x2) + x2
        else:
            y = x1
        if mask is not None:
            y = y * mask.unsqueeze(-1).to(y.dtype)
        return y


class Encoder(nn.Module):
    """Stack of blocks followed by mean readout over (real) nodes."""

    def __init__(self, hidden_dim: int, num_blocks: int = 5, num_heads: int = 4):
        super().__init__()
        if num_blocks < 1:
            raise InputError(f"num_blocks must be >= 1, got {num_blocks}")
        self.hidden_dim = hidden_dim
        self.blocks = nn.ModuleList(
            GnnGtBlock(hidden_dim, num_heads) for _ in range(num_blocks))

    def reset_parameters(self, generator: torch.Generator) -> None:
        for block in self.blocks:
            block.reset_parameters(generator)

    def encode(self, x: Tensor, a_hat: Tensor, mask: Optional[Tensor] = None, *,
               use_gnn: bool = True, use_gt: bool = True) -> Tensor:
        """Graph embedding(s): h for a single graph, B x h for a padded batch."""
        if x.ndim not in (2, 3):
            raise InputError(f"features must be 2-D or 3-D, got {x.ndim}-D")
        if x.shape[-1] != self.hidden_dim:
            raise InputError(
                f"feature width {x.shape[-1]} != encoder hidden_dim {self.hidden_dim}")
        if x.ndim == 3 and mask is None:
            raise InputError("padded batches require a node mask")
        for block in self.blocks:
            x = block(x, a_hat, mask, use_gnn=use_gnn, use_gt=use_gt)
        if x.ndim == 2:
            return x.mean(dim=0)
        counts = mask.sum(dim=1, keepdim=True).to(x.dtype).clamp(min=1.0)
        return (x * mask.unsqueeze(-1).to(x.dtype)).sum(dim=1) / counts

    def forward(self, x: Tensor, a_hat: Tensor, mask: Optional[Tensor] = None, *,
                use_gnn: bool = True, use_gt: bool = True) -> Tensor:
        return self.encode(x, a_hat, mask, use_gnn=use_gnn, use_gt=use_gt)
