"""Transformer building blocks shared by the sentiment and dialogue models.

All forward paths operate on single unbatched sequences, i.e. 2-D tensors of
shape (length, d_model). Batching is done by the callers, which keeps shapes
identical to the written-out attention algebra and to the dense test oracles.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .corpus import PAD_ID


def sinusoidal_positions(length: int, d_model: int) -> Tensor:
    """Fixed sin/cos position encodings, shape (length, d_model)."""
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    dim = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, dim / d_model)
    enc = torch.zeros(length, d_model, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(angle)
    enc[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return enc


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with h heads and an output projection.

    Per head: softmax(Q W_q (K W_k)^T / sqrt(d_head)) V W_v; heads are
    concatenated and projected by W_o. Queries whose key set is entirely
    masked produce zero rows instead of NaNs.
    """

    def __init__(self, d_model: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)
        self.w_o = nn.Linear(d_model, d_model, bias=False)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        q: Tensor,
        k: Tensor,
        v: Tensor,
        key_mask: Tensor | None = None,
        causal: bool = False,
    ) -> Tensor:
        if q.dim() != 2 or k.dim() != 2 or v.dim() != 2:
            raise ValueError("expected 2-D (length, d_model) inputs")
        if q.size(1) != self.d_model or k.size(1) != self.d_model:
            raise ValueError("input width does not match d_model")
        if k.size(0) != v.size(0):
            raise ValueError("key/value length mismatch")
        n_q, n_k = q.size(0), k.size(0)
        h, d_h = self.heads, self.d_head

        qh = self.w_q(q).view(n_q, h, d_h).transpose(0, 1)   # (h, n_q, d_h)
        kh = self.w_k(k).view(n_k, h, d_h).transpose(0, 1)
        vh = self.w_v(v).view(n_k, h, d_h).transpose(0, 1)

        scores = qh @ kh.transpose(1, 2) / math.sqrt(d_h)    # (h, n_q, n_k)
        valid = torch.ones(n_q, n_k, dtype=torch.bool, device=q.device)
        if key_mask is not None:
            valid = valid & key_mask.view(1, n_k)
        if causal:
            valid = valid & torch.tril(
                torch.ones(n_q, n_k, dtype=torch.bool, device=q.device)
            )
        scores = scores.masked_fill(~valid.unsqueeze(0), float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        # a fully-masked query row softmaxes to NaN; zero it out
        dead = ~valid.any(dim=-1)                            # (n_q,)
        if dead.any():
            weights = torch.where(
                dead.view(1, n_q, 1), torch.zeros_like(weights), weights
            )
        weights = self.dropout(weights)
        out = (weights @ vh).transpose(0, 1).reshape(n_q, self.d_model)
        return self.w_o(out)


class FeedForward(nn.Module):
    """Two linear layers with one ReLU in between."""

    def __init__(self, d_model: int, inner_dim: int):
        super().__init__()
        if inner_dim < 1:
            raise ValueError("inner dimension must be >= 1")
        self.lin1 = nn.Linear(d_model, inner_dim)
        self.lin2 = nn.Linear(inner_dim, d_model)

    def forward(self, x: Tensor) -> Tensor:
        return self.lin2(torch.relu(self.lin1(x)))


class EncoderLayer(nn.Module):
    """Self-attention + FFN, each wrapped in residual + layer norm."""

    def __init__(self, d_model: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads, dropout)
        self.ffn = FeedForward(d_model, ffn_dim)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        x = self.norm1(x + self.dropout(self.self_attn(x, x, x, key_mask=mask)))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x


class TransformerEncoder(nn.Module):
    """Token embedding + sinusoidal positions + a stack of encoder layers."""

    def __init__(
        self,
        vocab_size: int,
        d_model: int,
        heads: int,
        layers: int,
        ffn_dim: int,
        dropout: float,
        max_len: int = 1024,
    ):
        super().__init__()
        self.d_model = d_model
        self.embed = nn.Embedding(vocab_size, d_model, padding_idx=PAD_ID)
        self.register_buffer(
            "positions", sinusoidal_positions(max_len, d_model).float()
        )
        self.layers = nn.ModuleList(
            EncoderLayer(d_model, heads, ffn_dim, dropout) for _ in range(layers)
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, ids: Tensor) -> Tensor:
        if ids.dim() != 1:
            raise ValueError("expected a 1-D id sequence")
        x = self.embed(ids) * math.sqrt(self.d_model)
        x = self.dropout(x + self.positions[: ids.size(0)].to(x.dtype))
        for layer in self.layers:
            x = layer(x)
        return x


class DecoderLayer(nn.Module):
    """One decoder layer: causal self-attention, then cross-attention to the
    context states, the entity matrix, and (optionally) the review states,
    then an FFN. Residual + layer norm wrap every sublayer.

    When the review-attention sublayer is disabled it is structurally absent
    (no parameters), and a fully-masked review input skips the sublayer
    entirely, passing the entity-attention output straight through.
    """

    def __init__(
        self,
        d_model: int,
        heads: int,
        ffn_dim: int,
        dropout: float,
        review_attention: bool = True,
    ):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads, dropout)
        self.ctx_attn = MultiHeadAttention(d_model, heads, dropout)
        self.ent_attn = MultiHeadAttention(d_model, heads, dropout)
        self.norm0 = nn.LayerNorm(d_model)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        if review_attention:
            self.rev_attn = MultiHeadAttention(d_model, heads, dropout)
            self.norm3 = nn.LayerNorm(d_model)
        else:
            self.rev_attn = None
            self.norm3 = None
        self.ffn = FeedForward(d_model, ffn_dim)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        y: Tensor,
        ctx: Tensor,
        ctx_mask: Tensor,
        ent: Tensor,
        ent_mask: Tensor,
        rev: Tensor,
        rev_mask: Tensor,
    ) -> Tensor:
        a0 = self.norm0(y + self.dropout(self.self_attn(y, y, y, causal=True)))
        a1 = self.norm1(a0 + self.dropout(self.ctx_attn(a0, ctx, ctx, key_mask=ctx_mask)))
        if ent_mask.any():
            a2 = self.norm2(a1 + self.dropout(self.ent_attn(a1, ent, ent, key_mask=ent_mask)))
        else:
            a2 = a1
        if self.rev_attn is not None and rev_mask.any():
            a3 = self.norm3(a2 + self.dropout(self.rev_attn(a2, rev, rev, key_mask=rev_mask)))
        else:
            a3 = a2
        return self.norm_ffn(a3 + self.dropout(self.ffn(a3)))
