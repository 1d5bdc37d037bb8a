"""Transformer encoder over cell tokens: no positional encodings, no CLS token.

Column-name embeddings (added during encoding) carry all structural
information, so the backbone is exactly permutation-equivariant over a row's
tokens. To make that hold bit-for-bit in floating point, the two reductions
that run along the token axis (softmax normalizer and the attention-weighted
value sum) accumulate in value-sorted order, which is canonical for any
ordering of the same multiset of tokens.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

PRESETS: dict[str, tuple[int, int]] = {
    # name -> (layers, hidden); heads = hidden // 64
    "mini": (4, 256),
    "small": (4, 512),
    "medium": (8, 512),
    "base": (12, 768),
    "large": (24, 1024),
}

INIT_STD = 0.02


@dataclass
class ModelConfig:
    layers: int = 4
    hidden: int = 256
    heads: int = 4
    dropout: float = 0.1
    num_bins: int = 32     # fraction bins K
    text_dim: int = 384    # text embedding dimension E
    preset: str = "custom"

    def __post_init__(self):
        if self.heads > 0 and self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")

    @property
    def ffn_dim(self) -> int:
        return 4 * self.hidden

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "ModelConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        layers, hidden = PRESETS[name]
        values = dict(layers=layers, hidden=hidden, heads=hidden // 64, preset=name)
        values.update(overrides)
        return cls(**values)

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def ordered_sum(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Sum along dim in ascending value order.

    The accumulation order then depends only on the multiset of addends, so
    any permutation of the input along dim produces a bit-identical sum.
    """
    return torch.sort(x, dim=dim).values.sum(dim=dim)


def init_weights(module: nn.Module):
    """BERT-style truncated normal init (std 0.02, clipped at two sigmas)."""
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.query = nn.Linear(hidden, hidden)
        self.key = nn.Linear(hidden, hidden)
        self.value = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        # x: [B, T, d]; pad_mask: [B, T] bool, True where the token is real.
        bsz, seq, _ = x.shape

        def split(t):
            return t.view(bsz, seq, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)  # [B, h, T, T]
        scores = scores.masked_fill(~pad_mask[:, None, None, :], float("-inf"))
        # Explicit softmax so both token-axis reductions run in sorted order.
        scores = scores - scores.amax(dim=-1, keepdim=True)
        weights = torch.exp(scores)
        weights = weights / ordered_sum(weights, dim=-1).unsqueeze(-1)
        weights = self.dropout(weights)
        mixed = ordered_sum(weights.unsqueeze(-1) * v.unsqueeze(2), dim=3)  # [B, h, T, hd]
        mixed = mixed.transpose(1, 2).reshape(bsz, seq, -1)
        return self.out(mixed)


class EncoderLayer(nn.Module):
    """Pre-norm block: attention and GELU feed-forward, residual throughout."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(config.hidden)
        self.attn = MultiHeadSelfAttention(config.hidden, config.heads, config.dropout)
        self.norm2 = nn.LayerNorm(config.hidden)
        self.ffn = nn.Sequential(
            nn.Linear(config.hidden, config.ffn_dim),
            nn.GELU(),
            nn.Linear(config.ffn_dim, config.hidden),
        )
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.dropout(self.attn(self.norm1(x), pad_mask))
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x


class Backbone(nn.Module):
    """Stack of encoder layers; a zero-layer stack is the identity."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.layers))
        self.final_norm = nn.LayerNorm(config.hidden) if config.layers > 0 else None
        self.apply(init_weights)

    def forward(self, tokens: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.config.hidden:
            raise ValueError(f"token dim {tokens.shape[-1]} != hidden {self.config.hidden}")
        x = tokens
        for layer in self.layers:
            x = layer(x, pad_mask)
        if self.final_norm is not None:
            x = self.final_norm(x)
        return x


def count_parameters(config: ModelConfig) -> int:
    """Closed-form backbone parameter count (encoder stack only)."""
    d = config.hidden
    per_layer = (
        4 * (d * d + d)          # q, k, v, out projections
        + 2 * 2 * d              # two layer norms
        + (d * config.ffn_dim + config.ffn_dim)  # ffn in
        + (config.ffn_dim * d + d)               # ffn out
    )
    final = 2 * d if config.layers > 0 else 0
    return config.layers * per_layer + final
