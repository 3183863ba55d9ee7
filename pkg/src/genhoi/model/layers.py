"""Transformer building blocks (post-norm, DETR layout) and positional encoding."""

from __future__ import annotations

import math
from collections.abc import Callable

import torch
from torch import nn
from torch.nn import functional as F

Activation = Callable[[torch.Tensor], torch.Tensor]


def activation_fn(name: str) -> Activation:
    if name == "relu":
        return F.relu
    if name == "gelu":
        return F.gelu
    raise ValueError(f"Unknown activation {name!r}")


def _with_pos(x: torch.Tensor, pos: torch.Tensor | None) -> torch.Tensor:
    return x if pos is None else x + pos


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, activation: str = "relu") -> None:
        super().__init__()
        self.activation = activation_fn(activation)
        self.linear1 = nn.Linear(dim, hidden)
        self.linear2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear2(self.activation(self.linear1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int, activation: str = "relu") -> None:
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, dropout=0.0, batch_first=True)
        self.ffn = FeedForward(dim, ffn_dim, activation)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, src: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
        q = k = _with_pos(src, pos)
        src = self.norm1(src + self.self_attn(q, k, src, need_weights=False)[0])
        return self.norm2(src + self.ffn(src))


class DecoderLayer(nn.Module):
    """Self-attention over queries, cross-attention to the visual tokens, FFN."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, activation: str = "relu") -> None:
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, dropout=0.0, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(dim, heads, dropout=0.0, batch_first=True)
        self.ffn = FeedForward(dim, ffn_dim, activation)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)

    def forward(
        self,
        tgt: torch.Tensor,
        memory: torch.Tensor,
        pos: torch.Tensor,
        query_pos: torch.Tensor | None = None,
    ) -> torch.Tensor:
        q = k = _with_pos(tgt, query_pos)
        tgt = self.norm1(tgt + self.self_attn(q, k, tgt, need_weights=False)[0])
        attended = self.cross_attn(
            _with_pos(tgt, query_pos), memory + pos, memory, need_weights=False
        )[0]
        tgt = self.norm2(tgt + attended)
        return self.norm3(tgt + self.ffn(tgt))


class MLP(nn.Module):
    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        output_dim: int,
        num_layers: int,
        activation: str = "relu",
    ) -> None:
        super().__init__()
        self.activation = activation_fn(activation)
        dims = [input_dim] + [hidden_dim] * (num_layers - 1)
        self.layers = nn.ModuleList(
            nn.Linear(n, k) for n, k in zip(dims, [*dims[1:], output_dim], strict=True)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return x


def sine_position_encoding(
    height: int,
    width: int,
    dim: int,
    *,
    temperature: float = 10000.0,
    dtype: torch.dtype = torch.float32,
    device: torch.device | None = None,
) -> torch.Tensor:
    """2D sine encoding of a ``height x width`` grid, flattened to ``(H*W, dim)``.

    Half the channels encode y and half x; coordinates are normalized to
    ``(0, 2*pi]``.
    """
    if dim % 4 != 0:
        raise ValueError(f"Positional encoding dim must be a multiple of 4, got {dim}")
    half = dim // 2
    scale = 2 * math.pi
    eps = 1e-6
    y = torch.arange(1, height + 1, dtype=torch.float64, device=device)
    x = torch.arange(1, width + 1, dtype=torch.float64, device=device)
    y = y / (height + eps) * scale
    x = x / (width + eps) * scale
    dim_t = torch.arange(half, dtype=torch.float64, device=device)
    dim_t = temperature ** (2 * torch.div(dim_t, 2, rounding_mode="floor") / half)

    def _encode(coords: torch.Tensor) -> torch.Tensor:
        raw = coords[:, None] / dim_t
        return torch.stack((raw[:, 0::2].sin(), raw[:, 1::2].cos()), dim=2).flatten(1)

    pos_y = _encode(y)[:, None, :].expand(height, width, half)
    pos_x = _encode(x)[None, :, :].expand(height, width, half)
    return torch.cat((pos_y, pos_x), dim=2).reshape(height * width, dim).to(dtype)
