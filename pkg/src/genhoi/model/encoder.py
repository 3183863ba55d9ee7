"""Visual encoder: strided conv backbone, 1x1 projection, transformer encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from genhoi.config import ModelConfig
from genhoi.errors import ShapeError
from genhoi.model.layers import EncoderLayer, sine_position_encoding

PIXEL_MEAN = 0.5


@dataclass
class VisualFeatures:
    """Token sequence ``(B, H'*W', C)`` and its positional encoding ``(H'*W', C)``."""

    tokens: torch.Tensor
    pos: torch.Tensor
    height: int
    width: int


def _conv_block(
    in_channels: int, out_channels: int, stride: int, activation: str = "relu"
) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1),
        nn.GroupNorm(math.gcd(8, out_channels), out_channels),
        nn.GELU() if activation == "gelu" else nn.ReLU(),
    )


class VisualEncoder(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        blocks = []
        in_channels = 3
        for channels, stride in zip(config.backbone_channels, config.backbone_strides, strict=True):
            blocks.append(_conv_block(in_channels, channels, stride, config.activation))
            in_channels = channels
        self.backbone = nn.Sequential(*blocks)
        self.input_proj = nn.Conv2d(in_channels, config.hidden_dim, kernel_size=1)
        self.layers = nn.ModuleList(
            EncoderLayer(config.hidden_dim, config.num_heads, config.ffn_dim, config.activation)
            for _ in range(config.num_encoder_layers)
        )

    def forward(self, images: torch.Tensor) -> VisualFeatures:
        """Encode a ``(B, 3, H, W)`` batch of images with values in [0, 1]."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"Expected a (B, 3, H, W) image batch, got {tuple(images.shape)}")
        stride = self.config.total_stride
        if images.shape[2] < stride or images.shape[3] < stride:
            raise ShapeError(
                f"Image {images.shape[3]}x{images.shape[2]} is smaller than the backbone "
                f"stride {stride}"
            )
        features = self.input_proj(self.backbone(images - PIXEL_MEAN))
        _, channels, height, width = features.shape
        tokens = features.flatten(2).transpose(1, 2)
        pos = sine_position_encoding(
            height, width, channels, dtype=tokens.dtype, device=tokens.device
        )
        for layer in self.layers:
            tokens = layer(tokens, pos)
        return VisualFeatures(tokens=tokens, pos=pos, height=height, width=width)
