"""Patch-based vision transformer mapping a chart image to patch features."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from chartalign.errors import ConfigurationError, InputError
from chartalign.layers import Block, init_weights
from chartalign.synth.render import ChartImage


@dataclass(frozen=True)
class VisionConfig:
    patch_size: int = 32
    d_v: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_resolution: int = 448
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d_v % self.num_heads:
            raise ConfigurationError(f"d_v={self.d_v} not divisible by num_heads={self.num_heads}")
        if self.max_resolution % self.patch_size:
            raise ConfigurationError("max_resolution must be divisible by patch_size")

    @property
    def max_grid(self) -> int:
        return self.max_resolution // self.patch_size

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class VisualFeatures:
    tokens: torch.Tensor  # [N_p, d_v]
    source_resolution: int


def patchify(pixels: torch.Tensor, patch_size: int) -> torch.Tensor:
    """[B, H, W, 3] -> [B, (H/P)*(W/P), P*P*3], patches in row-major order."""
    B, H, W, C = pixels.shape
    g_h, g_w = H // patch_size, W // patch_size
    x = pixels.reshape(B, g_h, patch_size, g_w, patch_size, C)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, g_h * g_w, patch_size * patch_size * C)


def unpatchify(patches: torch.Tensor, patch_size: int, grid: int) -> torch.Tensor:
    B = patches.shape[0]
    x = patches.reshape(B, grid, grid, patch_size, patch_size, 3)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, grid * patch_size, grid * patch_size, 3)


class VisionEncoder(nn.Module):
    """Linear patch embedding + learned 2-D position table + pre-norm blocks.

    There is no class token: every patch token is returned.
    """

    def __init__(self, config: VisionConfig):
        super().__init__()
        self.config = config
        P, d = config.patch_size, config.d_v
        self.patch_projection = nn.Parameter(torch.empty(P * P * 3, d))
        self.patch_bias = nn.Parameter(torch.zeros(d))
        self.position_embeddings = nn.Parameter(torch.empty(config.max_grid ** 2, d))
        self.blocks = nn.ModuleList(
            Block(d, config.num_heads, config.mlp_ratio, causal=False) for _ in range(config.num_layers)
        )
        self.norm = nn.LayerNorm(d)
        init_weights(self)
        nn.init.normal_(self.patch_projection, std=(P * P * 3) ** -0.5)
        nn.init.normal_(self.position_embeddings, std=0.02)

    def grid_positions(self, grid: int) -> torch.Tensor:
        G = self.config.max_grid
        if grid > G:
            raise ConfigurationError(f"grid {grid} exceeds the position table ({G}x{G})")
        table = self.position_embeddings.view(G, G, -1)
        return table[:grid, :grid].reshape(grid * grid, -1)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        """pixels [B, H, W, 3] in [0, 1] -> features [B, N_p, d_v]."""
        if pixels.ndim != 4 or pixels.shape[-1] != 3 or pixels.shape[1] != pixels.shape[2]:
            raise ConfigurationError(f"expected square [B, H, W, 3] pixels, got {tuple(pixels.shape)}")
        res = pixels.shape[1]
        P = self.config.patch_size
        if res % P:
            raise ConfigurationError(f"resolution {res} is not divisible by patch size {P}")
        if not torch.isfinite(pixels).all():
            raise InputError("image contains non-finite pixels")
        x = patchify(pixels, P) @ self.patch_projection + self.patch_bias
        x = x + self.grid_positions(res // P)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


def image_tensor(images: list[ChartImage] | ChartImage, dtype=torch.float32) -> torch.Tensor:
    if isinstance(images, ChartImage):
        images = [images]
    return torch.from_numpy(np.stack([im.pixels for im in images])).to(dtype)


def encode(image: ChartImage, params: VisionEncoder) -> VisualFeatures:
    """V = E_v(I) for one image."""
    P = params.config.patch_size
    if image.resolution % P:
        raise ConfigurationError(f"resolution {image.resolution} is not divisible by patch size {P}")
    if not np.isfinite(image.pixels).all():
        raise InputError("image contains non-finite pixels")
    dtype = params.patch_projection.dtype
    with torch.no_grad():
        tokens = params(image_tensor(image, dtype))[0]
    return VisualFeatures(tokens, image.resolution)
