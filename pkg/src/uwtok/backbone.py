"""Hybrid convolutional/attention autoencoder backbone.

Encoder: per-level residual stacks with strided downsampling between levels
(channel expansion happens concurrently with the stride), a bottleneck stack
of transformer blocks over the flattened token grid, an optional 2x channel
projection, a linear head to the latent width, and a final siglu. The decoder
mirrors the structure with nearest-neighbor upsampling. Both are resolution
agnostic: any input whose sides divide by the downsample factor is accepted
and position encodings are recomputed per resolution.

Public tensors are channel-last: images (B, H, W, 3) in [-1, 1], latents
(B, h, w, g*d').
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ValidationError
from .quantizer import siglu


@dataclass(frozen=True)
class BackboneConfig:
    base_channel: int
    channel_mult: tuple = (1, 2, 4)
    num_res_blocks: int = 2
    num_attn_blocks: int = 2
    attn_heads: int = 4
    bottleneck_double: bool = True
    concurrent_resample: bool = True
    siglu_enabled: bool = True
    latent_channels: int = 32
    image_channels: int = 3

    def __post_init__(self):
        if len(self.channel_mult) == 0:
            raise ConfigError("channel_mult must not be empty")
        if self.base_channel < 1:
            raise ConfigError(f"base_channel must be positive, got {self.base_channel}")
        if self.num_res_blocks < 0 or self.num_attn_blocks < 0:
            raise ConfigError("block counts must be nonnegative")

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.channel_mult) - 1)

    @property
    def level_channels(self) -> tuple:
        return tuple(self.base_channel * m for m in self.channel_mult)


def _norm(channels):
    for groups in (32, 16, 8, 4, 2, 1):
        if channels % groups == 0:
            return nn.GroupNorm(groups, channels)
    return nn.GroupNorm(1, channels)


class ResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.norm1 = _norm(channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = _norm(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class Downsample(nn.Module):
    """Halve the spatial size, changing width in the same strided op.

    Legacy mode reproduces the older two-step order: stride at constant
    width, then a 1x1 expansion. Shapes agree, parameterization does not.
    """

    def __init__(self, in_channels, out_channels, concurrent=True):
        super().__init__()
        self.concurrent = concurrent
        if concurrent:
            self.op = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)
        else:
            self.op = nn.Sequential(
                nn.Conv2d(in_channels, in_channels, 3, stride=2, padding=1),
                nn.Conv2d(in_channels, out_channels, 1),
            )

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ConfigError(
                f"cannot halve odd spatial dims {tuple(x.shape[-2:])}"
            )
        return self.op(x)


class Upsample(nn.Module):
    """Nearest-neighbor doubling with the channel change in the same conv."""

    def __init__(self, in_channels, out_channels, concurrent=True):
        super().__init__()
        if concurrent:
            self.op = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        else:
            self.op = nn.Sequential(
                nn.Conv2d(in_channels, in_channels, 3, padding=1),
                nn.Conv2d(in_channels, out_channels, 1),
            )

    def forward(self, x):
        return self.op(F.interpolate(x, scale_factor=2.0, mode="nearest"))


class AttentionBlock(nn.Module):
    """Pre-LN transformer block over a (B, N, C) token sequence."""

    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


def position_encoding_2d(h, w, dim, device=None, dtype=torch.float32):
    """Sinusoidal 2-D position encoding, rows in the first half of the
    channels and columns in the second; recomputed per resolution."""
    half = dim // 2
    pe = torch.zeros(h, w, dim, device=device, dtype=dtype)
    pe[..., :half] = _axis_encoding(torch.arange(h, device=device), half, dtype).unsqueeze(1)
    pe[..., half:2 * half] = _axis_encoding(
        torch.arange(w, device=device), half, dtype
    ).unsqueeze(0)
    return pe.reshape(h * w, dim)


def _axis_encoding(positions, dim, dtype):
    half = max(dim // 2, 1)
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, device=positions.device) / half
    )
    angles = positions.to(dtype).unsqueeze(-1) * freqs.to(dtype)
    enc = torch.zeros(positions.numel(), dim, device=positions.device, dtype=dtype)
    enc[:, 0::2] = torch.sin(angles)[:, : (dim + 1) // 2]
    enc[:, 1::2] = torch.cos(angles)[:, : dim // 2]
    return enc


class AttentionStack(nn.Module):
    """Bottleneck transformer over the flattened h*w grid."""

    def __init__(self, dim, heads, depth):
        super().__init__()
        self.dim = dim
        self.blocks = nn.ModuleList(AttentionBlock(dim, heads) for _ in range(depth))

    def forward(self, x):
        if len(self.blocks) == 0:
            return x
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        tokens = tokens + position_encoding_2d(
            h, w, c, device=x.device, dtype=x.dtype
        ).unsqueeze(0)
        tokens = self.run_tokens(tokens)
        return tokens.transpose(1, 2).reshape(b, c, h, w)

    def run_tokens(self, tokens):
        # exposed separately so permutation equivariance is testable
        for block in self.blocks:
            tokens = block(tokens)
        return tokens


def _check_divisible(height, width, factor):
    if height % factor:
        raise ValidationError(
            f"image height {height} is not divisible by the downsample factor {factor}"
        )
    if width % factor:
        raise ValidationError(
            f"image width {width} is not divisible by the downsample factor {factor}"
        )


class Encoder(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        chans = config.level_channels
        self.stem = nn.Conv2d(config.image_channels, chans[0], 3, padding=1)
        stages = []
        for i, c in enumerate(chans):
            for _ in range(config.num_res_blocks):
                stages.append(ResBlock(c))
            if i < len(chans) - 1:
                stages.append(Downsample(c, chans[i + 1], config.concurrent_resample))
        self.stages = nn.Sequential(*stages)
        self.attn = AttentionStack(chans[-1], config.attn_heads, config.num_attn_blocks)
        bottleneck = 2 * chans[-1] if config.bottleneck_double else chans[-1]
        self.expand = (
            nn.Conv2d(chans[-1], bottleneck, 1) if config.bottleneck_double else nn.Identity()
        )
        self.head = nn.Conv2d(bottleneck, config.latent_channels, 1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W, 3) images in [-1, 1] -> (B, H/f, W/f, latent) grid."""
        _check_divisible(images.shape[1], images.shape[2], self.config.downsample_factor)
        x = images.permute(0, 3, 1, 2)
        x = self.stem(x)
        x = self.stages(x)
        x = self.attn(x)
        x = self.head(self.expand(x))
        if self.config.siglu_enabled:
            x = siglu(x)
        return x.permute(0, 2, 3, 1)


class Decoder(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        chans = config.level_channels
        bottleneck = 2 * chans[-1] if config.bottleneck_double else chans[-1]
        self.head = nn.Conv2d(config.latent_channels, bottleneck, 1)
        self.contract = (
            nn.Conv2d(bottleneck, chans[-1], 1) if config.bottleneck_double else nn.Identity()
        )
        self.attn = AttentionStack(chans[-1], config.attn_heads, config.num_attn_blocks)
        stages = []
        for i in reversed(range(len(chans))):
            for _ in range(config.num_res_blocks):
                stages.append(ResBlock(chans[i]))
            if i > 0:
                stages.append(Upsample(chans[i], chans[i - 1], config.concurrent_resample))
        self.stages = nn.Sequential(*stages)
        self.out_norm = _norm(chans[0])
        self.out = nn.Conv2d(chans[0], config.image_channels, 3, padding=1)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        """(B, h, w, latent) quantized grid -> (B, H, W, 3) image in [-1, 1]."""
        x = latent.permute(0, 3, 1, 2)
        x = self.contract(self.head(x))
        x = self.attn(x)
        x = self.stages(x)
        x = self.out(F.silu(self.out_norm(x)))
        return torch.tanh(x).permute(0, 2, 3, 1)


def build_encoder(config: BackboneConfig) -> Encoder:
    return Encoder(config)


def build_decoder(config: BackboneConfig) -> Decoder:
    return Decoder(config)


def parameter_summary(module: nn.Module):
    """Name/shape/dtype listing plus total count; deterministic per config."""
    rows = [
        (name, tuple(p.shape), str(p.dtype).replace("torch.", ""))
        for name, p in module.named_parameters()
    ]
    total = sum(math.prod(shape) for _, shape, _ in rows)
    return rows, total
