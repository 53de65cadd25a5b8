"""Selective mutual evolution between the semantic and boundary branches.

A mutual block looks at both branches jointly and predicts a two-channel
sigmoid attention map; each channel gates its own branch, and the gated
feature is folded back residually. The semantic branch gets highlighted
around plausible contours, the boundary branch gets background edges
suppressed — each side evolves under the other's guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoder import conv_norm_relu, make_norm
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class SmeConfig:
    width: int = 32
    fuse_kernel: int = 3
    branch_kernels: tuple[int, int] = (5, 9)
    head_depth: int = 3  # convs before the sigmoid, final 1x1-to-2 included
    blocks: int = 1
    norm: str = "group"

    def validate(self):
        if any(k % 2 == 0 for k in self.branch_kernels):
            raise ConfigError(f"branch_kernels must be odd, got {self.branch_kernels}")
        if self.fuse_kernel % 2 == 0:
            raise ConfigError(f"fuse_kernel must be odd, got {self.fuse_kernel}")
        if self.head_depth < 1:
            raise ConfigError("head_depth must be >= 1")
        if self.width < 1 or self.blocks < 1:
            raise ConfigError("width and blocks must be >= 1")


@dataclass
class MutualAttention:
    """Sigmoid attention pair: a_s gates the semantic branch, a_b the boundary."""

    a_s: torch.Tensor
    a_b: torch.Tensor


class AttentionAggregator(nn.Module):
    """Two-channel attention from the concatenated branch features.

    Fuse with a small kernel, look wider through parallel 5x5 / 9x9 branches,
    then a short conv head ending in a sigmoid.
    """

    def __init__(self, in_ch: int, cfg: SmeConfig):
        super().__init__()
        w = cfg.width
        self.fuse = conv_norm_relu(in_ch, w, cfg.fuse_kernel, cfg.norm)
        self.branch_a = conv_norm_relu(w, w, cfg.branch_kernels[0], cfg.norm)
        self.branch_b = conv_norm_relu(w, w, cfg.branch_kernels[1], cfg.norm)
        head = []
        in_head = 2 * w
        for _ in range(cfg.head_depth - 1):
            head.append(conv_norm_relu(in_head, w, 3, cfg.norm))
            in_head = w
        self.head = nn.Sequential(*head)
        self.head_out = nn.Conv2d(in_head, 2, 1)

    def forward(self, f_s: torch.Tensor, f_b: torch.Tensor) -> MutualAttention:
        if f_s.shape[-2:] != f_b.shape[-2:]:
            raise ShapeError(
                f"spatial mismatch: semantic {tuple(f_s.shape[-2:])} vs "
                f"boundary {tuple(f_b.shape[-2:])}"
            )
        x = torch.cat([f_s, f_b], dim=-3)
        unbatched = x.dim() == 3  # norms need an explicit batch axis
        if unbatched:
            x = x.unsqueeze(0)
        fused = self.fuse(x)
        wide = torch.cat([self.branch_a(fused), self.branch_b(fused)], dim=-3)
        a = torch.sigmoid(self.head_out(self.head(wide)))
        if unbatched:
            a = a.squeeze(0)
        return MutualAttention(a_s=a.select(-3, 0), a_b=a.select(-3, 1))


class ResidualEnhance(nn.Module):
    """f + conv(f * a): bias-free so a == 0 reproduces f exactly."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1, bias=False)

    def forward(self, f: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return f + self.conv(f * a.unsqueeze(-3))


class MutualBlock(nn.Module):
    """One evolution step over (semantic, boundary) at a common width.

    `enhance_semantic` / `enhance_boundary` swap a branch's enhancement for an
    identity (one-way assistance ablations); `detach_attention` additionally
    blocks gradients through the attention map so the unassisted branch
    receives no information from the other side.
    """

    def __init__(self, width: int, cfg: SmeConfig,
                 enhance_semantic=True, enhance_boundary=True, detach_attention=False):
        super().__init__()
        self.aggregator = AttentionAggregator(2 * width, cfg)
        self.enhance_s = ResidualEnhance(width) if enhance_semantic else None
        self.enhance_b = ResidualEnhance(width) if enhance_boundary else None
        self.detach_attention = detach_attention

    def forward(self, f_s, f_b):
        attention = self.aggregator(f_s, f_b)
        a_s, a_b = attention.a_s, attention.a_b
        if self.detach_attention:
            a_s, a_b = a_s.detach(), a_b.detach()
        out_s = self.enhance_s(f_s, a_s) if self.enhance_s is not None else f_s
        out_b = self.enhance_b(f_b, a_b) if self.enhance_b is not None else f_b
        return out_s, out_b, attention


class MutualEvolutionStage(nn.Module):
    """Projects both inputs to a common width, then runs the mutual block(s).

    Returns (semantic, boundary, attention-of-last-block); the attention pair
    is kept for heatmap export.
    """

    def __init__(self, in_s: int, in_b: int, cfg: SmeConfig,
                 enhance_semantic=True, enhance_boundary=True, detach_attention=False):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.proj_s = nn.Conv2d(in_s, cfg.width, 1, bias=False)
        self.proj_b = nn.Conv2d(in_b, cfg.width, 1, bias=False)
        self.blocks = nn.ModuleList(
            [
                MutualBlock(cfg.width, cfg, enhance_semantic, enhance_boundary,
                            detach_attention)
                for _ in range(cfg.blocks)
            ]
        )

    def project(self, f_s, f_b):
        return self.proj_s(f_s), self.proj_b(f_b)

    def forward(self, f_s, f_b):
        if f_s.shape[-2:] != f_b.shape[-2:]:
            raise ShapeError(
                f"spatial mismatch: semantic {tuple(f_s.shape[-2:])} vs "
                f"boundary {tuple(f_b.shape[-2:])}"
            )
        f_s, f_b = self.project(f_s, f_b)
        attention = None
        for block in self.blocks:
            f_s, f_b, attention = block(f_s, f_b)
        return f_s, f_b, attention

    def freeze_attention_to_zero(self):
        """Weight surgery: every attention map becomes exactly zero."""
        for block in self.blocks:
            out = block.aggregator.head_out
            nn.init.zeros_(out.weight)
            nn.init.constant_(out.bias, -1e9)  # sigmoid underflows to exact 0.0
