"""Toy multi-scale encoder with the stage topology the cascade expects.

Five feature maps F1..F5: a stride-4 stem plus four residual stages, with
stride-2 convs swapped for dilated convs once the configured output stride is
reached, and an atrous context block on the deepest stage. Small enough to
train on a desk CPU; the cascade only depends on the stride/channel contract,
not on backbone capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    output_stride: int = 16
    widths: tuple[int, int, int, int, int] = (16, 24, 32, 48, 64)
    context_block: bool = True
    norm: str = "group"

    def validate(self):
        if self.output_stride not in (8, 16):
            raise ConfigError(f"output_stride {self.output_stride} not in {{8, 16}}")
        if len(self.widths) != 5:
            raise ConfigError("widths must have 5 entries (stages 1..5)")
        if any(w < 4 for w in self.widths):
            raise ConfigError(f"all widths must be >= 4, got {self.widths}")
        if self.norm not in ("batch", "group"):
            raise ConfigError(f"norm {self.norm!r} not in {{batch, group}}")


@dataclass
class MultiScaleFeatures:
    """Encoder pyramid: stage index {1..5} -> feature map, plus metadata."""

    features: dict[int, torch.Tensor]
    strides: dict[int, int]
    channels: dict[int, int]

    def __getitem__(self, stage: int) -> torch.Tensor:
        return self.features[stage]


def _group_count(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    return nn.GroupNorm(_group_count(channels), channels)


def conv_norm_relu(in_ch, out_ch, kernel, norm, stride=1, dilation=1):
    pad = dilation * (kernel - 1) // 2
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=pad,
                  dilation=dilation, bias=False),
        make_norm(norm, out_ch),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    def __init__(self, in_ch, out_ch, norm, stride=1, dilation=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=dilation,
                               dilation=dilation, bias=False)
        self.norm1 = make_norm(norm, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=dilation,
                               dilation=dilation, bias=False)
        self.norm2 = make_norm(norm, out_ch)
        if stride != 1 or in_ch != out_ch:
            self.skip = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                make_norm(norm, out_ch),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)), inplace=True)
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.skip(x), inplace=True)


class ContextBlock(nn.Module):
    """Parallel dilated 3x3 convs (1, 2, 4, 8) plus a global-pool branch."""

    DILATIONS = (1, 2, 4, 8)

    def __init__(self, in_ch, out_ch, norm):
        super().__init__()
        self.branches = nn.ModuleList(
            [conv_norm_relu(in_ch, out_ch, 3, norm, dilation=d) for d in self.DILATIONS]
        )
        # No norm here: the pooled map is 1x1, so normalizing it would zero
        # the signal (and group_norm rejects single-value groups outright).
        self.pool_branch = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 1, bias=True),
            nn.ReLU(inplace=True),
        )
        self.fuse = conv_norm_relu(out_ch * (len(self.DILATIONS) + 1), out_ch, 1, norm)

    def forward(self, x):
        outs = [branch(x) for branch in self.branches]
        pooled = self.pool_branch(x.mean(dim=(-2, -1), keepdim=True))
        outs.append(pooled.expand(-1, -1, x.shape[-2], x.shape[-1]))
        return self.fuse(torch.cat(outs, dim=1))


class ToyEncoder(nn.Module):
    """Stem (stride 4) -> four residual stages -> context block.

    Strides follow {4, 8, min(16, OS), OS} for F1..F4; F5 shares F4's stride.
    """

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w = cfg.widths

        self.stem = nn.Sequential(
            conv_norm_relu(3, w[0], 3, cfg.norm, stride=2),
            conv_norm_relu(w[0], w[0], 3, cfg.norm, stride=2),
        )

        stage_strides = {}
        current, dilation = 4, 1
        self.stages = nn.ModuleList()
        in_ch = w[0]
        for i in range(4):
            if i == 0:
                stride = 1
            elif current < cfg.output_stride:
                stride, current = 2, current * 2
            else:
                stride, dilation = 1, dilation * 2
            self.stages.append(
                ResidualBlock(in_ch, w[i], cfg.norm, stride=stride, dilation=dilation)
            )
            stage_strides[i + 1] = current
            in_ch = w[i]

        if cfg.context_block:
            self.context = ContextBlock(w[3], w[4], cfg.norm)
        else:
            self.context = conv_norm_relu(w[3], w[4], 3, cfg.norm)
        stage_strides[5] = stage_strides[4]
        self.stage_strides = stage_strides

    def forward(self, image: torch.Tensor) -> MultiScaleFeatures:
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        if image.dim() != 4 or image.shape[-3] != 3:
            raise ShapeError(f"expected 3xHxW or Bx3xHxW image, got {tuple(image.shape)}")
        h, w = image.shape[-2], image.shape[-1]
        if h % 32 != 0:
            raise ShapeError(f"height {h} not divisible by 32")
        if w % 32 != 0:
            raise ShapeError(f"width {w} not divisible by 32")

        feats = {}
        x = self.stem(image)
        for i, stage in enumerate(self.stages):
            x = stage(x)
            feats[i + 1] = x
        feats[5] = self.context(feats[4])

        if squeeze:
            feats = {k: v.squeeze(0) for k, v in feats.items()}
        return MultiScaleFeatures(
            features=feats,
            strides=dict(self.stage_strides),
            channels={k: v.shape[-3] for k, v in feats.items()},
        )


def resize_to(feature: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
    """Bilinear resample (align_corners off); exact identity when sizes match."""
    th, tw = target
    if th < 1 or tw < 1:
        raise ConfigError(f"target dims {target} must be >= 1")
    if feature.shape[-2] == th and feature.shape[-1] == tw:
        return feature
    squeeze = feature.dim() == 3
    if squeeze:
        feature = feature.unsqueeze(0)
    out = F.interpolate(feature, size=(th, tw), mode="bilinear", align_corners=False)
    return out.squeeze(0) if squeeze else out


def resize_to_stage1(feature: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
    """Bring a deeper feature map to the finest (stride-4) resolution."""
    return resize_to(feature, target)
