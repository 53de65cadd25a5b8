"""Training objective: supervised at the output head and at every stage.

The final semantic prediction carries full weight; per-stage semantic and
boundary predictions are auxiliary terms with small multipliers so the early
stages stay honest without dominating the gradient. Stage targets are built
by shrinking the ground truth to the stage resolution (nearest-neighbor for
class masks, max-pooling for boundary bands so thin structures survive).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    lambda_s: float = 0.01  # per-stage semantic weight
    lambda_b: float = 0.25  # per-stage boundary weight
    dice_smooth: float = 1.0

    def validate(self):
        if self.lambda_s < 0 or self.lambda_b < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.dice_smooth <= 0:
            raise ConfigError("dice_smooth must be > 0")


@dataclass
class LossReport:
    """Scalar tensors for every objective term plus their weighted sum.

    Stage lists run in stage order 1..4 (finest first).
    """

    total: torch.Tensor
    semantic_out: torch.Tensor
    semantic_stages: list = field(default_factory=list)
    boundary_stages: list = field(default_factory=list)

    def row(self) -> dict:
        """Plain floats keyed by the training-log column names."""
        d = {"total": float(self.total.detach()),
             "L_s_out": float(self.semantic_out.detach())}
        for i, t in enumerate(self.semantic_stages):
            d[f"L_s_{i + 1}"] = float(t.detach())
        for i, t in enumerate(self.boundary_stages):
            d[f"L_b_{i + 1}"] = float(t.detach())
        return d


def cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean pixel cross-entropy; logits (n, h, w) or (B, n, h, w)."""
    if logits.dim() == 3:
        logits, target = logits.unsqueeze(0), target.unsqueeze(0)
    n = logits.shape[1]
    if int(target.max()) >= n or int(target.min()) < 0:
        raise DataError(f"mask contains class ids outside [0, {n})")
    return F.cross_entropy(logits, target.long())


def dice_loss(pred: torch.Tensor, target: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """Soft dice with a squared denominator, averaged over the batch.

    1 - (2*sum(p*t) + smooth) / (sum(p^2) + sum(t^2) + smooth), sums taken
    per sample over all pixels. pred must already be a probability map.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"dice shapes disagree: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.dim() == 2:
        pred, target = pred.unsqueeze(0), target.unsqueeze(0)
    p = pred.reshape(pred.shape[0], -1)
    t = target.reshape(target.shape[0], -1).to(p.dtype)
    inter = (p * t).sum(dim=1)
    denom = (p * p).sum(dim=1) + (t * t).sum(dim=1)
    return (1.0 - (2.0 * inter + smooth) / (denom + smooth)).mean()


def shrink_mask(mask: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Nearest-neighbor downsample of an integer class mask."""
    if mask.shape[-2:] == size:
        return mask
    m = mask
    squeeze = m.dim() == 2
    if squeeze:
        m = m.unsqueeze(0)
    m = F.interpolate(m.unsqueeze(1).float(), size=size, mode="nearest").squeeze(1)
    m = m.long()
    return m.squeeze(0) if squeeze else m


def shrink_boundary(boundary: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Max-pool downsample of a binary boundary band (keeps thin structures)."""
    if boundary.shape[-2:] == size:
        return boundary.float()
    b = boundary.float()
    squeeze = b.dim() == 2
    if squeeze:
        b = b.unsqueeze(0)
    b = F.adaptive_max_pool2d(b.unsqueeze(1), size).squeeze(1)
    return b.squeeze(0) if squeeze else b


def combine_terms(semantic_out, semantic_stages, boundary_stages, cfg: LossConfig):
    """Weighted sum of the objective terms; works on tensors or plain floats."""
    total = semantic_out
    for t in semantic_stages:
        total = total + cfg.lambda_s * t
    for t in boundary_stages:
        total = total + cfg.lambda_b * t
    return total


def joint_loss(final_logits, stage_sem_logits, stage_bnd_logits, mask, boundary,
               cfg: LossConfig = LossConfig()) -> LossReport:
    """Full objective for one forward pass.

    final_logits live at label resolution; stage logits may be smaller, in
    which case the targets are shrunk to match. Stage lists must run in
    stage order 1..4. Boundary logits pass through sigmoid before dice.
    """
    cfg.validate()
    sem_terms = []
    for logits in stage_sem_logits:
        target = shrink_mask(mask, tuple(logits.shape[-2:]))
        sem_terms.append(cross_entropy(logits, target))
    bnd_terms = []
    for logits in stage_bnd_logits:
        target = shrink_boundary(boundary, tuple(logits.shape[-2:]))
        probs = torch.sigmoid(logits)
        if probs.dim() >= 3 and probs.shape[-3] == 1:
            probs = probs.squeeze(-3)
        bnd_terms.append(dice_loss(probs, target, cfg.dice_smooth))

    out_term = cross_entropy(final_logits, mask)
    return LossReport(
        total=combine_terms(out_term, sem_terms, bnd_terms, cfg),
        semantic_out=out_term,
        semantic_stages=sem_terms,
        boundary_stages=bnd_terms,
    )
