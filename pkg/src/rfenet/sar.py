"""Point-level refinement of uncertain semantic features with shape context.

The K pixels whose class distribution has the highest entropy are the hard
cases (boundary neighborhoods, reflections). The M pixels with the highest
predicted boundary confidence act as a compact sketch of the object contour.
Cross-attention lets every hard point pull context from that sketch; refined
rows are written back in place, everything else stays bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, SelectionError, ShapeError


@dataclass(frozen=True)
class SarConfig:
    k: int | None = None  # uncertain points; None = ceil(h*w/16), 0 disables
    m: int | None = None  # boundary points; None = min(64, h*w)
    heads: int = 4
    d_k: int | None = None  # per-head key dim; None = channels // heads

    def validate(self, channels: int):
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if (self.k is not None and self.k < 0) or (self.m is not None and self.m < 0):
            raise ConfigError("point counts k and m must be >= 0")
        d_k = self.d_k if self.d_k is not None else channels // self.heads
        if d_k < 1 or d_k * self.heads > channels:
            raise ConfigError(
                f"heads*d_k = {self.heads}*{d_k} exceeds {channels} channels"
            )

    def resolve_k(self, h: int, w: int) -> int:
        return math.ceil(h * w / 16) if self.k is None else self.k

    def resolve_m(self, h: int, w: int) -> int:
        return min(64, h * w) if self.m is None else self.m


@dataclass
class PointSet:
    """Selected flat positions with their scores, highest first."""

    indices: torch.Tensor  # long, (P,)
    scores: torch.Tensor  # (P,), non-increasing
    features: torch.Tensor | None = None  # (P, C) once gathered


def pixel_entropy(p_s: torch.Tensor) -> torch.Tensor:
    """Shannon entropy per pixel of an (n, h, w) probability map, 0*ln0 = 0."""
    return -torch.special.xlogy(p_s, p_s).sum(dim=-3)


def _top_points(score_map: torch.Tensor, count: int, what: str) -> PointSet:
    flat = score_map.reshape(-1)
    if count > flat.numel():
        raise SelectionError(
            f"cannot select {count} {what} points from {flat.numel()} pixels"
        )
    # Stable sort on the negated scores: ties resolve to the smaller flat index.
    order = torch.argsort(-flat, stable=True)
    idx = order[:count]
    return PointSet(indices=idx, scores=flat[idx])


def select_uncertain(entropy: torch.Tensor, k: int) -> PointSet:
    """Top-k entropy pixels of an (h, w) map."""
    return _top_points(entropy, k, "uncertain")


def select_confident_boundary(p_b: torch.Tensor, m: int) -> PointSet:
    """Top-m boundary-probability pixels of a (1, h, w) or (h, w) map."""
    return _top_points(p_b, m, "boundary")


def gather_features(points: PointSet, feature_map: torch.Tensor) -> PointSet:
    """Fill the per-point feature rows from a (C, h, w) map."""
    c = feature_map.shape[-3]
    rows = feature_map.reshape(c, -1)[:, points.indices].transpose(0, 1)
    return PointSet(indices=points.indices, scores=points.scores, features=rows)


class CrossAttention(nn.Module):
    """Multi-head scaled dot-product attention of queries over a context set.

    Keys and values are both projected from the context rows. With an empty
    context the queries pass through unchanged (callers treat that as a
    skipped refinement, not an error).
    """

    def __init__(self, channels: int, heads: int = 4, d_k: int | None = None):
        super().__init__()
        self.heads = heads
        self.d_k = d_k if d_k is not None else channels // heads
        inner = self.heads * self.d_k
        self.q_proj = nn.Linear(channels, inner)
        self.k_proj = nn.Linear(channels, inner)
        self.v_proj = nn.Linear(channels, inner)
        self.out_proj = nn.Linear(inner, channels)

    def attention_weights(self, q_rows: torch.Tensor, v_rows: torch.Tensor) -> torch.Tensor:
        """(heads, K, M) softmax rows; exposed for the row-sum checks."""
        k_len, m_len = q_rows.shape[0], v_rows.shape[0]
        q = self.q_proj(q_rows).reshape(k_len, self.heads, self.d_k).transpose(0, 1)
        k = self.k_proj(v_rows).reshape(m_len, self.heads, self.d_k).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)
        return torch.softmax(scores, dim=-1)

    def forward(self, q_rows: torch.Tensor, v_rows: torch.Tensor) -> torch.Tensor:
        if v_rows.shape[0] == 0:
            return q_rows
        k_len, m_len = q_rows.shape[0], v_rows.shape[0]
        weights = self.attention_weights(q_rows, v_rows)
        v = self.v_proj(v_rows).reshape(m_len, self.heads, self.d_k).transpose(0, 1)
        mixed = (weights @ v).transpose(0, 1).reshape(k_len, self.heads * self.d_k)
        return self.out_proj(mixed)


class PointRefinement(nn.Module):
    """SAR stage: select, cross-attend, fuse residually, scatter back."""

    def __init__(self, channels: int, cfg: SarConfig):
        super().__init__()
        cfg.validate(channels)
        self.cfg = cfg
        self.attend = CrossAttention(channels, cfg.heads, cfg.d_k)
        self.fuse = nn.Linear(channels, channels)
        # Zero-init the residual fuse: refinement starts as an exact identity
        # and only deviates where training finds the attended context useful.
        # Early prediction maps select near-arbitrary points, and writing
        # random mixtures into the most uncertain pixels stalls convergence.
        nn.init.zeros_(self.fuse.weight)
        nn.init.zeros_(self.fuse.bias)

    def refine_single(self, f_s, p_s, p_b):
        """One image: (C, h, w) features with its prediction maps.

        Returns the refined map plus the two point sets (empty refinement
        returns f_s itself and (None, None)).
        """
        h, w = f_s.shape[-2:]
        k = self.cfg.resolve_k(h, w)
        m = self.cfg.resolve_m(h, w)
        if k == 0 or m == 0:
            return f_s, None, None

        with torch.no_grad():  # indices are constants; no gradient through selection
            uncertain = select_uncertain(pixel_entropy(p_s), k)
            confident = select_confident_boundary(p_b, m)
        uncertain = gather_features(uncertain, f_s)
        confident = gather_features(confident, f_s)

        attended = self.attend(uncertain.features, confident.features)
        refined_rows = uncertain.features + self.fuse(attended)

        c = f_s.shape[-3]
        flat = f_s.reshape(c, -1).clone()
        flat[:, uncertain.indices] = refined_rows.transpose(0, 1)
        return flat.reshape(f_s.shape), uncertain, confident

    def forward(self, f_s, sem_logits, bnd_logits):
        """Batched path: loops refine_single over the batch."""
        if f_s.shape[-2:] != sem_logits.shape[-2:] or f_s.shape[-2:] != bnd_logits.shape[-2:]:
            raise ShapeError("feature/logit spatial dims disagree in point refinement")
        squeeze = f_s.dim() == 3
        fs = f_s.unsqueeze(0) if squeeze else f_s
        sem = sem_logits.unsqueeze(0) if squeeze else sem_logits
        bnd = bnd_logits.unsqueeze(0) if squeeze else bnd_logits

        outs, uncertain_sets, confident_sets = [], [], []
        for i in range(fs.shape[0]):
            p_s = torch.softmax(sem[i], dim=-3)
            p_b = torch.sigmoid(bnd[i])
            out, unc, conf = self.refine_single(fs[i], p_s, p_b)
            outs.append(out)
            uncertain_sets.append(unc)
            confident_sets.append(conf)
        out = torch.stack(outs, dim=0)
        if squeeze:
            out = out.squeeze(0)
        return out, uncertain_sets, confident_sets
