"""Two-branch cascaded segmentation network.

Four stages run at the finest (stride-4) resolution, deepest first. Each
stage mutually evolves a semantic and a boundary feature, then refines the
most uncertain semantic points against confident boundary points. The next
stage consumes the refined semantic feature together with the next shallower
encoder feature, and the boundary branch re-ingests F1 every stage. Final
prediction fuses all four refined features.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import EncoderConfig, ToyEncoder, conv_norm_relu, make_norm, resize_to
from .errors import CheckpointError, ConfigError
from .losses import LossConfig, LossReport, joint_loss
from .sar import PointRefinement, SarConfig
from .sme import MutualAttention, MutualEvolutionStage, SmeConfig

FORMAT_VERSION = 1

ABLATIONS = ("full", "no_sme", "no_sar", "no_cascade",
             "oneway_s2b", "oneway_b2s", "baseline")


@dataclass(frozen=True)
class NetworkConfig:
    n_classes: int = 3
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sme: SmeConfig = field(default_factory=SmeConfig)
    sar: SarConfig = field(default_factory=SarConfig)
    cascade: bool = True  # False: single deepest stage, heads on its outputs
    use_sme: bool = True  # False: branch reduction convs only, no mutual blocks
    use_sar: bool = True  # False: no point refinement modules at all
    feed_refined: bool = True  # next stage eats the refined semantic feature
    enhance_semantic: bool = True  # one-way switches, see apply_ablation
    enhance_boundary: bool = True
    detach_attention: bool = False

    def validate(self):
        if self.n_classes < 2:
            raise ConfigError(f"n_classes {self.n_classes} must be >= 2")
        self.encoder.validate()
        self.sme.validate()


def network_config_from(flat) -> NetworkConfig:
    """Build a NetworkConfig from a flat Config mapping."""
    k, m = flat["model.k"], flat["model.m"]
    return NetworkConfig(
        n_classes=flat["model.n_classes"],
        encoder=EncoderConfig(
            output_stride=flat["model.output_stride"],
            context_block=flat["model.context_block"],
            norm=flat["model.norm"],
        ),
        sme=SmeConfig(
            width=flat["model.sme_width"],
            blocks=flat["model.sme_blocks"],
            norm=flat["model.norm"],
        ),
        sar=SarConfig(
            k=None if k < 0 else k,
            m=None if m < 0 else m,
            heads=flat["model.heads"],
        ),
        cascade=flat["model.cascade"],
        feed_refined=flat["model.feed_refined"],
    )


def apply_ablation(cfg: NetworkConfig, ablation: str) -> NetworkConfig:
    """Translate an ablation name into network switches."""
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}, expected one of {ABLATIONS}")
    base = asdict(cfg)
    for k in ("encoder", "sme", "sar"):
        base[k] = getattr(cfg, k)
    if ablation == "no_sme":
        base["use_sme"] = False
    elif ablation == "no_sar":
        base["use_sar"] = False
    elif ablation == "baseline":
        base["use_sme"] = False
        base["use_sar"] = False
    elif ablation == "no_cascade":
        base["cascade"] = False
    elif ablation == "oneway_s2b":
        base["enhance_boundary"] = False
        base["detach_attention"] = True
    elif ablation == "oneway_b2s":
        base["enhance_semantic"] = False
        base["detach_attention"] = True
    return NetworkConfig(**base)


@dataclass
class StageState:
    """Everything one cascade stage produced, kept for supervision and plots."""

    f_s: torch.Tensor
    f_b: torch.Tensor
    f_refined: torch.Tensor
    attention: MutualAttention | None
    semantic_logits: torch.Tensor  # from the refined feature
    boundary_logits: torch.Tensor
    uncertain: list | None = None  # per-image PointSets (None when SAR skipped)
    confident: list | None = None


@dataclass
class CascadeState:
    stages: dict  # stage index -> StageState, produced in order 4,3,2,1

    def ordered(self):
        return [self.stages[i] for i in sorted(self.stages, reverse=True)]


@dataclass
class NetworkOutput:
    logits: torch.Tensor  # n x H x W at input resolution
    stage_semantic: list  # stage order 1..4 (finest first)
    stage_boundary: list
    cascade: CascadeState | None = None


class _BranchReduce(nn.Module):
    """1x1 reductions standing in for a mutual stage when SME is ablated."""

    def __init__(self, in_s, in_b, width):
        super().__init__()
        self.proj_s = nn.Conv2d(in_s, width, 1, bias=False)
        self.proj_b = nn.Conv2d(in_b, width, 1, bias=False)

    def forward(self, f_s, f_b):
        return self.proj_s(f_s), self.proj_b(f_b), None


class RfeNet(nn.Module):
    """Encoder, per-stage mutual evolution and point refinement, fusion head."""

    def __init__(self, cfg: NetworkConfig = NetworkConfig()):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = ToyEncoder(cfg.encoder)

        ch = {}
        w = cfg.encoder.widths
        for i in range(1, 5):
            ch[i] = w[i - 1]
        ch[5] = w[4]
        width = cfg.sme.width
        self.stage_ids = [4, 3, 2, 1] if cfg.cascade else [4]

        stages, heads_s, heads_b, sars = {}, {}, {}, {}
        for i in self.stage_ids:
            if i == 4:
                in_s, in_b = ch[5], ch[1] + ch[5]
            else:
                in_s, in_b = width + ch[i + 1], width + ch[1]
            if cfg.use_sme:
                stages[str(i)] = MutualEvolutionStage(
                    in_s, in_b, cfg.sme,
                    enhance_semantic=cfg.enhance_semantic,
                    enhance_boundary=cfg.enhance_boundary,
                    detach_attention=cfg.detach_attention,
                )
            else:
                stages[str(i)] = _BranchReduce(in_s, in_b, width)
            heads_s[str(i)] = nn.Conv2d(width, cfg.n_classes, 1)
            heads_b[str(i)] = nn.Conv2d(width, 1, 1)
            if cfg.use_sar:
                sars[str(i)] = PointRefinement(width, cfg.sar)
        self.stages = nn.ModuleDict(stages)
        self.heads_s = nn.ModuleDict(heads_s)
        self.heads_b = nn.ModuleDict(heads_b)
        self.sars = nn.ModuleDict(sars)

        fused = width * len(self.stage_ids)
        self.final_head = nn.Sequential(
            nn.Conv2d(fused, width, 3, padding=1, bias=False),
            make_norm(cfg.encoder.norm, width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, cfg.n_classes, 1),
        )

    def build_inputs(self, msf):
        """Stage-4 branch inputs from the encoder pyramid."""
        f1 = msf[1]
        target = tuple(f1.shape[-2:])
        f5 = resize_to(msf[5], target)
        return f5, torch.cat([f1, f5], dim=-3)

    def forward(self, image, keep_cascade: bool = False) -> NetworkOutput:
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        msf = self.encoder(image)
        f1 = msf[1]
        target = tuple(f1.shape[-2:])

        f_in_s, f_in_b = self.build_inputs(msf)
        states = {}
        for i in self.stage_ids:
            if i != 4:
                prev = states[i + 1]
                carried = prev.f_refined if self.cfg.feed_refined else prev.f_s
                f_in_s = torch.cat([carried, resize_to(msf[i + 1], target)], dim=-3)
                f_in_b = torch.cat([prev.f_b, f1], dim=-3)

            f_s, f_b, attention = self.stages[str(i)](f_in_s, f_in_b)
            bnd_logits = self.heads_b[str(i)](f_b)
            if str(i) in self.sars:
                sel_logits = self.heads_s[str(i)](f_s)
                f_ref, uncertain, confident = self.sars[str(i)](f_s, sel_logits, bnd_logits)
            else:
                f_ref, uncertain, confident = f_s, None, None
            sem_logits = self.heads_s[str(i)](f_ref)
            states[i] = StageState(
                f_s=f_s, f_b=f_b, f_refined=f_ref, attention=attention,
                semantic_logits=sem_logits, boundary_logits=bnd_logits,
                uncertain=uncertain, confident=confident,
            )

        fused = torch.cat([states[i].f_refined for i in self.stage_ids], dim=-3)
        logits = self.final_head(fused)
        logits = F.interpolate(logits, size=image.shape[-2:], mode="bilinear",
                               align_corners=False)

        by_stage = sorted(states)  # finest first
        out = NetworkOutput(
            logits=logits.squeeze(0) if squeeze else logits,
            stage_semantic=[_maybe_squeeze(states[i].semantic_logits, squeeze)
                            for i in by_stage],
            stage_boundary=[_maybe_squeeze(states[i].boundary_logits, squeeze)
                            for i in by_stage],
        )
        if keep_cascade:
            out.cascade = CascadeState(stages=states)
        return out

    def attach_supervision(self, output: NetworkOutput, mask, boundary,
                           loss_cfg: LossConfig = LossConfig()) -> LossReport:
        return joint_loss(output.logits, output.stage_semantic,
                          output.stage_boundary, mask, boundary, loss_cfg)


def _maybe_squeeze(t, squeeze):
    return t.squeeze(0) if squeeze else t


def architecture_hash(model: nn.Module) -> str:
    """Fingerprint of parameter names and shapes (weights excluded)."""
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(f"{name}:{tuple(p.shape)};".encode())
    return h.hexdigest()


def checkpoint_hash(model: nn.Module) -> str:
    """Fingerprint of parameter names and exact values."""
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model: RfeNet, path, config_text: str = "", meta: dict | None = None):
    """Single-file container: weights, architecture hash, config echo."""
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    payload = {
        "format_version": FORMAT_VERSION,
        "arch_hash": architecture_hash(model),
        "network_config": json.dumps(asdict(model.cfg), sort_keys=True),
        "config_text": config_text,
        "meta": meta or {},
        "weights": buf.getvalue(),
    }
    torch.save(payload, path)


def load_checkpoint(path, model: RfeNet | None = None):
    """Restore weights into model (built from the stored config when None)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "arch_hash" not in payload:
        raise CheckpointError(f"{path} is not a recognized checkpoint")
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {payload.get('format_version')} != {FORMAT_VERSION}"
        )
    if model is None:
        raw = json.loads(payload["network_config"])
        raw["encoder"] = EncoderConfig(**{**raw["encoder"],
                                          "widths": tuple(raw["encoder"]["widths"])})
        raw["sme"] = SmeConfig(**{**raw["sme"],
                                  "branch_kernels": tuple(raw["sme"]["branch_kernels"])})
        raw["sar"] = SarConfig(**raw["sar"])
        model = RfeNet(NetworkConfig(**raw))
    if architecture_hash(model) != payload["arch_hash"]:
        raise CheckpointError(
            "checkpoint architecture does not match the configured network"
        )
    model.load_state_dict(torch.load(io.BytesIO(payload["weights"]), weights_only=True))
    return model, payload
