"""SGD training loop with a poly learning-rate schedule.

Deterministic by construction: model init and shuffling derive from the
configured seed, data loads in manifest order, and every op runs single
device in a fixed order. Two runs with the same seed, config, and data
produce byte-identical logs and checkpoints with equal value hashes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DataError, NumericalError
from .losses import LossConfig
from .metrics import ConfusionMatrix, ProbStats, compute_report
from .network import (ABLATIONS, NetworkConfig, RfeNet, apply_ablation,
                      checkpoint_hash, save_checkpoint)
from .synthdata import read_split


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.04
    power: float = 0.9
    weight_decay: float = 1e-4
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 8
    seed: int = 0
    ablation: str = "full"
    clip_norm: float = 10.0  # global-norm gradient clip, 0 disables
    lambda_s: float = 0.01
    lambda_b: float = 0.25

    def validate(self):
        if self.base_lr <= 0:
            raise ConfigError("train.lr must be > 0")
        if self.power <= 0:
            raise ConfigError("train.power must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"unknown ablation {self.ablation!r}, expected one of {ABLATIONS}")

    @classmethod
    def from_flat(cls, flat) -> "TrainConfig":
        return cls(
            base_lr=flat["train.lr"],
            power=flat["train.power"],
            weight_decay=flat["train.weight_decay"],
            momentum=flat["train.momentum"],
            epochs=flat["train.epochs"],
            batch_size=flat["train.batch_size"],
            seed=flat["train.seed"],
            ablation=flat["train.ablation"],
            clip_norm=flat["train.clip_norm"],
            lambda_s=flat["train.lambda_s"],
            lambda_b=flat["train.lambda_b"],
        )


def poly_lr(base_lr: float, step: int, total: int, power: float = 0.9) -> float:
    """base_lr * (1 - step/total)^power."""
    if not 0 <= step <= total:
        raise ConfigError(f"step {step} outside [0, {total}]")
    return base_lr * (1.0 - step / total) ** power


@dataclass
class LoadedSplit:
    """A dataset split held in memory as stacked tensors."""

    images: torch.Tensor  # N x 3 x H x W float32
    masks: torch.Tensor  # N x H x W long
    boundaries: torch.Tensor  # N x H x W float32
    ids: list

    def __len__(self):
        return self.images.shape[0]


def load_split(root, split: str) -> LoadedSplit:
    samples = read_split(root, split)
    if not samples:
        raise DataError(f"split {split!r} of {root} has no samples")
    return LoadedSplit(
        images=torch.stack([torch.from_numpy(s.image) for s in samples]),
        masks=torch.stack([torch.from_numpy(s.mask.astype(np.int64)) for s in samples]),
        boundaries=torch.stack(
            [torch.from_numpy(s.boundary.astype(np.float32)) for s in samples]),
        ids=[s.sample_id for s in samples],
    )


@dataclass
class TrainResult:
    model: RfeNet
    checkpoint_path: Path
    log_path: Path
    initial_total: float
    final_total: float
    iterations: int
    seconds: float = 0.0


def _log_columns(report) -> list:
    cols = ["iter", "total", "L_s_out"]
    cols += [f"L_s_{i + 1}" for i in range(len(report.semantic_stages))]
    cols += [f"L_b_{i + 1}" for i in range(len(report.boundary_stages))]
    cols.append("lr")
    return cols


def train(cfg: TrainConfig, dataset_root, out_dir, net_cfg: NetworkConfig = NetworkConfig(),
          config_text: str = "") -> TrainResult:
    """Train one model variant; writes a CSV log and a final checkpoint."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_split(dataset_root, "train")

    torch.manual_seed(cfg.seed)
    model = RfeNet(apply_ablation(net_cfg, cfg.ablation))
    model.train()
    opt = torch.optim.SGD(model.parameters(), lr=cfg.base_lr,
                          momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    loss_cfg = LossConfig(lambda_s=cfg.lambda_s, lambda_b=cfg.lambda_b)

    n = len(data)
    iters_per_epoch = math.ceil(n / cfg.batch_size)
    total_iters = cfg.epochs * iters_per_epoch
    shuffle_rng = np.random.default_rng(cfg.seed)

    log_path = out_dir / "train_log.csv"
    ckpt_path = out_dir / "checkpoint.pt"
    initial_total = final_total = float("nan")
    started = time.monotonic()
    step = 0
    with open(log_path, "w", newline="") as log:
        log.write(f"# base_lr={cfg.base_lr!r} weight_decay={cfg.weight_decay!r}"
                  f" momentum={cfg.momentum!r} power={cfg.power!r}"
                  f" seed={cfg.seed} ablation={cfg.ablation}"
                  f" batch_size={cfg.batch_size} epochs={cfg.epochs}\n")
        header_written = False
        for epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(n)
            for b in range(iters_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                lr = poly_lr(cfg.base_lr, step, total_iters, cfg.power)
                for group in opt.param_groups:
                    group["lr"] = lr

                out = model(data.images[idx])
                report = model.attach_supervision(
                    out, data.masks[idx], data.boundaries[idx], loss_cfg)
                if not torch.isfinite(report.total):
                    raise NumericalError(
                        "non-finite training loss",
                        batch_ids=[data.ids[int(i)] for i in idx],
                        iteration=step,
                    )
                opt.zero_grad()
                report.total.backward()
                if cfg.clip_norm > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
                opt.step()

                row = report.row()
                if not header_written:
                    log.write(",".join(_log_columns(report)) + "\n")
                    header_written = True
                values = [str(step)] + [repr(v) for v in row.values()] + [repr(lr)]
                log.write(",".join(values) + "\n")
                if step == 0:
                    initial_total = row["total"]
                final_total = row["total"]
                step += 1
            save_checkpoint(model, ckpt_path, config_text=config_text,
                            meta={"epoch": epoch + 1, "iterations": step,
                                  "ablation": cfg.ablation})
    return TrainResult(
        model=model, checkpoint_path=ckpt_path, log_path=log_path,
        initial_total=initial_total, final_total=final_total,
        iterations=step, seconds=time.monotonic() - started,
    )


def evaluate(model: RfeNet, data: LoadedSplit, config_echo: dict | None = None):
    """Metrics over a loaded split; deterministic in eval mode."""
    model.eval()
    n_classes = model.cfg.n_classes
    cm = ConfusionMatrix(n_classes)
    stats = ProbStats()
    with torch.no_grad():
        for i in range(len(data)):
            out = model(data.images[i])
            probs = torch.softmax(out.logits, dim=0)
            pred = probs.argmax(dim=0).numpy()
            gt = data.masks[i].numpy()
            cm.accumulate(pred, gt)
            fg_prob = probs[1:].sum(dim=0).numpy()
            stats.accumulate(fg_prob, (gt > 0).astype(np.float64))
    return compute_report(cm, stats, config_echo=config_echo or {})


def run_ablation(cfg: TrainConfig, dataset_root, out_dir, variants,
                 net_cfg: NetworkConfig = NetworkConfig()) -> list:
    """Train each variant under identical seed/data; one metrics row each."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    train_data = None
    for variant in variants:
        if variant not in ABLATIONS:
            raise ConfigError(
                f"unknown ablation {variant!r}, expected one of {ABLATIONS}")
        vcfg = TrainConfig(**{**cfg.__dict__, "ablation": variant})
        result = train(vcfg, dataset_root, out_dir / variant, net_cfg)
        if train_data is None:
            train_data = load_split(dataset_root, "train")
        report = evaluate(result.model, train_data,
                          config_echo={"ablation": variant})
        rows.append({
            "variant": variant,
            "miou": report.miou,
            "miou_fg_only": report.miou_fg_only,
            "acc": report.acc,
            "mae": report.mae,
            "mber": report.mber,
            "f_beta": report.f_beta,
            "checkpoint_hash": checkpoint_hash(result.model),
        })
    table_path = out_dir / "ablation.csv"
    with open(table_path, "w", newline="") as fh:
        cols = list(rows[0].keys()) if rows else ["variant"]
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")
    return rows
