"""Command-line entry: dataset generation, training, evaluation, plots.

Exit codes: 0 success, 2 invalid input or configuration, 3 checkpoint
incompatibility, 4 numerical failure during training or evaluation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import load_config
from .errors import CheckpointError, NumericalError, RfenetError
from .network import (RfeNet, apply_ablation, checkpoint_hash, load_checkpoint,
                      network_config_from)
from .synthdata import SceneSpec, generate_dataset, write_dataset
from .trainer import TrainConfig, evaluate, load_split, run_ablation, train
from .visualize import render_cascade

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_NUMERIC = 4


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfenet",
        description="Two-branch glass segmentation: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="flat key=value config file")
        p.add_argument("--set", dest="overrides", nargs="*", default=[],
                       metavar="KEY=VALUE", help="config overrides, last wins")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)

    p = sub.add_parser("train", help="train a model variant")
    common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="val")

    p = sub.add_parser("visualize", help="render attention and prediction maps")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)

    p = sub.add_parser("ablate", help="train and compare network variants")
    common(p)
    p.add_argument("--variants", default="full,no_sar,baseline",
                   help="comma-separated ablation names")
    return parser


def _echo_config(cfg, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.echo(out_dir / "effective_config.txt")


def _load_model(args, cfg) -> tuple:
    net_cfg = apply_ablation(network_config_from(cfg), cfg["train.ablation"])
    model = RfeNet(net_cfg)
    model, payload = load_checkpoint(args.checkpoint, model)
    return model, payload


def _cmd_gen_data(args, cfg) -> int:
    out_root = args.out or Path(cfg["data.root"])
    base = SceneSpec(
        canvas=(cfg["data.canvas"], cfg["data.canvas"]),
        n_objects=cfg["data.objects"],
        shape_family=cfg["data.families"].split(",")[0].strip(),
        transparency_alpha=cfg["data.alpha"],
        reflective_streaks=cfg["data.streaks"],
        rng_seed=cfg["data.seed"],
    )
    base.validate()
    families = tuple(f.strip() for f in cfg["data.families"].split(",") if f.strip())
    samples = generate_dataset(base, cfg["data.n"], cfg["data.seed"], families)
    manifest = write_dataset(samples, out_root, thickness=cfg["data.thickness"])
    _echo_config(cfg, Path(out_root))
    digest = hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode()).hexdigest()
    counts = {s: len(ids) for s, ids in manifest["splits"].items()}
    print(f"dataset root: {out_root}")
    print(f"samples per split: {counts}")
    print(f"manifest hash: {digest}")
    return EXIT_OK


def _cmd_train(args, cfg) -> int:
    out_dir = args.out or Path(cfg["train.out"])
    tcfg = TrainConfig.from_flat(cfg)
    result = train(tcfg, cfg["data.root"], out_dir,
                   net_cfg=network_config_from(cfg), config_text=cfg.render())
    _echo_config(cfg, Path(out_dir))
    print(f"trained {result.iterations} iterations in {result.seconds:.1f}s")
    print(f"loss: initial {result.initial_total:.6f} final {result.final_total:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"checkpoint hash: {checkpoint_hash(result.model)}")
    return EXIT_OK


def _cmd_eval(args, cfg) -> int:
    model, _ = _load_model(args, cfg)
    data = load_split(cfg["data.root"], args.split)
    sar = model.cfg.sar
    report = evaluate(model, data, config_echo={
        "k": sar.k, "m": sar.m,
        "output_stride": model.cfg.encoder.output_stride,
        "split": args.split,
    })
    out_dir = args.out or Path(cfg["train.out"]) / "eval"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir)
    report.to_json(out_dir / "metrics.json")
    report.csv_row(out_dir / "metrics.csv")
    print(report.to_json())
    return EXIT_OK


def _cmd_visualize(args, cfg) -> int:
    model, _ = _load_model(args, cfg)
    img = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float32) / 255.0
    image = torch.from_numpy(img.transpose(2, 0, 1))
    out_dir = args.out or Path(cfg["train.out"]) / "plots"
    out_dir = Path(out_dir)
    written = render_cascade(model, image, out_dir, stem=args.image.stem)
    _echo_config(cfg, out_dir)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_ablate(args, cfg) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    out_dir = args.out or Path(cfg["train.out"]) / "ablation"
    rows = run_ablation(TrainConfig.from_flat(cfg), cfg["data.root"], out_dir,
                        variants, net_cfg=network_config_from(cfg))
    _echo_config(cfg, Path(out_dir))
    cols = ("variant", "miou", "miou_fg_only", "acc", "mae", "mber", "f_beta")
    print(",".join(cols))
    for row in rows:
        print(",".join(str(row[c]) for c in cols))
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "visualize": _cmd_visualize,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return _COMMANDS[args.command](args, cfg)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RfenetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
