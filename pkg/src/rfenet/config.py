"""Flat key=value configuration with a closed key registry.

Config files are plain text, one `key = value` per line, `#` comments.
Unknown keys are rejected with the full list of valid ones so typos die
loudly. `--set key=value` overrides apply last-wins. Every key is
documented in docs/config.md.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class Key:
    kind: type
    default: object
    help: str


REGISTRY = {
    "data.root": Key(str, "data/synthglass", "dataset directory"),
    "data.n": Key(int, 200, "number of generated samples"),
    "data.seed": Key(int, 0, "base RNG seed for generation"),
    "data.canvas": Key(int, 64, "square canvas size, multiple of 32"),
    "data.objects": Key(int, 2, "glass objects per scene"),
    "data.families": Key(str, "rect,ellipse,polygon", "shape families to sample"),
    "data.alpha": Key(float, 0.55, "glass transparency blend factor in [0,1]"),
    "data.streaks": Key(int, 2, "max reflective streaks per scene"),
    "data.thickness": Key(int, 8, "boundary ground-truth band thickness"),
    "model.n_classes": Key(int, 3, "semantic classes incl. background"),
    "model.output_stride": Key(int, 16, "encoder output stride, 8 or 16"),
    "model.norm": Key(str, "group", "normalization: group or batch"),
    "model.context_block": Key(bool, True, "dilated context block on stage 5"),
    "model.sme_width": Key(int, 32, "working channel width of the cascade"),
    "model.sme_blocks": Key(int, 1, "mutual blocks per stage"),
    "model.heads": Key(int, 4, "cross-attention head count"),
    "model.k": Key(int, -1, "uncertain points per stage; -1 auto, 0 disables"),
    "model.m": Key(int, -1, "boundary points per stage; -1 auto, 0 disables"),
    "model.cascade": Key(bool, True, "four-stage cascade vs single stage"),
    "model.feed_refined": Key(bool, True, "next stage consumes refined semantic feature"),
    "train.lr": Key(float, 0.04, "initial learning rate"),
    "train.power": Key(float, 0.9, "poly schedule exponent"),
    "train.weight_decay": Key(float, 1e-4, "SGD weight decay"),
    "train.momentum": Key(float, 0.9, "SGD momentum"),
    "train.epochs": Key(int, 40, "training epochs"),
    "train.batch_size": Key(int, 8, "samples per iteration"),
    "train.seed": Key(int, 0, "training RNG seed"),
    "train.ablation": Key(str, "full", "network variant to train"),
    "train.clip_norm": Key(float, 10.0, "global gradient-norm clip, 0 disables"),
    "train.lambda_s": Key(float, 0.01, "stage semantic loss weight"),
    "train.lambda_b": Key(float, 0.25, "stage boundary loss weight"),
    "train.out": Key(str, "runs/default", "output directory for logs and checkpoints"),
}


def _parse_value(key: str, raw):
    spec = REGISTRY[key]
    if isinstance(raw, str):
        raw = raw.strip()
        if spec.kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        try:
            return spec.kind(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    return spec.kind(raw)


class Config:
    """Validated flat configuration; starts from registry defaults."""

    def __init__(self, values: dict | None = None):
        self._values = {k: spec.default for k, spec in REGISTRY.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value):
        if key not in REGISTRY:
            valid = ", ".join(sorted(REGISTRY))
            raise ConfigError(f"unknown config key {key!r}; valid keys: {valid}")
        self._values[key] = _parse_value(key, value)

    def get(self, key: str):
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def __getitem__(self, key):
        return self.get(key)

    def to_dict(self) -> dict:
        return dict(self._values)

    def render(self) -> str:
        lines = [f"{k} = {self._values[k]}" for k in sorted(self._values)]
        return "\n".join(lines) + "\n"

    def echo(self, path):
        Path(path).write_text(self.render())


def load_config(path=None, overrides=()) -> Config:
    """Config file (optional) plus key=value override strings, last wins."""
    cfg = Config()
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, value = line.split("=", 1)
            cfg.set(key.strip(), value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg
