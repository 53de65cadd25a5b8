"""Two-branch glass-like object segmentation with mutual feature evolution.

A semantic branch and a boundary branch evolve together through a cascade
of attention stages; uncertain pixels are then refined by cross-attention
over confident boundary points. Ships with a procedural dataset generator,
training and evaluation harnesses, and a CLI.
"""

from .config import Config, load_config
from .encoder import EncoderConfig, MultiScaleFeatures, ToyEncoder, resize_to_stage1
from .errors import (CheckpointError, ConfigError, DataError, NumericalError,
                     RfenetError, SelectionError, ShapeError)
from .losses import LossConfig, LossReport, cross_entropy, dice_loss, joint_loss
from .metrics import ConfusionMatrix, MetricsReport, ProbStats, compute_report
from .network import (NetworkConfig, NetworkOutput, RfeNet, apply_ablation,
                      architecture_hash, checkpoint_hash, load_checkpoint,
                      save_checkpoint)
from .sar import (CrossAttention, PointRefinement, SarConfig, pixel_entropy,
                  select_confident_boundary, select_uncertain)
from .sme import MutualAttention, MutualEvolutionStage, SmeConfig
from .synthdata import (GlassSample, SceneSpec, generate_dataset, generate_scene,
                        mask_to_boundary, read_split, write_dataset)
from .trainer import TrainConfig, evaluate, poly_lr, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "Config", "load_config",
    "EncoderConfig", "MultiScaleFeatures", "ToyEncoder", "resize_to_stage1",
    "RfenetError", "ConfigError", "ShapeError", "DataError", "SelectionError",
    "CheckpointError", "NumericalError",
    "LossConfig", "LossReport", "cross_entropy", "dice_loss", "joint_loss",
    "ConfusionMatrix", "MetricsReport", "ProbStats", "compute_report",
    "NetworkConfig", "NetworkOutput", "RfeNet", "apply_ablation",
    "architecture_hash", "checkpoint_hash", "load_checkpoint", "save_checkpoint",
    "CrossAttention", "PointRefinement", "SarConfig", "pixel_entropy",
    "select_confident_boundary", "select_uncertain",
    "MutualAttention", "MutualEvolutionStage", "SmeConfig",
    "GlassSample", "SceneSpec", "generate_dataset", "generate_scene",
    "mask_to_boundary", "read_split", "write_dataset",
    "TrainConfig", "evaluate", "poly_lr", "run_ablation", "train",
    "__version__",
]
