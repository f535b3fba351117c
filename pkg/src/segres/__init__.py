"""Residual-fused encoder-decoder semantic segmentation on plain numpy."""

__version__ = "0.1.0"

from .estimator import SegmentationNet
from .losses import LossConfig, balanced_ce_loss, ce_loss
from .metrics import ConfusionMatrix, iou, mean_iou
from .network import ArchConfig, Network, build_baseline, build_improved
from .synth import SynthConfig, generate_synthetic
from .tensor import Rng, finite_diff_grad, he_init, new_tensor
from .training import MetricsReport, TrainConfig, TrainHistory, evaluate, train

__all__ = [
    "ArchConfig",
    "ConfusionMatrix",
    "LossConfig",
    "MetricsReport",
    "Network",
    "Rng",
    "SegmentationNet",
    "SynthConfig",
    "TrainConfig",
    "TrainHistory",
    "balanced_ce_loss",
    "build_baseline",
    "build_improved",
    "ce_loss",
    "evaluate",
    "finite_diff_grad",
    "generate_synthetic",
    "he_init",
    "iou",
    "mean_iou",
    "new_tensor",
    "train",
]
