"""Facial-landmark toolkit: student network, fold-free patch ops, heatmap
distillation, and static complexity profiling, on numpy alone."""

from .config import ModelConfig, default_config
from .losses import LossReport, kd_loss, l2_regression_loss, nme
from .model import (HeatmapSet, LandmarkSet, backbone_forward, e2p_transform,
                    heatmap_generator_forward, predict, soft_argmax)
from .patches import (PatchSpec, fold_foldfree, fold_naive, permute6_via_5d,
                      unfold_foldfree, unfold_naive)
from .profiler import CostReport, count_macs, count_params, profile
from .tensor import ShapeError, Tensor
from .weights import WeightStore, load, random_init_store, save, validate_against_config

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "default_config",
    "LossReport", "kd_loss", "l2_regression_loss", "nme",
    "HeatmapSet", "LandmarkSet", "backbone_forward", "e2p_transform",
    "heatmap_generator_forward", "predict", "soft_argmax",
    "PatchSpec", "fold_foldfree", "fold_naive", "permute6_via_5d",
    "unfold_foldfree", "unfold_naive",
    "CostReport", "count_macs", "count_params", "profile",
    "ShapeError", "Tensor",
    "WeightStore", "load", "random_init_store", "save", "validate_against_config",
]
