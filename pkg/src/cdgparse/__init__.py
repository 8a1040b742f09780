"""Class-distribution-guided segmentation toolkit.

From-scratch numpy stack: a reverse-mode autodiff tape, positional
class-distribution supervision labels, the guided feature module, losses
and metrics, and a seeded toy training/inference pipeline.
"""

from .autodiff import DimensionError, Graph, Node, NumericError, RunningStats, grad_check, resize_bilinear
from .cdg import CdgOutput, CdgParams, cdg_forward, guidance_memory, init_params
from .labels import (
    ClassDistribution,
    LabelMap,
    SwapTable,
    class_distributions,
    edge_label,
    hflip,
    one_hot,
    resize_nearest,
)
from .losses import LossWeights, cdg_loss, cross_entropy, total_loss, weighted_edge_ce
from .metrics import ConfusionAccumulator, MetricsReport, evaluate, report_from_confusion
from .pipeline import (
    ForwardResult,
    ToyNet,
    TrainConfig,
    forward,
    infer_multiscale_flip,
    init_toynet,
    poly_lr,
    run_forward,
    sgd_step,
    synth_dataset,
    train,
)

__all__ = [
    "ClassDistribution",
    "CdgOutput",
    "CdgParams",
    "ConfusionAccumulator",
    "DimensionError",
    "ForwardResult",
    "Graph",
    "LabelMap",
    "LossWeights",
    "MetricsReport",
    "Node",
    "NumericError",
    "RunningStats",
    "SwapTable",
    "ToyNet",
    "TrainConfig",
    "cdg_forward",
    "cdg_loss",
    "class_distributions",
    "cross_entropy",
    "edge_label",
    "evaluate",
    "forward",
    "grad_check",
    "guidance_memory",
    "hflip",
    "infer_multiscale_flip",
    "init_params",
    "init_toynet",
    "one_hot",
    "poly_lr",
    "report_from_confusion",
    "resize_bilinear",
    "resize_nearest",
    "run_forward",
    "sgd_step",
    "synth_dataset",
    "total_loss",
    "train",
    "weighted_edge_ce",
]
