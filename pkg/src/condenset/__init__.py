"""Dataset condensation by improved distribution matching.

Synthesizes a small per-class image set whose embedding distribution, under a
queue of progressively trained ConvNets, matches a large real set; ships the
evaluation protocol, coreset baselines, class-consistency diagnostics, and a
continual-learning harness alongside.
"""

from .condense import CondenseConfig, CondenseResult, SyntheticSet, ce_reg_loss, condense, dm_loss
from .convnet import ConvNetConfig, ConvNetParams, init_params
from .data import LabeledDataset, load_cifar_binary, load_idx, make_toy
from .estimators import ForgettingCoreset, HerdingCoreset, IDMCondenser, RandomCoreset
from .evaluation import (
    CoresetConfig,
    EvalConfig,
    EvalReport,
    consistency_ratio,
    continual_harness,
    evaluate,
)
from .model_queue import ModelQueue, QueueEntry

__version__ = "0.1.0"

__all__ = [
    "CondenseConfig",
    "CondenseResult",
    "ConvNetConfig",
    "ConvNetParams",
    "CoresetConfig",
    "EvalConfig",
    "EvalReport",
    "ForgettingCoreset",
    "HerdingCoreset",
    "IDMCondenser",
    "LabeledDataset",
    "ModelQueue",
    "QueueEntry",
    "RandomCoreset",
    "SyntheticSet",
    "ce_reg_loss",
    "condense",
    "consistency_ratio",
    "continual_harness",
    "dm_loss",
    "evaluate",
    "init_params",
    "load_cifar_binary",
    "load_idx",
    "make_toy",
    "__version__",
]
