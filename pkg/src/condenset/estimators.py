"""Scikit-learn style estimators wrapping condensation and coreset selection.

Each estimator takes `fit(X, y)` with X as [N,C,H,W] images and contiguous
integer labels, and exposes the reduced set as `images_` / `labels_`.
`fit_resample(X, y)` returns the pair directly. Hyperparameters are plain
constructor keywords, so `get_params` / `set_params` / `clone` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .condense import CondenseConfig, condense
from .data import LabeledDataset
from .errors import ConfigError
from .evaluation import CoresetConfig, select_forgetting, select_herding, select_random
from .validation import check_images_labels


class _ResampleMixin:
    def fit_resample(self, X, y):
        self.fit(X, y)
        return self.images_, self.labels_


class IDMCondenser(BaseEstimator, _ResampleMixin):
    """Distribution-matching dataset condenser.

    Learns `ipc` synthetic images per class whose embedding distribution,
    under a queue of progressively trained ConvNets, matches the real data;
    optionally partition-expanded features and an accuracy-weighted
    cross-entropy regularizer sharpen class alignment.

    Parameters mirror `CondenseConfig`; `pixel_bounds` selects the clamp
    range for the learned pixels: "unit" for [0,1] inputs, "data" to use the
    observed per-channel range, or None to disable clamping.
    """

    def __init__(self, ipc=10, iterations=2000, partition=2, reg_weight=None,
                 lr_images=0.2, momentum_images=0.5, pixel_bounds="unit",
                 model_depth=3, model_width=64, lr_model=0.01, momentum_model=0.9,
                 weight_decay_model=5e-4, queue_init=10, queue_max=100, queue_steps=10,
                 push_interval=30, model_batch=64, freeze_queue=False,
                 real_batch_per_class=64, heldout_frac=0.1, acc_eval_cap=256,
                 augment=True, partition_real=False, seed=0):
        self.ipc = ipc
        self.iterations = iterations
        self.partition = partition
        self.reg_weight = reg_weight
        self.lr_images = lr_images
        self.momentum_images = momentum_images
        self.pixel_bounds = pixel_bounds
        self.model_depth = model_depth
        self.model_width = model_width
        self.lr_model = lr_model
        self.momentum_model = momentum_model
        self.weight_decay_model = weight_decay_model
        self.queue_init = queue_init
        self.queue_max = queue_max
        self.queue_steps = queue_steps
        self.push_interval = push_interval
        self.model_batch = model_batch
        self.freeze_queue = freeze_queue
        self.real_batch_per_class = real_batch_per_class
        self.heldout_frac = heldout_frac
        self.acc_eval_cap = acc_eval_cap
        self.augment = augment
        self.partition_real = partition_real
        self.seed = seed

    def _config(self) -> CondenseConfig:
        return CondenseConfig(
            ipc=self.ipc, iterations=self.iterations, partition=self.partition,
            reg_weight=self.reg_weight, lr_images=self.lr_images,
            momentum_images=self.momentum_images,
            clamp_images=self.pixel_bounds is not None,
            model_depth=self.model_depth, model_width=self.model_width,
            lr_model=self.lr_model, momentum_model=self.momentum_model,
            weight_decay_model=self.weight_decay_model, queue_init=self.queue_init,
            queue_max=self.queue_max, queue_steps=self.queue_steps,
            push_interval=self.push_interval, model_batch=self.model_batch,
            freeze_queue=self.freeze_queue,
            real_batch_per_class=self.real_batch_per_class,
            heldout_frac=self.heldout_frac, acc_eval_cap=self.acc_eval_cap,
            augment=self.augment, partition_real=self.partition_real, seed=self.seed,
        )

    def _clamp_bounds(self, X, channels):
        if self.pixel_bounds is None:
            return None
        if self.pixel_bounds == "unit":
            return (np.zeros(channels, np.float32), np.ones(channels, np.float32))
        if self.pixel_bounds == "data":
            return (X.min(axis=(0, 2, 3)), X.max(axis=(0, 2, 3)))
        try:
            lo, hi = self.pixel_bounds
            return (np.full(channels, lo, np.float32), np.full(channels, hi, np.float32))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad pixel_bounds {self.pixel_bounds!r}") from exc

    def fit(self, X, y):
        X, y, num_classes = check_images_labels(X, y)
        ds = LabeledDataset(X, y, num_classes, np.zeros(X.shape[1], np.float32),
                            np.ones(X.shape[1], np.float32))
        result = condense(ds, self._config(),
                          clamp_bounds=self._clamp_bounds(X, X.shape[1]))
        self.images_, self.labels_ = result.synthetic.to_arrays()
        self.queue_ = result.queue
        self.metrics_ = result.metrics
        self.result_ = result
        self.classes_ = np.arange(num_classes)
        return self


class _SelectorBase(BaseEstimator, _ResampleMixin):
    def fit(self, X, y):
        X, y, num_classes = check_images_labels(X, y)
        self.indices_ = self._select(X, y, num_classes)
        self.images_ = X[self.indices_].copy()
        self.labels_ = y[self.indices_].copy()
        self.classes_ = np.arange(num_classes)
        return self


class RandomCoreset(_SelectorBase):
    """Uniform per-class sample of ipc real images."""

    def __init__(self, ipc=10, seed=0):
        self.ipc = ipc
        self.seed = seed

    def _select(self, X, y, num_classes):
        return select_random(y, num_classes, self.ipc, self.seed)


class HerdingCoreset(_SelectorBase):
    """Greedy herding toward class feature means of a pretrained embedder."""

    def __init__(self, ipc=10, epochs=10, batch=64, lr=0.01, momentum=0.9,
                 weight_decay=5e-4, model_depth=3, model_width=64, seed=0):
        self.ipc = ipc
        self.epochs = epochs
        self.batch = batch
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.model_depth = model_depth
        self.model_width = model_width
        self.seed = seed

    def _cfg(self):
        return CoresetConfig(epochs=self.epochs, batch=self.batch, lr=self.lr,
                             momentum=self.momentum, weight_decay=self.weight_decay,
                             model_depth=self.model_depth, model_width=self.model_width,
                             seed=self.seed)

    def _select(self, X, y, num_classes):
        return select_herding(X, y, num_classes, self.ipc, self._cfg())


class ForgettingCoreset(_SelectorBase):
    """Per-class samples misclassified most often across training epochs."""

    def __init__(self, ipc=10, epochs=5, batch=64, lr=0.01, momentum=0.9,
                 weight_decay=5e-4, model_depth=3, model_width=64, seed=0):
        self.ipc = ipc
        self.epochs = epochs
        self.batch = batch
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.model_depth = model_depth
        self.model_width = model_width
        self.seed = seed

    def _select(self, X, y, num_classes):
        cfg = CoresetConfig(forgetting_epochs=self.epochs, batch=self.batch, lr=self.lr,
                            momentum=self.momentum, weight_decay=self.weight_decay,
                            model_depth=self.model_depth, model_width=self.model_width,
                            seed=self.seed)
        return select_forgetting(X, y, num_classes, self.ipc, cfg)
