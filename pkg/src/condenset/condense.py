"""The condensation loop: distribution matching with enriched model sampling.

Per iteration: sample an embedder from the model queue, match the mean
embeddings of each class's real batch against its partition-expanded and
jointly augmented synthetic images, add the accuracy-weighted cross-entropy
regularizer, take one SGD step on the synthetic pixels, train the sampled
embedder on real data, and periodically push/pop queue entries.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import convnet, tensor as T
from .augment import DEFAULT_STRATEGIES, PartitionSpec, dsa_augment, partition_expand
from .data import LabeledDataset, stratified_split
from .errors import ConfigError, DataFormatError, ShapeError
from .model_queue import ModelQueue, QueueEntry, estimate_accuracy


@dataclass
class CondenseConfig:
    """Every knob of the condensation run; defaults are CPU-scale."""

    ipc: int = 10
    iterations: int = 2000
    partition: int = 2
    reg_weight: float | None = None  # None: 0.5 for ipc <= 10, else 0.1

    lr_images: float = 0.2
    momentum_images: float = 0.5
    clamp_images: bool = True

    model_depth: int = 3
    model_width: int = 64
    lr_model: float = 0.01
    momentum_model: float = 0.9
    weight_decay_model: float = 5e-4

    queue_init: int = 10
    queue_max: int = 100
    queue_steps: int = 10
    push_interval: int = 30
    model_batch: int = 64
    freeze_queue: bool = False

    real_batch_per_class: int = 64
    heldout_frac: float = 0.1
    acc_eval_cap: int = 256

    augment: bool = True
    augment_strategies: tuple = DEFAULT_STRATEGIES
    partition_real: bool = False

    push_pretrained: bool = False
    pretrained_subset_fraction: float = 1.0

    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        positive = {
            "ipc": self.ipc, "partition": self.partition, "lr_images": self.lr_images,
            "lr_model": self.lr_model, "queue_init": self.queue_init,
            "queue_max": self.queue_max, "queue_steps": self.queue_steps,
            "push_interval": self.push_interval, "model_batch": self.model_batch,
            "real_batch_per_class": self.real_batch_per_class,
            "model_depth": self.model_depth, "model_width": self.model_width,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        if self.reg_weight is not None and self.reg_weight < 0:
            raise ConfigError("reg_weight must be nonnegative")
        if not 0.0 < self.heldout_frac < 1.0:
            raise ConfigError("heldout_frac must be in (0, 1)")

    @property
    def resolved_reg_weight(self) -> float:
        if self.reg_weight is not None:
            return self.reg_weight
        return 0.5 if self.ipc <= 10 else 0.1


class SyntheticSet:
    """The condensed set: learnable pixels grouped by class, fixed labels."""

    def __init__(self, images: T.Tensor, num_classes: int, ipc: int,
                 mean: np.ndarray, std: np.ndarray):
        if images.shape[0] != num_classes * ipc:
            raise ShapeError(
                f"expected {num_classes * ipc} images, got {images.shape[0]}"
            )
        if not np.all(np.isfinite(images.data)):
            raise ShapeError("synthetic pixels must be finite")
        self.images = images
        self.num_classes = num_classes
        self.ipc = ipc
        self.labels = np.repeat(np.arange(num_classes, dtype=np.int64), ipc)
        self.mean = np.asarray(mean, dtype=np.float32)
        self.std = np.asarray(std, dtype=np.float32)

    @classmethod
    def from_real(cls, dataset: LabeledDataset, ipc: int, seed: int) -> "SyntheticSet":
        """Initialize pixels by copying ipc distinct real images per class."""
        rng = np.random.default_rng(seed)
        picks = []
        for c, idx in enumerate(dataset.class_indices()):
            if len(idx) < ipc:
                raise ConfigError(
                    f"class {c} has only {len(idx)} images, need ipc={ipc}"
                )
            picks.append(rng.choice(idx, size=ipc, replace=False))
        images = dataset.images[np.concatenate(picks)].copy()
        return cls(T.Tensor(images, requires_grad=True), dataset.class_count, ipc,
                   dataset.mean, dataset.std)

    def class_block(self, c: int) -> T.Tensor:
        return T.narrow0(self.images, c * self.ipc, self.ipc)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.images.data.copy(), self.labels.copy()

    # -- persistence: one JSON manifest line, then float32 LE pixel payload --

    _FORMAT = "condenset/synthetic-v1"

    def save(self, path, extra: dict | None = None) -> None:
        header = {
            "format": self._FORMAT,
            "num_classes": self.num_classes,
            "ipc": self.ipc,
            "image_shape": list(self.images.shape[1:]),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }
        if extra:
            header.update(extra)
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode("utf-8") + b"\n")
            fh.write(self.images.data.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> tuple["SyntheticSet", dict]:
        with open(path, "rb") as fh:
            try:
                header = json.loads(fh.readline().decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise DataFormatError(f"bad synthetic-set header in {path}: {exc}") from exc
            if header.get("format") != cls._FORMAT:
                raise DataFormatError(f"unexpected file format {header.get('format')!r}")
            payload = fh.read()
        shape = (header["num_classes"] * header["ipc"], *header["image_shape"])
        count = int(np.prod(shape))
        if len(payload) != count * 4:
            raise DataFormatError(
                f"{path}: payload has {len(payload)} bytes, expected {count * 4}"
            )
        images = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        synthetic = cls(T.Tensor(images, requires_grad=True), header["num_classes"],
                        header["ipc"], np.asarray(header["mean"]), np.asarray(header["std"]))
        return synthetic, header


# ---------------------------------------------------------------------------
# losses


def _class_match(params: convnet.ConvNetParams, real_images: np.ndarray,
                 syn_images: T.Tensor, spec: PartitionSpec, aug_rng,
                 strategies=DEFAULT_STRATEGIES, augment: bool = True,
                 partition_real: bool = False):
    """Shared forward pass for one class: returns (dm loss, synthetic feats)."""
    if len(real_images) == 0 or syn_images.shape[0] == 0:
        raise ShapeError("empty batch in distribution matching")
    real = T.Tensor(real_images)
    syn = partition_expand(syn_images, spec)
    if partition_real:
        real = partition_expand(real, spec)
    if augment:
        real, syn = dsa_augment(real, syn, aug_rng, strategies)
    with T.frozen(params.parameters()):
        real_feats = convnet.embed(params, real)  # constant: no grads flow to it
        syn_feats = convnet.embed(params, syn)
        real_mean = T.Tensor(real_feats.data.mean(axis=0))
        diff = T.sub(real_mean, T.mean_rows(syn_feats))
        return T.sum_squares(diff), syn_feats


def dm_loss(params: convnet.ConvNetParams, real_images: np.ndarray, syn_images: T.Tensor,
            spec: PartitionSpec, aug_rng, strategies=DEFAULT_STRATEGIES,
            augment: bool = True, partition_real: bool = False) -> T.Tensor:
    """Squared L2 distance between one class's mean real and synthetic
    embeddings, differentiable w.r.t. the synthetic pixels only."""
    loss, _ = _class_match(params, real_images, syn_images, spec, aug_rng,
                           strategies, augment, partition_real)
    return loss


def ce_reg_loss(entry: QueueEntry, syn_images: T.Tensor, syn_labels) -> T.Tensor:
    """Cross-entropy on synthetic images, weighted by the entry's real-data
    accuracy; logits span all classes regardless of the batch's classes."""
    if entry.acc_estimate is None:
        raise ConfigError("queue entry has no accuracy estimate yet")
    with T.frozen(entry.params.parameters()):
        out = convnet.logits(entry.params, syn_images)
        ce = T.softmax_cross_entropy(out, syn_labels)
    return T.scale(ce, entry.acc_estimate)


# ---------------------------------------------------------------------------
# the optimization loop


@dataclass
class CondenseResult:
    synthetic: SyntheticSet
    queue: ModelQueue
    metrics: list = field(default_factory=list)
    config: CondenseConfig | None = None
    elapsed_sec: float = 0.0


def _sample_class_batch(rng, class_idx, per_class):
    take = min(per_class, len(class_idx))
    return rng.choice(class_idx, size=take, replace=False)


def overall_step(queue: ModelQueue, synthetic: SyntheticSet, train: LabeledDataset,
                 heldout: LabeledDataset, class_idx, config: CondenseConfig,
                 iter_index: int, image_state: T.SgdState, rng: np.random.Generator,
                 clamp_lo=None, clamp_hi=None, pretrained_pool=None) -> dict:
    """One condensation iteration: sample, match, update pixels, train, push/pop."""
    entry_id = queue.sample(rng)
    entry = queue.get(entry_id)
    reg = config.resolved_reg_weight
    if reg > 0 and entry.acc_estimate is None:
        entry.acc_estimate = estimate_accuracy(entry, heldout, cap=config.acc_eval_cap,
                                               rng=rng)

    # all classes share one forward pass: real batches are stacked class-major
    # and the synthetic set is already class-major, so per-class means are
    # contiguous row blocks of the feature matrices
    spec = PartitionSpec(config.partition)
    expansion = spec.factor**2
    batch_idx = [
        _sample_class_batch(rng, class_idx[c], config.real_batch_per_class)
        for c in range(synthetic.num_classes)
    ]
    real_counts = [len(idx) for idx in batch_idx]
    real_stack = train.images[np.concatenate(batch_idx)]

    dm_total: T.Tensor | None = None
    ce_value = None
    with T.frozen(entry.params.parameters()):
        real_t = T.Tensor(real_stack)
        syn_t = partition_expand(synthetic.images, spec)
        if config.partition_real:
            real_t = partition_expand(real_t, spec)
            real_counts = [n * expansion for n in real_counts]
        if config.augment:
            real_t, syn_t = dsa_augment(real_t, syn_t, rng, config.augment_strategies)
        real_feats = convnet.embed(entry.params, real_t).data  # constant branch
        syn_feats = convnet.embed(entry.params, syn_t)

        block = synthetic.ipc * expansion
        offset = 0
        for c in range(synthetic.num_classes):
            real_mean = T.Tensor(real_feats[offset : offset + real_counts[c]].mean(axis=0))
            offset += real_counts[c]
            syn_mean = T.mean_rows(T.narrow0(syn_feats, c * block, block))
            dm_c = T.sum_squares(T.sub(real_mean, syn_mean))
            dm_total = dm_c if dm_total is None else T.add(dm_total, dm_c)

        loss = dm_total
        if reg > 0:
            out = convnet.classify(entry.params, syn_feats)
            labels = np.repeat(np.arange(synthetic.num_classes, dtype=np.int64), block)
            ce = T.softmax_cross_entropy(out, labels)
            ce_value = ce.item()
            loss = T.add(loss, T.scale(ce, reg * entry.acc_estimate))

    T.zero_grads([synthetic.images])
    T.backward(loss)
    T.sgd_update([synthetic.images], [synthetic.images.grad], image_state)
    T.zero_grads([synthetic.images])
    if config.clamp_images and clamp_lo is not None:
        np.clip(synthetic.images.data, clamp_lo[None, :, None, None],
                clamp_hi[None, :, None, None], out=synthetic.images.data)

    train_loss = None
    if not config.freeze_queue:
        train_loss = queue.train_fetched(entry_id, train, heldout, rng)

    if iter_index > 0 and iter_index % config.push_interval == 0:
        if config.push_pretrained and pretrained_pool:
            queue.push_pretrained(pretrained_pool, config.lr_model, rng,
                                  config.pretrained_subset_fraction)
        else:
            queue.push_new(seed=int(rng.integers(2**31)))
        queue.pop_if_full()

    return {
        "iter": iter_index,
        "dm": float(dm_total.data),
        "ce": ce_value,
        "acc": entry.acc_estimate,
        "loss": float(loss.data),
        "model_loss": train_loss,
        "queue_size": len(queue),
        "entry_id": entry_id,
        "entry_train_iters": entry.train_iters,
    }


def condense(dataset: LabeledDataset, config: CondenseConfig,
             pretrained_pool=None, out_dir=None, on_metrics=None,
             clamp_bounds=None) -> CondenseResult:
    """Run the full condensation loop on a training split.

    Deterministic for a fixed config/seed in single-thread mode; emits a
    synthetic-set checkpoint every `checkpoint_every` iterations when an
    output directory is given. `clamp_bounds` overrides the per-channel pixel
    clamp range derived from the dataset's normalization stats.
    """
    started = time.time()
    if dataset.hw % (1 << config.model_depth) != 0:
        raise ConfigError(
            f"image extent {dataset.hw} incompatible with model depth {config.model_depth}"
        )
    rng = np.random.default_rng(config.seed)
    train, heldout = stratified_split(dataset, config.heldout_frac,
                                      seed=int(rng.integers(2**31)))
    class_idx = train.class_indices()

    net_config = convnet.ConvNetConfig(
        depth=config.model_depth, width=config.model_width,
        in_channels=dataset.channels, input_hw=dataset.hw,
        num_classes=dataset.class_count,
    )
    queue = ModelQueue(net_config, n_max=config.queue_max, k_steps=config.queue_steps,
                       lr=config.lr_model, momentum=config.momentum_model,
                       weight_decay=config.weight_decay_model,
                       train_batch=config.model_batch, acc_eval_cap=config.acc_eval_cap)
    for _ in range(config.queue_init):
        queue.push_new(seed=int(rng.integers(2**31)))

    synthetic = SyntheticSet.from_real(train, config.ipc, seed=int(rng.integers(2**31)))
    image_state = T.SgdState(config.lr_images, config.momentum_images)
    if clamp_bounds is None:
        clamp_lo, clamp_hi = dataset.pixel_bounds()
    else:
        clamp_lo, clamp_hi = (np.asarray(b, dtype=np.float32) for b in clamp_bounds)

    metrics = []
    for it in range(config.iterations):
        record = overall_step(queue, synthetic, train, heldout, class_idx, config, it,
                              image_state, rng, clamp_lo, clamp_hi, pretrained_pool)
        metrics.append(record)
        if on_metrics is not None:
            on_metrics(record)
        if (out_dir and config.checkpoint_every
                and (it + 1) % config.checkpoint_every == 0):
            synthetic.save(os.path.join(out_dir, f"checkpoint_{it + 1:06d}.dcs"),
                           extra={"iteration": it + 1, "config": asdict(config)})

    return CondenseResult(synthetic, queue, metrics, config, time.time() - started)
