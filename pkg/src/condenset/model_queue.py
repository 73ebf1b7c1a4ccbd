"""FIFO queue of embedder networks at mixed training progress.

The queue approximates a parameter distribution enriched along the training
axis: new randomly initialized entries are pushed periodically, the sampled
entry is trained a fixed number of SGD steps per condensation iteration, and
the oldest entry is evicted once the queue exceeds its size cap. Entries can
also be seeded from a pretrained pool with a jittered learning rate and an
optional class subset to diversify their optimization paths.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import convnet, tensor as T
from .data import LabeledDataset
from .errors import ConfigError, DataFormatError, ShapeError


@dataclass
class QueueEntry:
    params: convnet.ConvNetParams
    opt_state: T.SgdState
    entry_id: int
    train_iters: int = 0
    acc_estimate: float | None = None
    class_subset: frozenset | None = None


class ModelQueue:
    """Single-owner mutable FIFO of (network, optimizer, progress) entries."""

    def __init__(self, net_config: convnet.ConvNetConfig, n_max: int, k_steps: int,
                 lr: float = 0.01, momentum: float = 0.9, weight_decay: float = 5e-4,
                 train_batch: int = 64, acc_eval_cap: int | None = None):
        if n_max < 1 or k_steps < 1 or train_batch < 1:
            raise ConfigError("queue sizes and step counts must be positive")
        self.net_config = net_config
        self.n_max = n_max
        self.k_steps = k_steps
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.train_batch = train_batch
        self.acc_eval_cap = acc_eval_cap
        self.entries: list[QueueEntry] = []
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.entries)

    def _take_id(self) -> int:
        eid = self._next_id
        self._next_id += 1
        return eid

    def get(self, entry_id: int) -> QueueEntry:
        for entry in self.entries:
            if entry.entry_id == entry_id:
                return entry
        raise KeyError(f"no queue entry with id {entry_id}")

    def push_new(self, seed: int) -> QueueEntry:
        """Append a freshly initialized entry (train_iters = 0)."""
        entry = QueueEntry(
            params=convnet.init_params(self.net_config, seed),
            opt_state=T.SgdState(self.lr, self.momentum, self.weight_decay),
            entry_id=self._take_id(),
        )
        self.entries.append(entry)
        return entry

    def push_pretrained(self, pool: list[convnet.ConvNetParams], base_lr: float,
                        rng: np.random.Generator, subset_fraction: float = 1.0) -> QueueEntry:
        """Append a copy of a pooled pretrained model with a jittered lr.

        The new entry's lr is base_lr + U(-0.1, 0.1)*base_lr, and it is
        assigned a random class subset covering `subset_fraction` of classes.
        """
        if not pool:
            raise ConfigError("pretrained pool is empty")
        if not 0.0 < subset_fraction <= 1.0:
            raise ConfigError("subset_fraction must be in (0, 1]")
        src = pool[int(rng.integers(len(pool)))]
        lr = base_lr + float(rng.uniform(-0.1, 0.1)) * base_lr
        classes = self.net_config.num_classes
        take = max(1, int(round(subset_fraction * classes)))
        subset = frozenset(int(c) for c in rng.choice(classes, size=take, replace=False))
        entry = QueueEntry(
            params=src.copy(),
            opt_state=T.SgdState(lr, self.momentum, self.weight_decay),
            entry_id=self._take_id(),
            class_subset=subset,
        )
        self.entries.append(entry)
        return entry

    def pop_if_full(self) -> QueueEntry | None:
        """Evict the oldest entry iff the size cap is exceeded."""
        if len(self.entries) > self.n_max:
            return self.entries.pop(0)
        return None

    def sample(self, rng: np.random.Generator) -> int:
        """Uniformly choose an entry id; the queue is not modified."""
        if not self.entries:
            raise ShapeError("cannot sample from an empty queue")
        return self.entries[int(rng.integers(len(self.entries)))].entry_id

    def train_fetched(self, entry_id: int, train: LabeledDataset, heldout: LabeledDataset,
                      rng: np.random.Generator) -> float:
        """Train one entry k_steps on real batches; refresh its accuracy.

        Batches are restricted to the entry's class subset when one is set.
        Returns the mean training loss over the k steps.
        """
        entry = self.get(entry_id)
        if entry.class_subset is None:
            pool = np.arange(len(train))
        else:
            mask = np.isin(train.labels, sorted(entry.class_subset))
            pool = np.flatnonzero(mask)
        if len(pool) == 0:
            raise ShapeError("no training samples match the entry's class subset")
        losses = []
        for _ in range(self.k_steps):
            take = min(self.train_batch, len(pool))
            idx = rng.choice(pool, size=take, replace=False)
            losses.append(
                convnet.train_step(entry.params, entry.opt_state,
                                   train.images[idx], train.labels[idx])
            )
        entry.train_iters += self.k_steps
        entry.acc_estimate = estimate_accuracy(entry, heldout, cap=self.acc_eval_cap, rng=rng)
        return float(np.mean(losses))


def estimate_accuracy(entry: QueueEntry, heldout: LabeledDataset, cap: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Argmax accuracy of an entry on the held-out split (optionally capped)."""
    if len(heldout) == 0:
        raise ShapeError("empty held-out split")
    images, labels = heldout.images, heldout.labels
    if cap is not None and len(images) > cap:
        if rng is None:
            rng = np.random.default_rng(0)
        idx = rng.choice(len(images), size=cap, replace=False)
        images, labels = images[idx], labels[idx]
    return convnet.accuracy(entry.params, images, labels)


# ---------------------------------------------------------------------------
# snapshot persistence

_MANIFEST = "queue.json"


def save_queue(dirpath, queue: ModelQueue) -> None:
    os.makedirs(dirpath, exist_ok=True)
    manifest = {
        "format": "condenset/queue-v1",
        "n_max": queue.n_max,
        "k_steps": queue.k_steps,
        "lr": queue.lr,
        "momentum": queue.momentum,
        "weight_decay": queue.weight_decay,
        "train_batch": queue.train_batch,
        "next_id": queue._next_id,
        "entries": [],
    }
    for entry in queue.entries:
        fname = f"entry_{entry.entry_id:05d}.ckpt"
        convnet.save_params(os.path.join(dirpath, fname), entry.params)
        manifest["entries"].append(
            {
                "file": fname,
                "entry_id": entry.entry_id,
                "train_iters": entry.train_iters,
                "acc_estimate": entry.acc_estimate,
                "lr": entry.opt_state.lr,
                "class_subset": sorted(entry.class_subset) if entry.class_subset else None,
            }
        )
    with open(os.path.join(dirpath, _MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def load_queue(dirpath) -> ModelQueue:
    path = os.path.join(dirpath, _MANIFEST)
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read queue manifest {path}: {exc}") from exc
    if manifest.get("format") != "condenset/queue-v1":
        raise DataFormatError(f"unexpected queue manifest format in {path}")
    first = None
    entries = []
    for meta in manifest["entries"]:
        params = convnet.load_params(os.path.join(dirpath, meta["file"]))
        if first is None:
            first = params.config
        subset = meta["class_subset"]
        entries.append(
            QueueEntry(
                params=params,
                opt_state=T.SgdState(meta["lr"], manifest["momentum"],
                                     manifest["weight_decay"]),
                entry_id=meta["entry_id"],
                train_iters=meta["train_iters"],
                acc_estimate=meta["acc_estimate"],
                class_subset=frozenset(subset) if subset else None,
            )
        )
    if first is None:
        raise DataFormatError(f"queue snapshot {dirpath} has no entries")
    queue = ModelQueue(first, manifest["n_max"], manifest["k_steps"], manifest["lr"],
                       manifest["momentum"], manifest["weight_decay"],
                       manifest["train_batch"])
    queue.entries = entries
    queue._next_id = manifest["next_id"]
    return queue


def newest_trained_entry(queue: ModelQueue) -> QueueEntry:
    """The most recently pushed entry among those with maximal train_iters."""
    if not queue.entries:
        raise ShapeError("empty queue")
    best = max(queue.entries, key=lambda e: (e.train_iters, e.entry_id))
    return best
