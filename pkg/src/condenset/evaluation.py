"""Condensed-set quality measurement.

The train-from-scratch evaluation protocol, coreset selection baselines
(random / herding / forgetting), the feature-space class-consistency
diagnostic, and a greedy class-balanced continual-learning harness that
scores memory construction strategies.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import clone

from . import convnet, tensor as T
from .augment import DEFAULT_STRATEGIES, augment_array
from .data import LabeledDataset
from .errors import ConfigError, ShapeError


@dataclass
class EvalConfig:
    """Protocol for training fresh networks on a candidate set."""

    runs: int = 5
    epochs: int = 300
    batch: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    model_depth: int = 3
    model_width: int = 64
    augment: bool = True
    augment_strategies: tuple = DEFAULT_STRATEGIES
    seed: int = 0

    def __post_init__(self):
        if self.runs < 1 or self.epochs < 1 or self.batch < 1:
            raise ConfigError("runs, epochs, and batch must be positive")


@dataclass
class EvalReport:
    accuracies: list[float]
    mean: float
    std: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def _train_fresh_net(images, labels, num_classes, cfg: EvalConfig, seed) -> convnet.ConvNetParams:
    rng = np.random.default_rng(seed)
    net_cfg = convnet.ConvNetConfig(
        depth=cfg.model_depth, width=cfg.model_width, in_channels=images.shape[1],
        input_hw=images.shape[2], num_classes=num_classes,
    )
    params = convnet.init_params(net_cfg, seed=int(rng.integers(2**31)))
    state = T.SgdState(cfg.lr, cfg.momentum, cfg.weight_decay)
    n = len(images)
    batch = min(cfg.batch, n)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            x = images[idx]
            if cfg.augment:
                x = augment_array(x, rng, cfg.augment_strategies)
            convnet.train_step(params, state, x, labels[idx])
    return params


def evaluate(images: np.ndarray, labels: np.ndarray, test_images: np.ndarray,
             test_labels: np.ndarray, cfg: EvalConfig | None = None,
             num_classes: int | None = None) -> EvalReport:
    """Train `runs` fresh networks on (images, labels); report test accuracy."""
    cfg = cfg or EvalConfig()
    if len(images) == 0:
        raise ShapeError("cannot evaluate an empty candidate set")
    if len(test_images) == 0:
        raise ShapeError("empty test set")
    if num_classes is None:
        num_classes = int(max(labels.max(), test_labels.max())) + 1
    accs = []
    for r in range(cfg.runs):
        seed = np.random.default_rng([cfg.seed, r]).integers(2**31)
        params = _train_fresh_net(images, labels, num_classes, cfg, int(seed))
        accs.append(convnet.accuracy(params, test_images, test_labels))
    return EvalReport(
        accuracies=[float(a) for a in accs],
        mean=float(np.mean(accs)),
        std=float(np.std(accs)),
        config=asdict(cfg),
    )


# ---------------------------------------------------------------------------
# feature-space class consistency


def consistency_ratio(syn_images: np.ndarray, syn_labels: np.ndarray,
                      real_images: np.ndarray, real_labels: np.ndarray,
                      params: convnet.ConvNetParams, k: int) -> float:
    """Fraction of each synthetic sample's k nearest real neighbours (L2 in
    feature space) sharing its class, averaged over synthetic samples.

    Ties are broken toward the lowest real-image index.
    """
    if k < 1 or k > len(real_images):
        raise ConfigError(f"k={k} out of range [1, {len(real_images)}]")
    fs = convnet.embed_array(params, syn_images).astype(np.float64)
    fr = convnet.embed_array(params, real_images).astype(np.float64)
    # squared L2 distances; monotone in L2 so the neighbour sets agree
    d2 = (fs * fs).sum(1)[:, None] + (fr * fr).sum(1)[None, :] - 2.0 * fs @ fr.T
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]
    same = real_labels[neighbours] == np.asarray(syn_labels)[:, None]
    return float(same.mean())


# ---------------------------------------------------------------------------
# coreset baselines


@dataclass
class CoresetConfig:
    """Network/training knobs for the selector pretraining passes."""

    epochs: int = 10
    forgetting_epochs: int = 5
    batch: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    model_depth: int = 3
    model_width: int = 64
    seed: int = 0


def _check_class_budget(labels, num_classes, ipc):
    counts = np.bincount(labels, minlength=num_classes)
    short = np.flatnonzero(counts < ipc)
    if len(short):
        raise ConfigError(f"classes {short.tolist()} have fewer than ipc={ipc} samples")


def select_random(labels: np.ndarray, num_classes: int, ipc: int, seed: int) -> np.ndarray:
    """Uniform per-class sample of ipc indices."""
    _check_class_budget(labels, num_classes, ipc)
    rng = np.random.default_rng(seed)
    picks = [
        rng.choice(np.flatnonzero(labels == c), size=ipc, replace=False)
        for c in range(num_classes)
    ]
    return np.concatenate(picks)


def herding_select(features: np.ndarray, labels: np.ndarray, num_classes: int,
                   ipc: int) -> np.ndarray:
    """Greedy herding on given feature vectors.

    Per class, iteratively adds the sample that brings the running mean of the
    chosen features closest (L2) to the class feature mean; the first pick is
    therefore the sample nearest the class mean. Deterministic given features
    and data order (ties toward the lowest index).
    """
    _check_class_budget(labels, num_classes, ipc)
    features = features.astype(np.float64)
    picks = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        feats = features[idx]
        mu = feats.mean(axis=0)
        chosen: list[int] = []
        running = np.zeros_like(mu)
        available = np.ones(len(idx), dtype=bool)
        for step in range(1, ipc + 1):
            cand = (running[None, :] + feats) / step
            dist = ((cand - mu[None, :]) ** 2).sum(axis=1)
            dist[~available] = np.inf
            j = int(np.argmin(dist))
            available[j] = False
            chosen.append(j)
            running += feats[j]
        picks.append(idx[chosen])
    return np.concatenate(picks)


def select_herding(images: np.ndarray, labels: np.ndarray, num_classes: int, ipc: int,
                   cfg: CoresetConfig | None = None) -> np.ndarray:
    """Pretrain an embedder on the data, then herd in its feature space."""
    cfg = cfg or CoresetConfig()
    eval_like = EvalConfig(runs=1, epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
                           momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                           model_depth=cfg.model_depth, model_width=cfg.model_width,
                           augment=False, seed=cfg.seed)
    params = _train_fresh_net(images, labels, num_classes, eval_like, cfg.seed)
    features = convnet.embed_array(params, images)
    return herding_select(features, labels, num_classes, ipc)


def select_forgetting(images: np.ndarray, labels: np.ndarray, num_classes: int, ipc: int,
                      cfg: CoresetConfig | None = None) -> np.ndarray:
    """Pick the per-class samples misclassified most often across epochs.

    Trains for a small number of epochs (long schedules overweight mislabeled
    or pathological samples) and counts epoch-wise incorrect predictions; ties
    are broken by a seeded shuffle.
    """
    cfg = cfg or CoresetConfig()
    _check_class_budget(labels, num_classes, ipc)
    rng = np.random.default_rng(cfg.seed)
    net_cfg = convnet.ConvNetConfig(
        depth=cfg.model_depth, width=cfg.model_width, in_channels=images.shape[1],
        input_hw=images.shape[2], num_classes=num_classes,
    )
    params = convnet.init_params(net_cfg, seed=int(rng.integers(2**31)))
    state = T.SgdState(cfg.lr, cfg.momentum, cfg.weight_decay)
    n = len(images)
    batch = min(cfg.batch, n)
    incorrect = np.zeros(n, dtype=np.int64)
    for _ in range(cfg.forgetting_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            convnet.train_step(params, state, images[idx], labels[idx])
        pred = convnet.predict_logits(params, images).argmax(axis=1)
        incorrect += pred != labels
    tiebreak = rng.permutation(n)
    picks = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        ranked = idx[np.lexsort((tiebreak[idx], -incorrect[idx]))]
        picks.append(ranked[:ipc])
    return np.concatenate(picks)


# ---------------------------------------------------------------------------
# continual learning harness


def continual_stage_seed(seed: int, stage: int, stream: int) -> int:
    """Deterministic per-(seed, stage) seeds; stream 0 fits, stream 1 evaluates."""
    return int(np.random.default_rng([seed, stage, stream]).integers(2**31))


def continual_harness(strategy, train_ds: LabeledDataset, test_ds: LabeledDataset,
                      steps: int, mem_ipc: int, seeds, eval_cfg: EvalConfig | None = None
                      ) -> dict:
    """Greedy class-balanced memory replay scored by from-scratch retraining.

    Classes arrive in `steps` stages under a seeded order. At each stage the
    cloned strategy estimator condenses/selects `mem_ipc` images per new class
    into the memory; a fresh network trained on the memory alone is then
    evaluated on all seen classes. Curves are reported per seed.
    """
    eval_cfg = eval_cfg or EvalConfig(runs=1)
    classes = train_ds.class_count
    if steps < 1 or classes % steps != 0:
        raise ConfigError(f"steps={steps} must divide class count {classes}")
    group = classes // steps

    curves = []
    orders = []
    for seed in seeds:
        order = np.random.default_rng(seed).permutation(classes)
        orders.append(order.tolist())
        mem_images: list[np.ndarray] = []
        mem_labels: list[np.ndarray] = []
        stage_accs = []
        for stage in range(steps):
            stage_classes = order[stage * group : (stage + 1) * group]
            remap = {int(c): i for i, c in enumerate(stage_classes)}
            mask = np.isin(train_ds.labels, stage_classes)
            stage_x = train_ds.images[mask]
            stage_y = np.array([remap[int(c)] for c in train_ds.labels[mask]])

            est = clone(strategy)
            est.set_params(ipc=mem_ipc, seed=continual_stage_seed(seed, stage, 0))
            est.fit(stage_x, stage_y)
            mem_images.append(est.images_)
            mem_labels.append(stage_classes[est.labels_])

            seen = np.sort(order[: (stage + 1) * group])
            seen_remap = {int(c): i for i, c in enumerate(seen)}
            mx = np.concatenate(mem_images)
            my = np.array([seen_remap[int(c)] for c in np.concatenate(mem_labels)])
            tmask = np.isin(test_ds.labels, seen)
            tx = test_ds.images[tmask]
            ty = np.array([seen_remap[int(c)] for c in test_ds.labels[tmask]])

            stage_eval = EvalConfig(**{**asdict(eval_cfg), "runs": 1,
                                       "seed": continual_stage_seed(seed, stage, 1)})
            report = evaluate(mx, my, tx, ty, stage_eval, num_classes=len(seen))
            stage_accs.append(report.mean)
        curves.append(stage_accs)

    curves_arr = np.asarray(curves, dtype=np.float64)
    return {
        "curves": curves_arr.tolist(),
        "mean_curve": curves_arr.mean(axis=0).tolist(),
        "std_curve": curves_arr.std(axis=0).tolist(),
        "class_orders": orders,
        "steps": steps,
        "mem_ipc": mem_ipc,
        "seeds": list(seeds),
    }
