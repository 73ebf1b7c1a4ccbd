"""Image-count augmentation and shared-randomness differentiable transforms.

`partition_expand` splits each image into l*l equal tiles and resizes every
tile back to full size, multiplying the number of embeddings extracted from a
batch by l^2 without adding learnable pixels. `dsa_augment` draws one random
transform per call (flip / scale / shift) and applies identical parameters to
the real and synthetic batches, so gradients through the synthetic branch see
exactly the geometry the real branch saw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError

DEFAULT_STRATEGIES = ("flip", "scale", "shift")


@dataclass(frozen=True)
class PartitionSpec:
    """Partition factor l; extents must divide evenly (callers pre-pad)."""

    factor: int = 2

    def __post_init__(self):
        if self.factor < 1:
            raise ShapeError(f"partition factor must be >= 1, got {self.factor}")


def partition_expand(batch: T.Tensor, spec: PartitionSpec) -> T.Tensor:
    """[B,C,H,W] -> [B*l^2,C,H,W]: tiles in row-major order per source image."""
    if batch.data.ndim != 4:
        raise ShapeError(f"partition_expand expects [B,C,H,W], got {batch.shape}")
    l = spec.factor
    if l == 1:
        return batch
    _, _, h, w = batch.shape
    if h % l or w % l:
        raise ShapeError(f"spatial extent {h}x{w} not divisible by partition factor {l}")
    th, tw = h // l, w // l
    tiles = []
    for i in range(l):
        for j in range(l):
            tile = T.crop2d(batch, i * th, j * tw, th, tw)
            tiles.append(T.bilinear_resize(tile, h, w))
    return T.interleave0(tiles)


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def hflip(batch: T.Tensor) -> T.Tensor:
    return T.flip_w(batch)


def _apply_scale(batch: T.Tensor, ratio: float) -> T.Tensor:
    _, _, h, w = batch.shape
    nh, nw = max(1, round(h * ratio)), max(1, round(w * ratio))
    out = T.bilinear_resize(batch, nh, nw)
    # center crop back down / zero-pad back up to the original extent
    if nh > h:
        out = T.crop2d(out, (nh - h) // 2, 0, h, nw)
    elif nh < h:
        top = (h - nh) // 2
        out = T.pad2d(out, top, h - nh - top, 0, 0)
    if nw > w:
        out = T.crop2d(out, 0, (nw - w) // 2, out.shape[2], w)
    elif nw < w:
        left = (w - nw) // 2
        out = T.pad2d(out, 0, 0, left, w - nw - left)
    return out


def _apply_shift(batch: T.Tensor, dy: int, dx: int) -> T.Tensor:
    _, _, h, w = batch.shape
    pad = max(abs(dy), abs(dx))
    if pad == 0:
        return batch
    out = T.pad2d(batch, pad, pad, pad, pad)
    return T.crop2d(out, pad - dy, pad - dx, h, w)


def sample_transform(rng, strategies=DEFAULT_STRATEGIES, hw: tuple[int, int] = (0, 0),
                     max_shift: float = 0.125, scale_range: tuple[float, float] = (0.8, 1.2)):
    """Draw one transform descriptor; consumed identically by both branches."""
    rng = _rng(rng)
    kind = strategies[int(rng.integers(len(strategies)))]
    if kind == "flip":
        return ("flip", bool(rng.random() < 0.5))
    if kind == "scale":
        return ("scale", float(rng.uniform(*scale_range)))
    if kind == "shift":
        h, w = hw
        dy = int(round(float(rng.uniform(-max_shift, max_shift)) * h))
        dx = int(round(float(rng.uniform(-max_shift, max_shift)) * w))
        return ("shift", (dy, dx))
    raise ShapeError(f"unknown augmentation strategy {kind!r}")


def apply_transform(batch: T.Tensor, transform) -> T.Tensor:
    kind, arg = transform
    if kind == "flip":
        return hflip(batch) if arg else batch
    if kind == "scale":
        return _apply_scale(batch, arg)
    if kind == "shift":
        return _apply_shift(batch, *arg)
    raise ShapeError(f"unknown transform {kind!r}")


def dsa_augment(real_batch: T.Tensor, syn_batch: T.Tensor, rng,
                strategies=DEFAULT_STRATEGIES):
    """Apply one shared randomly drawn transform to both batches."""
    if real_batch.shape[1:] != syn_batch.shape[1:]:
        raise ShapeError(
            f"real/synthetic batches must agree beyond axis 0: "
            f"{real_batch.shape} vs {syn_batch.shape}"
        )
    tf = sample_transform(_rng(rng), strategies, hw=real_batch.shape[2:])
    return apply_transform(real_batch, tf), apply_transform(syn_batch, tf)


def augment_array(images: np.ndarray, rng, strategies=DEFAULT_STRATEGIES) -> np.ndarray:
    """Graph-free single-batch augmentation (used when training on a set)."""
    batch = T.Tensor(images)
    tf = sample_transform(_rng(rng), strategies, hw=batch.shape[2:])
    return apply_transform(batch, tf).data
