"""Dataset ingestion and artifact persistence.

Parsers for the big-endian IDX image/label pair and the 3073-byte-record
CIFAR binary layout, two deterministic toy generators small enough for
CPU-scale experiments, per-channel normalization, and a dependency-free
binary PPM grid writer for inspecting synthetic sets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073


@dataclass
class LabeledDataset:
    """Float images [N,C,H,W] with integer labels and normalization stats.

    `mean`/`std` record the per-channel affine applied to the stored pixels;
    identity stats mean the pixels are still in their raw [0,1] range.
    """

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    mean: np.ndarray
    std: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ShapeError(f"images must be [N,C,H,W], got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ShapeError(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )
        if len(self.images) == 0:
            raise ShapeError("empty dataset")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ShapeError(f"labels outside [0, {self.class_count})")
        self.mean = np.asarray(self.mean, dtype=np.float32).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float32).reshape(-1)
        c = self.images.shape[1]
        if self.mean.shape != (c,) or self.std.shape != (c,):
            raise ShapeError("normalization stats must have one entry per channel")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise ShapeError("normalization stats must be finite")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    @property
    def hw(self) -> int:
        return self.images.shape[2]

    def class_indices(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.class_count)]

    def pixel_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Images of raw range [0,1] mapped through this dataset's stats."""
        lo = (0.0 - self.mean) / self.std
        hi = (1.0 - self.mean) / self.std
        return lo.astype(np.float32), hi.astype(np.float32)


def _identity_stats(channels: int) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(channels, dtype=np.float32), np.ones(channels, dtype=np.float32)


def normalize(ds: LabeledDataset) -> LabeledDataset:
    """Normalize per channel with stats computed from this dataset."""
    mean = ds.images.mean(axis=(0, 2, 3))
    std = ds.images.std(axis=(0, 2, 3))
    std = np.where(std < 1e-6, 1.0, std)
    return normalize_with(ds, mean, std)


def normalize_with(ds: LabeledDataset, mean, std) -> LabeledDataset:
    """Normalize with externally supplied stats (e.g. the train split's)."""
    if not np.allclose(ds.mean, 0.0) or not np.allclose(ds.std, 1.0):
        raise ShapeError("dataset is already normalized")
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    images = (ds.images - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(ds, images=images, mean=mean, std=std)


def denormalize_images(images: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    return images * std[None, :, None, None] + mean[None, :, None, None]


def stratified_split(ds: LabeledDataset, frac: float, seed: int
                     ) -> tuple[LabeledDataset, LabeledDataset]:
    """Split off `frac` of each class; returns (main, heldout)."""
    if not 0.0 < frac < 1.0:
        raise ConfigError(f"split fraction must be in (0,1), got {frac}")
    rng = np.random.default_rng(seed)
    held = []
    for idx in ds.class_indices():
        take = max(1, int(round(len(idx) * frac)))
        held.append(rng.choice(idx, size=take, replace=False))
    held = np.sort(np.concatenate(held))
    mask = np.zeros(len(ds), dtype=bool)
    mask[held] = True
    main = replace(ds, images=ds.images[~mask], labels=ds.labels[~mask])
    heldout = replace(ds, images=ds.images[mask], labels=ds.labels[mask], split="heldout")
    return main, heldout


def subset(ds: LabeledDataset, indices) -> LabeledDataset:
    indices = np.asarray(indices)
    return replace(ds, images=ds.images[indices], labels=ds.labels[indices])


# ---------------------------------------------------------------------------
# IDX format


def load_idx(image_path, label_path) -> LabeledDataset:
    """Parse a big-endian IDX image/label file pair; pixels scaled to [0,1]."""
    with open(image_path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise DataFormatError(f"{image_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{image_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        payload = fh.read()
    expected = count * rows * cols
    if len(payload) < expected:
        raise DataFormatError(f"{image_path}: truncated pixel payload")
    images = np.frombuffer(payload[:expected], dtype=np.uint8)
    images = images.reshape(count, 1, rows, cols).astype(np.float32) / 255.0

    with open(label_path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise DataFormatError(f"{label_path}: truncated IDX header")
        magic, lcount = struct.unpack(">II", head)
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"{label_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        lpayload = fh.read()
    if len(lpayload) < lcount:
        raise DataFormatError(f"{label_path}: truncated label payload")
    labels = np.frombuffer(lpayload[:lcount], dtype=np.uint8).astype(np.int64)

    if lcount != count:
        raise DataFormatError(f"count mismatch: {count} images vs {lcount} labels")
    mean, std = _identity_stats(1)
    return LabeledDataset(images, labels, int(labels.max()) + 1, mean, std)


# ---------------------------------------------------------------------------
# CIFAR binary format


def load_cifar_binary(paths) -> LabeledDataset:
    """Parse CIFAR-style 3073-byte records (label byte + RGB channel-major)."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    chunks = []
    for path in paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) == 0 or len(blob) % CIFAR_RECORD_BYTES != 0:
            raise DataFormatError(
                f"{path}: length {len(blob)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
            )
        chunks.append(np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES))
    records = np.concatenate(chunks, axis=0)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    mean, std = _identity_stats(3)
    return LabeledDataset(images, labels, int(labels.max()) + 1, mean, std)


# ---------------------------------------------------------------------------
# toy generators

# ten visually distinct RGB anchors for the blob classes
_PALETTE = np.array(
    [
        [0.95, 0.20, 0.20],
        [0.20, 0.85, 0.25],
        [0.25, 0.35, 0.95],
        [0.90, 0.80, 0.15],
        [0.80, 0.25, 0.85],
        [0.20, 0.85, 0.85],
        [0.95, 0.55, 0.15],
        [0.55, 0.30, 0.10],
        [0.45, 0.95, 0.55],
        [0.60, 0.60, 0.95],
    ],
    dtype=np.float64,
)

_DIGIT_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00010 00100 01000 11111",
    "11111 00010 00100 00010 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _blob_anchors(classes: int, hw: int) -> np.ndarray:
    """Two blob positions per class, assigned from a fixed 4x5 grid.

    Classes are bimodal on purpose: a small random subset tends to cover the
    two modes unevenly, which is what separates coreset selection from the
    full dataset on this toy.
    """
    grid = [((r + 0.5) * hw / 4.0, (k + 0.5) * hw / 5.0)
            for r in range(4) for k in range(5)]
    order = np.random.default_rng(1234).permutation(len(grid))
    return np.array([
        [grid[order[c]], grid[order[c + classes]]] for c in range(classes)
    ])


def _render_blob(canvas, cy, cx, radius, color, gain):
    hw = canvas.shape[1]
    yy, xx = np.mgrid[0:hw, 0:hw]
    bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius**2))
    canvas += gain * color[:, None, None] * bump[None]


def _make_blobs(rng, classes, per_class, hw):
    """Class-positioned, class-tinted blobs under heavy nuisance variation.

    The reliable class signal is the bright blob at the class anchor; colour
    is only weakly class-linked, and per-sample noise, distractor blobs, and
    illumination shifts give small random subsets a poor view of the class.
    """
    if classes > len(_PALETTE):
        raise ConfigError(f"blobs supports up to {len(_PALETTE)} classes")
    anchors = _blob_anchors(classes, hw)
    n = classes * per_class
    images = np.empty((n, 3, hw, hw), dtype=np.float64)
    labels = np.repeat(np.arange(classes), per_class)
    flat_anchors = anchors.reshape(-1, 2)
    bright = _PALETTE / _PALETTE.max(axis=1, keepdims=True)  # full-brightness tints
    margin = 0.10 * hw  # clutter prefers gaps between class anchors
    for i, c in enumerate(labels):
        img = 0.20 + rng.normal(0.0, 0.18, size=(3, hw, hw))
        mode = int(rng.random() < 0.5)
        cy, cx = anchors[c, mode] + rng.normal(0.0, hw * 0.04, size=2)
        radius = rng.uniform(0.08, 0.12) * hw
        color = bright[c] * rng.uniform(0.75, 1.05) + rng.normal(0.0, 0.18, size=3)
        _render_blob(img, cy, cx, radius, np.clip(color, 0.05, 1.2), gain=1.0)
        for _ in range(3):  # clutter blobs, dimmer and biased away from anchors
            dy, dx = rng.uniform(0, hw, size=2)
            for _retry in range(8):
                if np.min(np.hypot(flat_anchors[:, 0] - dy,
                                   flat_anchors[:, 1] - dx)) >= margin:
                    break
                dy, dx = rng.uniform(0, hw, size=2)
            dcolor = rng.uniform(0.15, 0.95, size=3)
            _render_blob(img, dy, dx, rng.uniform(0.06, 0.10) * hw, dcolor,
                         gain=rng.uniform(0.40, 0.70))
        images[i] = img
    return np.clip(images, 0.0, 1.0), labels, 3


def _glyph_bitmap(digit: int) -> np.ndarray:
    rows = _DIGIT_GLYPHS[digit].split()
    return np.array([[int(ch) for ch in row] for row in rows], dtype=np.float64)


def _resize_plane(plane: np.ndarray, oh: int, ow: int) -> np.ndarray:
    from .tensor import _resize_matrix

    rm = _resize_matrix(plane.shape[0], oh, np.float64)
    cm = _resize_matrix(plane.shape[1], ow, np.float64)
    return rm @ plane @ cm.T


def _make_digits16(rng, classes, per_class, hw):
    if classes > 10:
        raise ConfigError("digits16 supports up to 10 classes")
    n = classes * per_class
    images = np.empty((n, 1, hw, hw), dtype=np.float64)
    labels = np.repeat(np.arange(classes), per_class)
    for i, c in enumerate(labels):
        glyph = _glyph_bitmap(c)
        sh = int(round(7 * rng.uniform(1.4, 1.9)))
        sw = int(round(5 * rng.uniform(1.4, 1.9)))
        sh, sw = min(sh, hw), min(sw, hw)
        stamp = _resize_plane(glyph, sh, sw) * rng.uniform(0.65, 1.0)
        top = rng.integers(0, hw - sh + 1)
        left = rng.integers(0, hw - sw + 1)
        img = 0.12 + rng.normal(0.0, 0.11, size=(hw, hw))
        img[top : top + sh, left : left + sw] += stamp
        images[i, 0] = img
    return np.clip(images, 0.0, 1.0), labels, 1


_TOY_KINDS = {"blobs": _make_blobs, "digits16": _make_digits16}
_SPLIT_STREAM = {"train": 0, "test": 1, "val": 2}


def make_toy(classes: int = 10, per_class: int = 500, hw: int = 16, kind: str = "blobs",
             seed: int = 0, split: str = "train") -> LabeledDataset:
    """Deterministic toy dataset; distinct seed streams per split tag."""
    if kind not in _TOY_KINDS:
        raise ConfigError(f"unknown toy kind {kind!r}; choose from {sorted(_TOY_KINDS)}")
    if split not in _SPLIT_STREAM:
        raise ConfigError(f"unknown split {split!r}")
    if classes < 1 or per_class < 1 or hw < 4:
        raise ConfigError("toy spec extents too small")
    rng = np.random.default_rng([seed, _SPLIT_STREAM[split]])
    images, labels, channels = _TOY_KINDS[kind](rng, classes, per_class, hw)
    mean, std = _identity_stats(channels)
    return LabeledDataset(images, labels, classes, mean, std, split=split)


# ---------------------------------------------------------------------------
# PPM image grid


def export_image_grid(images: np.ndarray, path, per_row: int, mean=None, std=None,
                      pad: int = 1) -> None:
    """Write a binary PPM (P6) grid; one row per group of `per_row` images."""
    if len(images) == 0:
        raise ShapeError("cannot export an empty image grid")
    if mean is not None:
        images = denormalize_images(images, mean, std)
    images = np.clip(images, 0.0, 1.0)
    n, c, h, w = images.shape
    if c == 1:
        images = np.repeat(images, 3, axis=1)
    elif c != 3:
        raise ShapeError(f"grid export supports 1 or 3 channels, got {c}")
    rows = (n + per_row - 1) // per_row
    gh = rows * (h + pad) + pad
    gw = per_row * (w + pad) + pad
    grid = np.full((3, gh, gw), 0.1, dtype=np.float32)
    for i in range(n):
        r, cidx = divmod(i, per_row)
        top = pad + r * (h + pad)
        left = pad + cidx * (w + pad)
        grid[:, top : top + h, left : left + w] = images[i]
    pixels = (grid * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{gw} {gh}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read back a binary P6 file as uint8 [H,W,3] (for round-trip checks)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise DataFormatError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise DataFormatError(f"{path}: unsupported maxval {parts[2]!r}")
    pixels = np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise DataFormatError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3)
