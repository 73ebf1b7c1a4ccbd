"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_images_labels(X, y) -> tuple[np.ndarray, np.ndarray, int]:
    """Validate an image array / label vector pair.

    Returns (float32 [N,C,H,W] images, int64 labels, class count). Labels must
    be nonnegative integers; the class count is max(y) + 1 and every class in
    [0, max(y)] must be populated so per-class budgets are well-defined.
    """
    X = np.ascontiguousarray(X, dtype=np.float32)
    if X.ndim != 4:
        raise ShapeError(f"X must be [N,C,H,W] images, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ShapeError("X contains non-finite pixels")
    y = np.ascontiguousarray(y)
    if y.ndim != 1 or len(y) != len(X):
        raise ShapeError(f"y must be a label per image: {y.shape} vs {len(X)} images")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.allclose(rounded, y):
            raise ShapeError("y must contain integer class indices")
        y = rounded
    y = y.astype(np.int64)
    if len(y) == 0:
        raise ShapeError("empty dataset")
    if y.min() < 0:
        raise ShapeError("labels must be nonnegative")
    num_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=num_classes)
    if (counts == 0).any():
        missing = np.flatnonzero(counts == 0).tolist()
        raise ShapeError(f"classes {missing} have no samples; labels must be contiguous")
    return X, y, num_classes
