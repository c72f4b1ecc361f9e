"""Input validation helpers for array-facing entry points."""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError


def check_image_array(X, name: str = "X") -> np.ndarray:
    """Validate a batch of images: (n, 3, h, w) float values in [0, 1]."""
    X = np.asarray(X)
    if X.ndim != 4 or X.shape[1] != 3:
        raise ShapeError(f"{name} must have shape (n, 3, h, w); got {X.shape}")
    if X.shape[0] < 1:
        raise ShapeError(f"{name} must contain at least one image")
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float32)
    if not np.isfinite(X).all():
        raise DataError(f"{name} contains non-finite values")
    if X.min() < -1e-6 or X.max() > 1 + 1e-6:
        raise DataError(f"{name} values must lie in [0, 1]; got range [{X.min():.4g}, {X.max():.4g}]")
    return X


def check_label_array(y, X: np.ndarray, num_classes=None, ignore_label=None, name: str = "y") -> np.ndarray:
    """Validate labels against an image batch: (n, h, w) integer class ids."""
    y = np.asarray(y)
    expected = (X.shape[0],) + X.shape[2:]
    if y.shape != expected:
        raise ShapeError(f"{name} must have shape {expected} to match the images; got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.issubdtype(y.dtype, np.floating) and np.all(y == np.rint(y)):
            y = y.astype(np.int32)
        else:
            raise DataError(f"{name} must hold integer class ids; got dtype {y.dtype}")
    mask = np.ones(y.shape, dtype=bool) if ignore_label is None else y != ignore_label
    if (y[mask] < 0).any():
        raise DataError(f"{name} contains negative class ids")
    if num_classes is not None and (y[mask] >= num_classes).any():
        raise DataError(f"{name} contains class ids >= num_classes ({num_classes})")
    return y


def check_spatial_divisor(h: int, w: int, divisor: int, name: str = "input") -> None:
    if h % divisor or w % divisor:
        raise ShapeError(f"{name} spatial dims {h}x{w} must be divisible by {divisor}")
