"""Error types and shared input validation helpers."""

import numpy as np


class ShapeError(ValueError):
    """Array shape violates an operation's contract."""


class IndexingError(ValueError):
    """Pooling indices do not match the tensor they are applied to."""


class LabelError(ValueError):
    """Label map contains a class id outside the valid range."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but too small or empty to operate on."""


class NumericError(ArithmeticError):
    """A numeric evaluation produced NaN or infinity."""


class StateError(RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class FormatError(ValueError):
    """Malformed or truncated image file."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or does not match the network."""


class GenerationError(RuntimeError):
    """Synthetic data generation could not satisfy its configuration."""


class PaletteError(ValueError):
    """Palette is missing an entry for a class id present in the labels."""


def require(cond: bool, exc_type, msg: str) -> None:
    if not cond:
        raise exc_type(msg)


def as_float_array(x, name: str = "x") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        raise ShapeError(f"{name} must have at least one dimension")
    return a


def check_nchw(x: np.ndarray, name: str = "x") -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-d (batch, channels, height, width), got shape {x.shape}")
    return x


def check_spatial_divisible(h: int, w: int, by: int = 8) -> None:
    if h % by != 0 or w % by != 0:
        raise ShapeError(f"spatial size {h}x{w} must be divisible by {by}")


def check_label_range(labels: np.ndarray, class_count: int, ignore_id: int) -> np.ndarray:
    """Validate that every label is a class id in [0, class_count) or the ignore id."""
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be integer, got dtype {labels.dtype}")
    bad = (labels != ignore_id) & ((labels < 0) | (labels >= class_count))
    if bad.any():
        offending = int(labels[bad].flat[0])
        raise LabelError(f"label {offending} outside [0, {class_count}) and not ignore id {ignore_id}")
    return labels


def check_image_batch(X, name: str = "X") -> np.ndarray:
    """Validate a batch of images as float64 (N, 3, H, W) with H, W divisible by 8."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ShapeError(f"{name} must be (n_samples, channels, height, width), got shape {X.shape}")
    check_spatial_divisible(X.shape[2], X.shape[3])
    if not np.isfinite(X).all():
        raise NumericError(f"{name} contains non-finite values")
    return X


def check_label_batch(y, X: np.ndarray, class_count: int, ignore_id: int, name: str = "y") -> np.ndarray:
    """Validate a batch of label maps as int64 (N, H, W) matching the image batch."""
    y = np.asarray(y)
    if np.issubdtype(y.dtype, np.floating):
        if not np.allclose(y, np.round(y)):
            raise LabelError(f"{name} must contain integer class ids")
        y = y.astype(np.int64)
    y = y.astype(np.int64, copy=False)
    if y.ndim != 3:
        raise ShapeError(f"{name} must be (n_samples, height, width), got shape {y.shape}")
    if y.shape[0] != X.shape[0] or y.shape[1:] != X.shape[2:]:
        raise ShapeError(f"{name} shape {y.shape} does not match images {X.shape}")
    return check_label_range(y, class_count, ignore_id)
