"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import warnings

import numpy as np

from .exceptions import AccuracyError, AccuracyWarning, InvalidArgumentError

KH_LIMIT = 0.1


def check_points(points, dim=None, name="points"):
    """Return ``points`` as a finite float array of shape (n, dim)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise InvalidArgumentError(
            f"{name} must have {dim} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be positive and finite, got {value}")
    return value


def check_count(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise InvalidArgumentError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)


def check_dim(dim):
    if dim not in (2, 3):
        raise InvalidArgumentError(f"dim must be 2 or 3, got {dim}")
    return int(dim)


def check_kh(k, h, strict=False):
    """Warn (or raise in strict mode) when ``k*h`` breaks the small-cell expansion."""
    kh = float(k) * float(h)
    if kh >= KH_LIMIT:
        msg = f"k*h = {kh:.4g} >= {KH_LIMIT}; singular-cell expansion is inaccurate"
        if strict:
            raise AccuracyError(msg)
        warnings.warn(msg, AccuracyWarning, stacklevel=3)
    return kh
