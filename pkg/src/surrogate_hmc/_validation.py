"""Small input-checking helpers shared by the public functions."""

import numpy as np

from .exceptions import DimensionError


def as_vector(x, length=None, name="input"):
    """Return ``x`` as a 1-D float64 array, optionally checking its length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} must have length {length}, got {arr.shape[0]}")
    return arr


def as_matrix(x, n_cols=None, name="input"):
    """Return ``x`` as a 2-D float64 array (a 1-D input becomes one row)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise DimensionError(f"{name} must have {n_cols} columns, got {arr.shape[1]}")
    return arr


def check_finite(arr, name="input"):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr
