"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError

FLOAT = np.float32
DOUBLE = np.float64


def check_tensor(x, *, ndim=None, name="input", dtype=None, allow_empty=False) -> np.ndarray:
    """Return ``x`` as a floating ndarray after checking rank and extents.

    ``dtype=None`` keeps an existing floating dtype and promotes anything
    else to float32.
    """
    arr = np.asarray(getattr(x, "tensor", x))
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(FLOAT)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected rank {ndim}, got shape {arr.shape}")
    if not allow_empty and (arr.ndim == 0 or any(n < 1 for n in arr.shape)):
        raise ShapeError(f"{name}: all extents must be >= 1, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name="input") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")


def check_random_state(seed) -> np.random.Generator:
    """Turn ``seed`` into a ``np.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
