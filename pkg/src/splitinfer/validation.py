"""Input validation helpers shared by the estimator-style APIs."""

from __future__ import annotations

import numpy as np

from .errors import EmptyInput, NonFiniteActivation, ShapeMismatch


def as_activation(x, *, name: str = "x") -> np.ndarray:
    """Coerce to a C-order float32 rank-3 tensor (C, H, W)."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != 3:
        raise ShapeMismatch(f"{name} must be rank 3 (C, H, W), got rank {arr.ndim}")
    return arr


def as_activation_batch(X, *, name: str = "X") -> np.ndarray:
    """Coerce a sequence of rank-3 tensors (or one rank-4 array) to (N, C, H, W)."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return np.ascontiguousarray(X, dtype=np.float32)
    items = list(X)
    if not items:
        raise EmptyInput(f"{name} is empty")
    tensors = [as_activation(item, name=f"{name}[{i}]") for i, item in enumerate(items)]
    first = tensors[0].shape
    for i, t in enumerate(tensors):
        if t.shape != first:
            raise ShapeMismatch(
                f"{name}[{i}] has shape {t.shape}, expected {first} like {name}[0]"
            )
    return np.stack(tensors)


def require_finite(arr: np.ndarray, *, name: str = "x") -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteActivation(f"{name} contains NaN or infinity")


def require_int_in(value, name: str, lo: int, hi: int) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise ValueError(f"{name} must be in [{lo}, {hi}], got {value}")
    return int(value)


def require_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value
