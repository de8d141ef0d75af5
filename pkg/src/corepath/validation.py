"""Input validation helpers shared by the trainable estimators."""

from __future__ import annotations

import numpy as np


def check_array(X, *, name: str = "X", dtype=np.float64, ndim: int = 2) -> np.ndarray:
    """Coerce to a contiguous numeric array and reject NaN/inf."""
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return np.ascontiguousarray(arr)


def check_consistent_length(*arrays) -> int:
    lengths = {len(a) for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent lengths: {sorted(lengths)}")
    return lengths.pop() if lengths else 0


def check_sample_weight(sample_weight, n: int) -> np.ndarray:
    """Validate weights and normalize them to mean 1.

    Normalizing keeps regularized tree fits invariant under uniform weight
    rescaling (doubling every weight must not change the model).
    """
    if sample_weight is None:
        return np.ones(n, dtype=np.float64)
    w = np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"sample_weight shape {w.shape} does not match n={n}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample_weight must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("sample_weight sums to zero")
    return w * (n / total)
