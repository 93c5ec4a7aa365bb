"""Input validation helpers used by the estimator classes and engines."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ValidationError


def check_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite components")
    return arr


def check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] != b.shape[0]:
        raise ValidationError(
            f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}"
        )


def check_nonzero(v: np.ndarray, name: str = "vector") -> None:
    if not np.any(v):
        raise ValidationError(f"{name} is a zero vector; cosine similarity is undefined")


def check_positive(value, name: str) -> None:
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")


def check_unit_interval(value, name: str, *, open_left: bool = False, open_right: bool = False) -> None:
    lo_ok = value > 0 if open_left else value >= 0
    hi_ok = value < 1 if open_right else value <= 1
    if not (lo_ok and hi_ok):
        left = "(" if open_left else "["
        right = ")" if open_right else "]"
        raise ValidationError(f"{name} must lie in {left}0, 1{right}, got {value!r}")


def check_nonempty_text(texts: Sequence[str], name: str = "texts") -> None:
    if len(texts) == 0:
        raise ValidationError(f"{name} is empty")
    for i, t in enumerate(texts):
        if not isinstance(t, str) or not t.strip():
            raise ValidationError(f"{name}[{i}] is empty or not a string")
