"""Small input validation helpers used across modules."""

from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_consistent_length

from .exceptions import DomainError

PARAMETERS = ("atmf_vol", "atmf_skew")


def check_parameter(parameter: str) -> str:
    if parameter not in PARAMETERS:
        raise DomainError(f"unknown smile parameter {parameter!r}; expected one of {PARAMETERS}")
    return parameter


def check_positive(value, name: str, strict: bool = True) -> float:
    value = float(value)
    if not math.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise DomainError(f"{name} must be finite and {bound}, got {value!r}")
    return value


def check_side(side) -> int:
    if side in (1, -1):
        return int(side)
    if isinstance(side, str):
        s = side.strip().upper()
        if s in ("BUY", "B", "+1", "1"):
            return 1
        if s in ("SELL", "S", "-1"):
            return -1
    raise DomainError(f"side must be +1/-1 or BUY/SELL, got {side!r}")


def as_float_array(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def paired_arrays(x, y):
    """Validate two equally long finite 1-d samples."""
    try:
        check_consistent_length(x, y)
    except ValueError as exc:
        raise DomainError(str(exc)) from None
    return as_float_array(x, "x"), as_float_array(y, "y")
