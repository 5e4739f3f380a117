"""Input validation helpers shared across modules."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array

__all__ = [
    "FormatError",
    "check_vector3",
    "check_positions",
    "check_positive_int",
    "check_scalar_in",
]


class FormatError(ValueError):
    """Malformed on-disk data. `offset` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def check_vector3(x, name="vector"):
    arr = np.array(x, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def check_positions(x):
    """Coerce query positions to a float array of shape (..., 3)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (3,):
        raise ValueError(f"positions must have a trailing axis of size 3, got {x.shape}")
    if x.ndim == 2:
        check_array(x, ensure_min_samples=0, dtype=np.float64)
    return x


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_scalar_in(value, name, low=None, high=None, include_low=True, include_high=True):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if np.isnan(value):
        raise ValueError(f"{name} must not be NaN")
    if low is not None and (value < low or (value == low and not include_low)):
        raise ValueError(f"{name}={value} is below the allowed range")
    if high is not None and (value > high or (value == high and not include_high)):
        raise ValueError(f"{name}={value} is above the allowed range")
    return value
