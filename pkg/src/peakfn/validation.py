"""Input validation helpers shared by the library and the estimator facade."""

from __future__ import annotations

import numbers

import numpy as np


def as_complex_points(Z, dimension: int) -> np.ndarray:
    """Coerce ``Z`` to a ``(m, dimension)`` complex128 array of finite points.

    Accepts a single complex scalar (dimension 1), a length-``dimension``
    sequence (one point), a 1-d array of scalars (dimension 1), or a 2-d
    array of shape ``(m, dimension)``.
    """
    if isinstance(Z, numbers.Number):
        if dimension != 1:
            raise ValueError(f"scalar point given but dimension is {dimension}")
        arr = np.array([[Z]], dtype=np.complex128)
    else:
        arr = np.asarray(Z, dtype=np.complex128)
        if arr.ndim == 1:
            if dimension == 1:
                arr = arr.reshape(-1, 1)
            elif arr.shape[0] == dimension:
                arr = arr.reshape(1, -1)
            else:
                raise ValueError(
                    f"cannot interpret 1-d input of length {arr.shape[0]} "
                    f"as points in dimension {dimension}"
                )
        elif arr.ndim == 2:
            if arr.shape[1] != dimension:
                raise ValueError(
                    f"points have dimension {arr.shape[1]}, expected {dimension}"
                )
        else:
            raise ValueError("points must be a scalar, 1-d or 2-d array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr


def as_single_point(z, dimension: int) -> np.ndarray:
    """Coerce ``z`` to a single ``(dimension,)`` complex point."""
    arr = as_complex_points(z, dimension)
    if arr.shape[0] != 1:
        raise ValueError(f"expected a single point, got {arr.shape[0]}")
    return arr[0]


def as_parameter(t) -> complex:
    """Coerce ``t`` to a complex parameter value."""
    if not isinstance(t, numbers.Number):
        raise ValueError(f"parameter value must be a number, got {type(t)!r}")
    t = complex(t)
    if not (np.isfinite(t.real) and np.isfinite(t.imag)):
        raise ValueError("parameter value must be finite")
    return t


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value
