"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np

from .scene import Instance


def check_instances(X, horizon: int | None = None, min_history: int = 1) -> list[Instance]:
    """Return ``X`` as a list of :class:`Instance`, validating shapes on the way."""
    if isinstance(X, Instance):
        X = [X]
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of Instance objects, got {type(X).__name__}") from None
    if not items:
        raise ValueError("no instances given")
    for i, inst in enumerate(items):
        if not isinstance(inst, Instance):
            raise TypeError(f"item {i} is {type(inst).__name__}, not Instance")
        if inst.k < min_history:
            raise ValueError(f"instance {inst.id or i} has {inst.k} history states, need {min_history}")
        if horizon is not None and inst.horizon != horizon:
            raise ValueError(f"instance {inst.id or i} has horizon {inst.horizon}, expected {horizon}")
    return items


def check_positions(arr, name: str = "positions") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-1] != 2:
        raise ValueError(f"{name} must end in a coordinate axis of size 2, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contain non-finite values")
    return arr
