"""Array operators used by the signature recursions.

``cumsum`` and ``slicesum`` are the inclusive prefix sum and full sum along one
axis, ``shift(A, axis, m)`` moves entries ``m`` places forward along the axis
and fills the vacated front with zeros, and ``hadamard`` is the element-wise
product. ``exclusive_cumsum`` (shift by one after a cumulative sum) is the
workhorse of every recursion. Axes follow the usual zero-based numbering.
"""

from __future__ import annotations

import torch

from .errors import InvalidInputError


def _tensor(a):
    if isinstance(a, torch.Tensor):
        return a
    return torch.as_tensor(a, dtype=torch.float64)


def cumsum(a, axis: int = -1) -> torch.Tensor:
    return torch.cumsum(_tensor(a), dim=axis)


def slicesum(a, axis: int = -1) -> torch.Tensor:
    a = _tensor(a)
    if a.shape[axis] == 0:
        return a.sum(dim=axis)
    # last prefix sum: sequential order, so trailing zeros never perturb the result
    return torch.cumsum(a, dim=axis).select(axis, -1)


def shift(a, axis: int = -1, m: int = 1) -> torch.Tensor:
    a = _tensor(a)
    if m < 0:
        raise InvalidInputError("shift is only defined for non-negative offsets")
    axis = axis % a.dim()
    n = a.shape[axis]
    if m == 0:
        return a
    if m >= n:
        return torch.zeros_like(a)
    pad_shape = list(a.shape)
    pad_shape[axis] = m
    kept = a.narrow(axis, 0, n - m)
    return torch.cat([a.new_zeros(pad_shape), kept], dim=axis)


def exclusive_cumsum(a, axis: int = -1) -> torch.Tensor:
    return shift(cumsum(a, axis), axis, 1)


def hadamard(a, b) -> torch.Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return a * b
