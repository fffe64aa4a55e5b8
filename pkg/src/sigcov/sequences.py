"""Sequences, their time/lag augmentation and batching.

A sequence ``x = (t_i, x_i)`` is read as the piecewise-linear path through its
observations. Everything downstream only sees increments of that path, so
repeating an observation (or padding with the last one) is a no-op for every
signature covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence as SeqType

import numpy as np
import torch

from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class Sequence:
    """Timestamped observations ``values[i]`` at ``times[i]``."""

    times: np.ndarray
    values: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.ndim != 2:
            raise InvalidInputError("times must be 1-d and values 2-d")
        if len(times) != len(values):
            raise InvalidInputError(
                f"len(times)={len(times)} does not match len(values)={len(values)}")
        if len(times) < 1:
            raise InvalidInputError("a sequence needs at least one observation")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise InvalidInputError("non-finite entries in sequence")
        if np.any(np.diff(times) <= 0):
            raise InvalidInputError("timestamps must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_values(cls, values, label=None) -> "Sequence":
        values = np.asarray(values, dtype=np.float64)
        return cls(np.arange(len(values), dtype=np.float64), values, label)


@dataclass(frozen=True, eq=False)
class AugmentedSequence:
    """State vectors ``(tau * t, x(t), x(t - s_1), ..., x(t - s_p))``."""

    values: np.ndarray
    source: Optional[Sequence] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or len(values) < 1:
            raise InvalidInputError("augmented values must be a non-empty 2-d array")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class SequenceBatch:
    """Sequences padded to a common length by repeating their last state."""

    values: np.ndarray  # (n, l_X, D)
    lengths: np.ndarray  # (n,) effective lengths
    ids: tuple = field(default=())

    def __len__(self):
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.length)[None, :] < self.lengths[:, None]


def interpolate_lagged(times: torch.Tensor, values: torch.Tensor, lengths: torch.Tensor,
                       lags: torch.Tensor) -> torch.Tensor:
    """Evaluate the piecewise-linear path at ``t_i - s`` for every lag ``s``.

    ``times`` is (n, l), ``values`` (n, l, d), both padded with their last
    entry beyond ``lengths``. Queries before the first timestamp take the
    first observation (flat extrapolation). Returns (n, l, p, d).
    """
    n, l, d = values.shape
    p = lags.shape[0]
    if p == 0:
        return values.new_zeros((n, l, 0, d))
    query = times[:, :, None] - lags[None, None, :]  # (n, l, p)
    flat_query = query.reshape(n, l * p)
    idx = torch.searchsorted(times.contiguous(), flat_query.detach().contiguous(), right=True) - 1
    last_lo = (lengths - 2).clamp(min=0)[:, None]
    lo = torch.minimum(idx.clamp(min=0), last_lo)
    hi = torch.minimum(lo + 1, (lengths - 1)[:, None])
    t_lo = torch.gather(times, 1, lo)
    t_hi = torch.gather(times, 1, hi)
    span = t_hi - t_lo
    safe_span = torch.where(span > 0, span, torch.ones_like(span))
    w = torch.where(span > 0, (flat_query - t_lo) / safe_span, torch.zeros_like(span))
    w = w.clamp(0.0, 1.0)
    v_lo = torch.gather(values, 1, lo[:, :, None].expand(n, l * p, d))
    v_hi = torch.gather(values, 1, hi[:, :, None].expand(n, l * p, d))
    out = v_lo + w[:, :, None] * (v_hi - v_lo)
    return out.reshape(n, l, p, d)


def augment_tensors(times: torch.Tensor, values: torch.Tensor, lengths: torch.Tensor,
                    tau, lags) -> torch.Tensor:
    """Differentiable batch version of :func:`augment` on padded tensors.

    Returns (n, l, 1 + d * (1 + p)) with layout ``[tau*t, x, x(t-s_1), ...]``.
    """
    tau = torch.as_tensor(tau, dtype=values.dtype)
    lags = torch.as_tensor(lags, dtype=values.dtype).reshape(-1)
    n, l, d = values.shape
    lagged = interpolate_lagged(times, values, lengths, lags).reshape(n, l, -1)
    return torch.cat([(tau * times)[:, :, None], values, lagged], dim=-1)


def pad_sequences(seqs: SeqType[Sequence], length: Optional[int] = None):
    """Stack raw sequences into (times, values, lengths) tensors, repeating last entries."""
    if not seqs:
        raise InvalidInputError("empty list of sequences")
    dims = {s.dim for s in seqs}
    if len(dims) != 1:
        raise InvalidInputError(f"inconsistent state dimensions {sorted(dims)}")
    lengths = np.array([len(s) for s in seqs])
    L = int(lengths.max()) if length is None else int(length)
    if L < lengths.max():
        raise InvalidInputError("padding length shorter than a sequence")
    times = np.empty((len(seqs), L))
    values = np.empty((len(seqs), L, dims.pop()))
    for i, s in enumerate(seqs):
        k = len(s)
        times[i, :k] = s.times
        times[i, k:] = s.times[-1]
        values[i, :k] = s.values
        values[i, k:] = s.values[-1]
    return torch.from_numpy(times), torch.from_numpy(values), torch.from_numpy(lengths)


def augment(seq: Sequence, tau: float = 0.0, lags=()) -> AugmentedSequence:
    """Add the time coordinate ``tau * t`` and lagged copies of every coordinate.

    Lags are in the units of ``seq.times``; lagged values come from linear
    interpolation of the path, clamped to the first observation before it starts.
    """
    if not isinstance(seq, Sequence):
        seq = Sequence(*seq)
    lags = np.asarray(lags, dtype=np.float64).reshape(-1)
    if tau < 0 or not np.isfinite(tau):
        raise InvalidInputError("tau must be a finite non-negative number")
    if np.any(~np.isfinite(lags)) or np.any(lags < 0):
        raise InvalidInputError("lags must be finite and non-negative")
    times, values, lengths = pad_sequences([seq])
    with torch.no_grad():
        out = augment_tensors(times, values, lengths, float(tau), torch.from_numpy(lags))
    return AugmentedSequence(out[0].numpy().copy(), source=seq)


def increments(aug) -> np.ndarray:
    """Return the ``l - 1`` increments ``x_{i+1} - x_i`` as rows."""
    values = aug.values if hasattr(aug, "values") else np.asarray(aug, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    return values[1:] - values[:-1]


def tabulate(seqs: SeqType[AugmentedSequence], ids=None) -> SequenceBatch:
    if not seqs:
        raise InvalidInputError("cannot tabulate an empty list")
    arrays = [s.values if hasattr(s, "values") else np.asarray(s, dtype=np.float64) for s in seqs]
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise InvalidInputError(f"inconsistent state dimensions {sorted(dims)}")
    lengths = np.array([len(a) for a in arrays])
    L = int(lengths.max())
    out = np.empty((len(arrays), L, dims.pop()))
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
        out[i, len(a):] = a[-1]
    ids = tuple(range(len(arrays))) if ids is None else tuple(ids)
    return SequenceBatch(out, lengths, ids)


def subsample(seq: Sequence, max_len: int) -> Sequence:
    """Thin a long sequence to ``max_len`` evenly spaced observations, keeping both endpoints."""
    if max_len < 2:
        raise InvalidInputError("max_len must be at least 2")
    if len(seq) <= max_len:
        return seq
    idx = np.round(np.linspace(0, len(seq) - 1, max_len)).astype(int)
    return Sequence(seq.times[idx], seq.values[idx], seq.label)
