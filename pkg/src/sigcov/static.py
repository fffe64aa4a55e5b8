"""Static (state-space) kernels lifting observations before the signature map."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import InvalidInputError

KINDS = ("linear", "rbf")

# caps the (n_a, n_b) temporaries of the direct squared-distance computation
_SQDIST_CHUNK = 4_000_000


@dataclass(frozen=True)
class StaticKernelParams:
    kind: str = "rbf"
    lengthscales: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown static kernel {self.kind!r}")
        if self.lengthscales is not None:
            ls = tuple(float(v) for v in np.ravel(self.lengthscales))
            if not all(np.isfinite(v) and v > 0 for v in ls):
                raise InvalidInputError("lengthscales must be positive and finite")
            object.__setattr__(self, "lengthscales", ls)


def _check_pair(x, y, params):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidInputError(f"dimension mismatch {x.shape} vs {y.shape}")
    if params.kind == "rbf" and params.lengthscales is not None \
            and len(params.lengthscales) != len(x):
        raise InvalidInputError(
            f"{len(params.lengthscales)} lengthscales for {len(x)}-dimensional inputs")
    return x, y


def kappa(x, y, params: StaticKernelParams) -> float:
    x, y = _check_pair(x, y, params)
    if params.kind == "linear":
        return float(np.dot(x, y))
    ls = np.ones_like(x) if params.lengthscales is None else np.asarray(params.lengthscales)
    return float(np.exp(-0.5 * np.sum(((x - y) / ls) ** 2)))


def kappa_double_diff(x0, x1, y0, y1, params: StaticKernelParams) -> float:
    """``k(x1, y1) - k(x0, y1) - k(x1, y0) + k(x0, y0)``; equals ``<dx, dy>`` for the linear kind."""
    return ((kappa(x1, y1, params) - kappa(x0, y1, params))
            - (kappa(x1, y0, params) - kappa(x0, y0, params)))


def init_lengthscales(sample, d: Optional[int] = None, n_samples: int = 1000,
                      eps: float = 1e-6, seed: int = 0) -> np.ndarray:
    """Per-dimension ``sqrt(E[(x_i - x_i')^2] * d)`` over independent copies.

    Up to ``n_samples`` observations are drawn (fixed seed); the expectation over
    independent copies from that empirical sample equals twice its population
    variance, which is what is computed.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim == 1:
        sample = sample[:, None]
    if len(sample) < 2:
        raise InvalidInputError("need at least two observations")
    d = sample.shape[1] if d is None else int(d)
    if len(sample) > n_samples:
        rng = np.random.default_rng(seed)
        sample = sample[rng.choice(len(sample), n_samples, replace=False)]
    msd = 2.0 * np.var(sample, axis=0)
    ls = np.sqrt(msd * d)
    degenerate = ~(ls > eps)
    if np.any(degenerate):
        warnings.warn(f"zero-variance dimensions {np.flatnonzero(degenerate).tolist()}; "
                      f"lengthscale floored at {eps}", RuntimeWarning, stacklevel=2)
        ls = np.where(degenerate, eps, ls)
    return ls


def sqdist(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise squared distances of rows, by direct differences.

    Differences rather than the ``|a|^2 + |b|^2 - 2ab`` expansion so that
    identical rows give bitwise identical kernel values (exact zero increments).
    """
    na, nb = a.shape[0], b.shape[0]
    step = max(1, _SQDIST_CHUNK // max(1, na))
    if step >= nb:
        return _sqdiff(a[:, None, :], b[None, :, :])
    parts = [_sqdiff(a[:, None, :], b[None, i:i + step, :]) for i in range(0, nb, step)]
    return torch.cat(parts, dim=1)


def _sqdiff(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # coordinate-wise accumulation: summation order independent of the batch shape
    diff = a[..., 0] - b[..., 0]
    out = diff * diff
    for i in range(1, a.shape[-1]):
        diff = a[..., i] - b[..., i]
        out = out + diff * diff
    return out


def gram(a: torch.Tensor, b: torch.Tensor, kind: str) -> torch.Tensor:
    """Static kernel matrix between the rows of already-scaled inputs."""
    if kind == "linear":
        return a @ b.T
    return torch.exp(-0.5 * sqdist(a, b))


def paired_gram(a: torch.Tensor, b: torch.Tensor, kind: str) -> torch.Tensor:
    """Batched kernel matrices ``k(a[f], b[f])`` for (F, n, D) inputs."""
    if kind == "linear":
        return a @ b.transpose(-1, -2)
    return torch.exp(-0.5 * _sqdiff(a[:, :, None, :], b[:, None, :, :]))
