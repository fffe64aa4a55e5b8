"""Whitened sparse variational GP pieces for multiclass classification.

All functions work on torch tensors so that gradients flow to kernel
hyperparameters and inducing variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import IllConditionedKernelError, InvalidInputError

JITTERS = (1e-6, 1e-5, 1e-4)
MIN_VARIANCE = 1e-10


@dataclass(frozen=True, eq=False)
class VariationalState:
    """Whitened q(u_c) = N(mu[:, c], L[c] L[c]^T) for every class ``c``."""

    mu: np.ndarray  # (n_Z, C)
    L: np.ndarray  # (C, n_Z, n_Z) lower triangular, positive diagonal

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        L = np.asarray(self.L, dtype=np.float64)
        if mu.ndim != 2 or L.shape != (mu.shape[1], mu.shape[0], mu.shape[0]):
            raise InvalidInputError(f"inconsistent shapes mu{mu.shape}, L{L.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(L))):
            raise InvalidInputError("non-finite variational parameters")
        if np.any(np.triu(L, 1)) or np.any(np.diagonal(L, axis1=1, axis2=2) <= 0):
            raise InvalidInputError("L must be lower triangular with a positive diagonal")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "L", L)

    @classmethod
    def prior(cls, n_inducing: int, n_classes: int) -> "VariationalState":
        return cls(np.zeros((n_inducing, n_classes)),
                   np.broadcast_to(np.eye(n_inducing), (n_classes, n_inducing, n_inducing)).copy())


def cholesky_with_jitter(K: torch.Tensor, jitters=JITTERS) -> torch.Tensor:
    eye = torch.eye(K.shape[-1], dtype=K.dtype)
    for jitter in jitters:
        L, info = torch.linalg.cholesky_ex(K + jitter * eye)
        if int(info) == 0 and bool(torch.isfinite(L).all()):
            return L
    raise IllConditionedKernelError(
        f"Cholesky factorization failed with jitter up to {jitters[-1]:g}")


def kl_whitened(mu: torch.Tensor, L: torch.Tensor) -> torch.Tensor:
    """KL(N(mu_c, L_c L_c^T) || N(0, I)) summed over classes."""
    mu, L = torch.as_tensor(mu), torch.as_tensor(L)
    if not (torch.isfinite(mu).all() and torch.isfinite(L).all()):
        raise FloatingPointError("non-finite variational parameters")
    n = mu.shape[0]
    logdet = torch.log(torch.diagonal(L, dim1=-2, dim2=-1)).sum()
    return 0.5 * (mu.pow(2).sum() + L.pow(2).sum() - n * L.shape[0] - 2.0 * logdet)


def marginal_q(chol_zz: torch.Tensor, k_zx: torch.Tensor, k_xx: torch.Tensor,
               mu: torch.Tensor, L: torch.Tensor, min_var: float = MIN_VARIANCE):
    """Per-class marginal means and variances of q(f_x), each (n_X, C)."""
    A = torch.linalg.solve_triangular(chol_zz, k_zx, upper=False)
    mean = A.T @ mu
    LtA = L.transpose(-1, -2) @ A  # (C, n_Z, n_X)
    var = (k_xx - A.pow(2).sum(0))[:, None] + LtA.pow(2).sum(1).T
    return mean, var.clamp_min(min_var)


def _normal_draws(shape, seed: int, dtype=torch.float64) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(shape, generator=gen, dtype=dtype)


def expected_log_lik(mean: torch.Tensor, var: torch.Tensor, labels, n_mc: int,
                     seed: int) -> torch.Tensor:
    """Monte-Carlo E[log softmax(f)[label]] per point, f_c ~ N(mean_c, var_c) independently."""
    if n_mc < 1:
        raise InvalidInputError("n_mc must be positive")
    mean, var = torch.atleast_2d(torch.as_tensor(mean)), torch.atleast_2d(torch.as_tensor(var))
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    eps = _normal_draws((n_mc,) + tuple(mean.shape), seed, mean.dtype)
    f = mean + var.sqrt() * eps
    logp = torch.log_softmax(f, dim=-1)
    picked = logp.gather(-1, labels.expand(n_mc, -1)[..., None])[..., 0]
    return picked.mean(0)


def elbo(mean, var, labels, mu, L, n_total: int, n_mc: int, seed: int) -> torch.Tensor:
    """Minibatch ELBO estimate, data term rescaled to the full training size."""
    ell = expected_log_lik(mean, var, labels, n_mc, seed)
    return (n_total / ell.shape[0]) * ell.sum() - kl_whitened(mu, L)


def predict(mean, var, n_mc: int, seed: int, labels=None):
    """Class probabilities averaged over posterior draws; nlpp per point when labels are given."""
    mean, var = torch.atleast_2d(torch.as_tensor(mean)), torch.atleast_2d(torch.as_tensor(var))
    eps = _normal_draws((n_mc,) + tuple(mean.shape), seed, mean.dtype)
    probs = torch.softmax(mean + var.sqrt() * eps, dim=-1).mean(0)
    probs = probs / probs.sum(-1, keepdim=True)
    if labels is None:
        return probs, None
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    nlpp = -torch.log(probs.gather(-1, labels[:, None])[:, 0])
    return probs, nlpp
