"""Truncated signature covariances between inducing tensors and sequences.

Four computations share one set of recursions:

* ``cov_inducing``  - inducing tensors vs inducing tensors (products of factor inner products),
* ``cov_cross``     - inducing tensors vs sequences (one exclusive prefix sum per factor),
* ``cov_sequences`` - sequences vs sequences (double exclusive prefix sums),
* ``var_sequences`` - the diagonal of the latter, linear in the batch size.

Only strictly increasing multi-indices contribute (repeated indices get weight 0).
Inputs to the ``k_*`` tensor functions are already feature-scaled; the public
wrappers apply the scaling implied by :class:`SigKernelParams`.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence as SeqType

import numpy as np
import torch

from . import static
from .arrayops import exclusive_cumsum, slicesum
from .errors import InvalidInputError
from .sequences import AugmentedSequence, SequenceBatch, tabulate
from .static import StaticKernelParams

# elements of the largest temporary in the cross-covariance recursion
_CROSS_CHUNK = 1_000_000


@dataclass(frozen=True)
class SigKernelParams:
    depth: int = 4
    sigma_prime: Optional[tuple] = None
    beta: float = 1.0
    tau: float = 0.0
    lags: tuple = ()
    normalize_levels: bool = False
    static: StaticKernelParams = field(default_factory=lambda: StaticKernelParams("linear"))

    def __post_init__(self):
        if int(self.depth) < 1:
            raise InvalidInputError("truncation depth must be at least 1")
        object.__setattr__(self, "depth", int(self.depth))
        sp = (1.0,) * (self.depth + 1) if self.sigma_prime is None else \
            tuple(float(v) for v in np.ravel(self.sigma_prime))
        if len(sp) != self.depth + 1:
            raise InvalidInputError(f"need {self.depth + 1} level scalings, got {len(sp)}")
        if not all(np.isfinite(v) and v > 0 for v in sp) or not (self.beta > 0):
            raise InvalidInputError("level scalings and beta must be positive")
        object.__setattr__(self, "sigma_prime", sp)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "lags", tuple(float(v) for v in np.ravel(self.lags)))

    @property
    def sigmas(self) -> np.ndarray:
        return self.beta * np.asarray(self.sigma_prime)

    def feature_scales(self, dim: int) -> np.ndarray:
        """Per-coordinate multipliers applied to augmented states before the static kernel.

        The time coordinate is left alone (``tau`` already scales it); each
        lagged block shares the lengthscales of its source coordinates.
        """
        ls = self.static.lengthscales
        if self.static.kind == "linear" or ls is None:
            return np.ones(dim)
        p = len(self.lags)
        if 1 + len(ls) * (1 + p) != dim:
            raise InvalidInputError(
                f"{len(ls)} lengthscales with {p} lags do not fit augmented dimension {dim}")
        return np.concatenate([[1.0], np.tile(1.0 / np.asarray(ls), 1 + p)])

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class InducingTensor:
    """``z = (z0, v_11, v_21 (x) v_22, ...)``: level ``m`` is the tensor product of ``m`` factors.

    For the RBF kernel each factor is an anchor ``a`` standing for ``kappa(a, .)``.
    """

    z0: float
    levels: tuple

    def __post_init__(self):
        levels = tuple(np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in self.levels)
        if not levels:
            raise InvalidInputError("an inducing tensor needs at least one level")
        dims = {v.shape[1] for v in levels}
        if len(dims) != 1:
            raise InvalidInputError("all factors must share one dimension")
        for m, v in enumerate(levels, start=1):
            if v.shape[0] != m:
                raise InvalidInputError(f"level {m} must hold {m} factors, got {v.shape[0]}")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "z0", float(self.z0))

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.levels[0].shape[1]

    def factors(self) -> np.ndarray:
        """Factors stacked level by level, shape (M(M+1)/2, D)."""
        return np.concatenate(self.levels, axis=0)

    @classmethod
    def from_factors(cls, z0, factors, depth) -> "InducingTensor":
        factors = np.asarray(factors, dtype=np.float64)
        return cls(z0, tuple(factors[level_offset(m):level_offset(m) + m] for m in range(1, depth + 1)))


@dataclass(frozen=True, eq=False)
class GramBlock:
    values: np.ndarray
    row_ids: tuple
    col_ids: tuple
    params_digest: str
    block: str

    def to_csv(self, path):
        values = np.atleast_2d(self.values)
        if self.block == "diag":
            values = values.reshape(-1, 1)
        with open(path, "w") as fh:
            fh.write(",".join(["row_id"] + [str(c) for c in self.col_ids]) + "\n")
            for rid, row in zip(self.row_ids, values):
                fh.write(",".join([str(rid)] + [repr(float(v)) for v in row]) + "\n")


def level_offset(m: int) -> int:
    """Index of the first factor of level ``m`` in the stacked factor array."""
    return m * (m - 1) // 2


def n_factors(depth: int) -> int:
    return depth * (depth + 1) // 2


# ---------------------------------------------------------------------------
# recursions on scaled tensors; each returns per-level values, level 0 first
# ---------------------------------------------------------------------------

def tensor_levels(z0: torch.Tensor, V: torch.Tensor, depth: int, kind: str) -> torch.Tensor:
    """(M+1, nZ, nZ) level-wise covariances of inducing tensors ``(z0, V)``, ``V`` (nZ, F, D)."""
    per_slot = static.paired_gram(V.transpose(0, 1), V.transpose(0, 1), kind)  # (F, nZ, nZ)
    out = [z0[:, None] * z0[None, :]]
    for m in range(1, depth + 1):
        off = level_offset(m)
        A = per_slot[off]
        for k in range(1, m):
            A = per_slot[off + k] * A
        out.append(A)
    return torch.stack(out)


def _dot(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Broadcast inner product over the last axis, accumulated one coordinate at a time.

    Unlike a matrix product the summation order does not depend on the batch
    shape, so padding a batch never changes an entry by even one ulp.
    """
    out = a[..., 0] * b[..., 0]
    for i in range(1, a.shape[-1]):
        out = out + a[..., i] * b[..., i]
    return out


def _factor_increments(V: torch.Tensor, X: torch.Tensor, kind: str) -> torch.Tensor:
    """(nZ, k, n, L-1) inner products of factors with path increments."""
    nZ, k, D = V.shape
    n, L, _ = X.shape
    if kind == "linear":
        dX = X[:, 1:] - X[:, :-1]
        return _dot(V[:, :, None, None, :], dX[None, None, :, :, :])
    P = static.gram(V.reshape(-1, D), X.reshape(-1, D), kind).reshape(nZ, k, n, L)
    return P[..., 1:] - P[..., :-1]


def cross_levels(z0: torch.Tensor, V: torch.Tensor, X: torch.Tensor, depth: int,
                 kind: str) -> torch.Tensor:
    """(M+1, nZ, nX) level-wise covariances of inducing tensors against padded sequences."""
    nZ, n, L = V.shape[0], X.shape[0], X.shape[1]
    # bounded working set per chunk of sequences keeps the cost linear in the length
    step = max(1, _CROSS_CHUNK // max(1, nZ * depth * L))
    if step < n:
        parts = [_cross_levels(z0, V, X[i:i + step], depth, kind) for i in range(0, n, step)]
        return torch.cat(parts, dim=2)
    return _cross_levels(z0, V, X, depth, kind)


def _cross_levels(z0, V, X, depth, kind):
    nZ, n = V.shape[0], X.shape[0]
    out = [z0[:, None].expand(nZ, n)]
    for m in range(1, depth + 1):
        off = level_offset(m)
        # one (nZ, m, n, L-1) slab per level
        K = _factor_increments(V[:, off:off + m], X, kind)
        A = K[:, 0]
        for k in range(1, m):
            A = K[:, k] * exclusive_cumsum(A, -1)
        out.append(slicesum(A, -1))
    return torch.stack(out)


def _double_increments(X: torch.Tensor, Y: torch.Tensor, kind: str) -> torch.Tensor:
    """(nX, nY, LX-1, LY-1) static-kernel double differences."""
    if kind == "linear":
        dX = X[:, 1:] - X[:, :-1]
        dY = Y[:, 1:] - Y[:, :-1]
        return _dot(dX[:, None, :, None, :], dY[None, :, None, :, :])
    n, L, D = X.shape
    m, L2, _ = Y.shape
    P = static.gram(X.reshape(-1, D), Y.reshape(-1, D), kind).reshape(n, L, m, L2).permute(0, 2, 1, 3)
    return (P[:, :, 1:, 1:] - P[:, :, :-1, 1:]) - (P[:, :, 1:, :-1] - P[:, :, :-1, :-1])


def _self_increments(X: torch.Tensor, kind: str) -> torch.Tensor:
    """(n, L-1, L-1) double differences of each sequence against itself."""
    if kind == "linear":
        dX = X[:, 1:] - X[:, :-1]
        return _dot(dX[:, :, None, :], dX[:, None, :, :])
    P = torch.exp(-0.5 * static._sqdiff(X[:, :, None, :], X[:, None, :, :]))
    return (P[:, 1:, 1:] - P[:, :-1, 1:]) - (P[:, 1:, :-1] - P[:, :-1, :-1])


def _iterated_sums(K: torch.Tensor, depth: int) -> list:
    """Level 1..M sums over strictly increasing index pairs along the last two axes."""
    out = [slicesum(slicesum(K, -1), -1)]
    A = K
    for _ in range(2, depth + 1):
        A = K * exclusive_cumsum(exclusive_cumsum(A, -2), -1)
        out.append(slicesum(slicesum(A, -1), -1))
    return out


def sequence_levels(X: torch.Tensor, Y: torch.Tensor, depth: int, kind: str) -> torch.Tensor:
    """(M+1, nX, nY) level-wise covariances between two padded sequence batches."""
    K = _double_increments(X, Y, kind)
    ones = X.new_ones((X.shape[0], Y.shape[0]))
    return torch.stack([ones] + _iterated_sums(K, depth))


def variance_levels(X: torch.Tensor, depth: int, kind: str) -> torch.Tensor:
    """(M+1, nX) level-wise self-covariances; cost linear in the batch size."""
    K = _self_increments(X, kind)
    return torch.stack([X.new_ones(X.shape[0])] + _iterated_sums(K, depth))


def level_norms(sq: torch.Tensor):
    """Square roots of per-level self-covariances, 1 where a level vanishes.

    Returns ``(norms, degenerate)``; ``degenerate`` flags levels that fall back
    to the unnormalized value.
    """
    ok = sq > 0
    return torch.sqrt(torch.where(ok, sq, torch.ones_like(sq))), ~ok


def normalize(levels: torch.Tensor, row_sq: Optional[torch.Tensor] = None,
              col_sq: Optional[torch.Tensor] = None, warn: bool = True) -> torch.Tensor:
    """Divide each level by the level norms of its sequence side(s).

    ``levels`` is (M+1, n, m); ``row_sq`` (M+1, n) and ``col_sq`` (M+1, m) are
    self-covariances of the sequences on that side, ``None`` for inducing tensors.
    """
    out = levels
    for sq, axis in ((row_sq, 1), (col_sq, 2)):
        if sq is None:
            continue
        norms, degenerate = level_norms(sq)
        if warn and bool(degenerate.any()):
            warnings.warn(f"{int(degenerate.sum())} zero-norm signature levels left unnormalized",
                          RuntimeWarning, stacklevel=2)
        out = out / (norms[:, :, None] if axis == 1 else norms[:, None, :])
    return out


def combine(levels: torch.Tensor, sigma2: torch.Tensor) -> torch.Tensor:
    shape = (-1,) + (1,) * (levels.dim() - 1)
    return (sigma2.reshape(shape) * levels).sum(0)


# ---------------------------------------------------------------------------
# covariances on scaled tensors, used by the model
# ---------------------------------------------------------------------------

def k_zz(z0, V, sigma2, depth, kind):
    return combine(tensor_levels(z0, V, depth, kind), sigma2)


def k_zx(z0, V, X, sigma2, depth, kind, normalize_levels=False, x_sq=None, warn=False):
    levels = cross_levels(z0, V, X, depth, kind)
    if normalize_levels:
        x_sq = variance_levels(X, depth, kind) if x_sq is None else x_sq
        levels = normalize(levels, col_sq=x_sq, warn=warn)
    return combine(levels, sigma2)


def k_xx(X, Y, sigma2, depth, kind, normalize_levels=False, x_sq=None, y_sq=None, warn=False):
    levels = sequence_levels(X, Y, depth, kind)
    if normalize_levels:
        x_sq = variance_levels(X, depth, kind) if x_sq is None else x_sq
        y_sq = variance_levels(Y, depth, kind) if y_sq is None else y_sq
        levels = normalize(levels, row_sq=x_sq, col_sq=y_sq, warn=warn)
    return combine(levels, sigma2)


def k_x(X, sigma2, depth, kind, normalize_levels=False, x_sq=None, warn=False):
    sq = variance_levels(X, depth, kind) if x_sq is None else x_sq
    if normalize_levels:
        norms, degenerate = level_norms(sq)
        if warn and bool(degenerate.any()):
            warnings.warn(f"{int(degenerate.sum())} zero-norm signature levels left unnormalized",
                          RuntimeWarning, stacklevel=2)
        sq = sq / norms**2
    return combine(sq, sigma2)


# ---------------------------------------------------------------------------
# public API on numpy containers
# ---------------------------------------------------------------------------

def _as_batch(X) -> SequenceBatch:
    if isinstance(X, SequenceBatch):
        return X
    if isinstance(X, AugmentedSequence):
        return tabulate([X])
    return tabulate(list(X))


def _scaled_batch(batch: SequenceBatch, params: SigKernelParams) -> torch.Tensor:
    scales = torch.from_numpy(params.feature_scales(batch.dim))
    return torch.from_numpy(batch.values) * scales


def _stack_tensors(Z: SeqType[InducingTensor], params: SigKernelParams):
    Z = list(Z)
    if not Z:
        raise InvalidInputError("need at least one inducing tensor")
    depths = {z.depth for z in Z}
    dims = {z.dim for z in Z}
    if depths != {params.depth}:
        raise InvalidInputError(f"inducing tensor depths {sorted(depths)} != kernel depth {params.depth}")
    if len(dims) != 1:
        raise InvalidInputError(f"inducing tensors of mixed dimension {sorted(dims)}")
    z0 = torch.tensor([z.z0 for z in Z], dtype=torch.float64)
    V = torch.from_numpy(np.stack([z.factors() for z in Z]))
    return z0, V * torch.from_numpy(params.feature_scales(dims.pop()))


def _sigma2(params: SigKernelParams) -> torch.Tensor:
    return torch.from_numpy(params.sigmas ** 2)


def cov_inducing(Z: SeqType[InducingTensor], params: SigKernelParams,
                 per_level: bool = False) -> GramBlock:
    """K_ZZ. Inducing tensors are never normalized."""
    z0, V = _stack_tensors(Z, params)
    with torch.no_grad():
        levels = tensor_levels(z0, V, params.depth, params.static.kind)
        out = levels if per_level else combine(levels, _sigma2(params))
    ids = tuple(range(len(z0)))
    return GramBlock(out.numpy(), ids, ids, params.digest(), "zz")


def cov_cross(Z: SeqType[InducingTensor], X, params: SigKernelParams,
              per_level: bool = False) -> GramBlock:
    """K_ZX; with level normalization only the sequence side is normalized."""
    z0, V = _stack_tensors(Z, params)
    batch = _as_batch(X)
    if V.shape[-1] != batch.dim:
        raise InvalidInputError(f"tensor dimension {V.shape[-1]} != sequence dimension {batch.dim}")
    Xs = _scaled_batch(batch, params)
    kind = params.static.kind
    with torch.no_grad():
        levels = cross_levels(z0, V, Xs, params.depth, kind)
        if params.normalize_levels:
            levels = normalize(levels, col_sq=variance_levels(Xs, params.depth, kind))
        out = levels if per_level else combine(levels, _sigma2(params))
    return GramBlock(out.numpy(), tuple(range(len(z0))), batch.ids, params.digest(), "zx")


def cov_sequences(X, Y=None, params: SigKernelParams = None, per_level: bool = False) -> GramBlock:
    """K_XY between two batches (K_XX when ``Y`` is omitted)."""
    if params is None:
        raise InvalidInputError("kernel parameters are required")
    bx = _as_batch(X)
    by = bx if Y is None else _as_batch(Y)
    if bx.dim != by.dim:
        raise InvalidInputError(f"dimension mismatch {bx.dim} vs {by.dim}")
    Xs = _scaled_batch(bx, params)
    Ys = Xs if Y is None else _scaled_batch(by, params)
    kind = params.static.kind
    with torch.no_grad():
        levels = sequence_levels(Xs, Ys, params.depth, kind)
        if params.normalize_levels:
            x_sq = variance_levels(Xs, params.depth, kind)
            y_sq = x_sq if Y is None else variance_levels(Ys, params.depth, kind)
            levels = normalize(levels, row_sq=x_sq, col_sq=y_sq)
        out = levels if per_level else combine(levels, _sigma2(params))
        if Y is None:
            # the recursion sums (i, j) and (j, i) in different orders
            out = 0.5 * (out + out.transpose(-1, -2))
    return GramBlock(out.numpy(), bx.ids, by.ids, params.digest(), "xx")


def var_sequences(X, params: SigKernelParams, per_level: bool = False) -> GramBlock:
    """diag K_XX without forming the full matrix."""
    batch = _as_batch(X)
    Xs = _scaled_batch(batch, params)
    kind = params.static.kind
    with torch.no_grad():
        sq = variance_levels(Xs, params.depth, kind)
        if params.normalize_levels:
            norms, degenerate = level_norms(sq)
            if bool(degenerate.any()):
                warnings.warn(f"{int(degenerate.sum())} zero-norm signature levels left unnormalized",
                              RuntimeWarning, stacklevel=2)
            sq = sq / norms**2
        out = sq if per_level else combine(sq, _sigma2(params))
    return GramBlock(out.numpy(), batch.ids, batch.ids, params.digest(), "diag")
