"""Brute-force reference for the signature covariances.

Truncated discrete signatures are materialized as dense tensors by enumerating
strictly increasing multi-indices; covariances are then plain elementwise
product sums. For the RBF static kernel the feature space is not finite, so the
same enumeration runs over static-kernel evaluations instead. Slow on purpose
and guarded against anything but tiny inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import InvalidInputError, OracleScaleExceeded
from .static import StaticKernelParams, kappa, kappa_double_diff

MAX_DEPTH = 5
MAX_DIM = 5
MAX_LEN = 12


@dataclass(frozen=True, eq=False)
class DenseSignature:
    levels: tuple  # level m is an m-way array; level 0 a scalar

    @property
    def depth(self) -> int:
        return len(self.levels) - 1


def _guard(depth, dim, length=0):
    if depth > MAX_DEPTH or dim > MAX_DIM or length > MAX_LEN:
        raise OracleScaleExceeded(
            f"oracle limited to depth<={MAX_DEPTH}, dim<={MAX_DIM}, length<={MAX_LEN}; "
            f"got depth={depth}, dim={dim}, length={length}")


def _values(seq) -> np.ndarray:
    values = seq.values if hasattr(seq, "values") else seq
    values = np.asarray(values, dtype=np.float64)
    return values[:, None] if values.ndim == 1 else values


def brute_signature(aug, depth: int) -> DenseSignature:
    """Level m = sum over i_1 < ... < i_m of dx_{i_1} (x) ... (x) dx_{i_m}."""
    x = _values(aug)
    _guard(depth, x.shape[1], len(x))
    dx = x[1:] - x[:-1]
    d = x.shape[1]
    levels = [np.array(1.0)] + [np.zeros((d,) * m) for m in range(1, depth + 1)]

    def extend(start, m, prefix):
        for i in range(start, len(dx)):
            t = np.multiply.outer(prefix, dx[i]) if m > 1 else dx[i].copy()
            levels[m] += t
            if m < depth:
                extend(i + 1, m + 1, t)

    if depth >= 1:
        extend(0, 1, None)
    return DenseSignature(tuple(levels))


def materialize(z) -> DenseSignature:
    """Dense form of a rank-1 inducing tensor (linear static kernel only)."""
    _guard(z.depth, z.dim)
    levels = [np.array(z.z0)]
    for factors in z.levels:
        t = factors[0]
        for v in factors[1:]:
            t = np.multiply.outer(t, v)
        levels.append(np.array(t))
    return DenseSignature(tuple(levels))


def level_inner(a: DenseSignature, b: DenseSignature) -> np.ndarray:
    if a.depth != b.depth:
        raise InvalidInputError("signatures of different depth")
    out = []
    for la, lb in zip(a.levels, b.levels):
        if np.shape(la) != np.shape(lb):
            raise InvalidInputError("level shapes differ")
        out.append(float(np.sum(np.asarray(la) * np.asarray(lb))))
    return np.array(out)


def brute_cov(a: DenseSignature, b: DenseSignature, sigma) -> float:
    sigma = np.asarray(sigma, dtype=np.float64)
    return float(np.sum(sigma**2 * level_inner(a, b)))


# -- enumeration over static-kernel evaluations --------------------------------

def _increasing_sum(weights_per_tuple, n, m):
    return sum(weights_per_tuple(idx) for idx in combinations(range(n), m))


def seq_seq_levels(x, y, depth: int, static: StaticKernelParams) -> np.ndarray:
    x, y = _values(x), _values(y)
    _guard(depth, x.shape[1], max(len(x), len(y)))
    nx, ny = len(x) - 1, len(y) - 1
    D = np.array([[kappa_double_diff(x[i], x[i + 1], y[j], y[j + 1], static)
                   for j in range(ny)] for i in range(nx)]).reshape(nx, ny)
    out = [1.0]
    for m in range(1, depth + 1):
        total = 0.0
        for I in combinations(range(nx), m):
            for J in combinations(range(ny), m):
                total += np.prod([D[i, j] for i, j in zip(I, J)])
        out.append(total)
    return np.array(out)


def tensor_seq_levels(z, y, depth: int, static: StaticKernelParams) -> np.ndarray:
    y = _values(y)
    _guard(depth, y.shape[1], len(y))
    n = len(y) - 1
    out = [z.z0]
    for m, factors in enumerate(z.levels[:depth], start=1):
        def weight(idx, factors=factors):
            return np.prod([kappa(v, y[i + 1], static) - kappa(v, y[i], static)
                            for v, i in zip(factors, idx)])
        out.append(_increasing_sum(weight, n, m))
    return np.array(out)


def tensor_tensor_levels(z, w, depth: int, static: StaticKernelParams) -> np.ndarray:
    _guard(depth, z.dim)
    out = [z.z0 * w.z0]
    for fz, fw in zip(z.levels[:depth], w.levels[:depth]):
        out.append(np.prod([kappa(a, b, static) for a, b in zip(fz, fw)]))
    return np.array(out)


# -- Gram blocks ----------------------------------------------------------------

def _full_static(params, dim) -> StaticKernelParams:
    """Static kernel on augmented states with one lengthscale per coordinate."""
    if params.static.kind == "linear":
        return params.static
    return StaticKernelParams("rbf", tuple(1.0 / params.feature_scales(dim)))


def _dim_of(items):
    first = items[0]
    return first.dim if hasattr(first, "levels") else _values(first).shape[1]


def _seq_levels(x, y, params, static):
    if params.static.kind == "linear":
        return level_inner(brute_signature(x, params.depth), brute_signature(y, params.depth))
    return seq_seq_levels(x, y, params.depth, static)


def _tensor_seq_levels(z, y, params, static):
    if params.static.kind == "linear":
        return level_inner(materialize(z), brute_signature(y, params.depth))
    return tensor_seq_levels(z, y, params.depth, static)


def _norms(sq):
    # degenerate levels are left unnormalized
    return np.sqrt(np.where(sq > 0, sq, 1.0))


def oracle_gram(block: str, params, Z=None, X=None, Y=None) -> np.ndarray:
    """Reference value of a Gram block: ``zz``, ``zx``, ``xx`` (``Y`` defaults to ``X``) or ``diag``."""
    s2 = params.sigmas**2
    if block == "zz":
        static = _full_static(params, _dim_of(Z))
        return np.array([[s2 @ tensor_tensor_levels(a, b, params.depth, static) for b in Z] for a in Z])
    static = _full_static(params, _dim_of(X))
    self_levels = {}

    def selfsq(x):
        key = id(x)
        if key not in self_levels:
            self_levels[key] = _seq_levels(x, x, params, static)
        return self_levels[key]

    if block == "zx":
        out = np.empty((len(Z), len(X)))
        for i, z in enumerate(Z):
            for j, x in enumerate(X):
                lv = _tensor_seq_levels(z, x, params, static)
                if params.normalize_levels:
                    lv = lv / _norms(selfsq(x))
                out[i, j] = s2 @ lv
        return out
    if block == "xx":
        Y = X if Y is None else Y
        out = np.empty((len(X), len(Y)))
        for i, x in enumerate(X):
            for j, y in enumerate(Y):
                lv = _seq_levels(x, y, params, static)
                if params.normalize_levels:
                    lv = lv / (_norms(selfsq(x)) * _norms(selfsq(y)))
                out[i, j] = s2 @ lv
        return out
    if block == "diag":
        out = []
        for x in X:
            lv = selfsq(x)
            if params.normalize_levels:
                lv = lv / _norms(lv) ** 2
            out.append(s2 @ lv)
        return np.array(out)
    raise InvalidInputError(f"unknown block {block!r}")
