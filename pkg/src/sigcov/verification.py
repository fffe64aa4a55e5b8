"""Self-checks of the covariance code, the ELBO gradients and the KL term.

Each suite returns measured worst-case quantities; :func:`run_all` compares
them with the tolerances below and is what ``sigcov verify`` executes.
"""

from __future__ import annotations

import time
import warnings
from contextlib import contextmanager
from math import comb

import numpy as np
import torch

from . import oracle
from . import sigkernel as sk
from . import svgp
from .model import ModelConfig, SequenceData, SignatureGP
from .sequences import AugmentedSequence, Sequence, augment, tabulate
from .static import StaticKernelParams

ORACLE_RTOL = 1e-10
REFINEMENT_RTOL = 1e-12
INVARIANCE_RTOL = 1e-12
SCALE_RTOL = 1e-10
PSD_RATIO = 1e-8
GRAD_RTOL = 1e-4
KL_ATOL = 1e-10


def rel_err(a, b) -> float:
    """Largest elementwise relative error of ``a`` against the reference ``b``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b)
    scale = np.abs(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(diff == 0, 0.0, diff / scale)
    return float(np.max(r, initial=0.0))


def random_params(rng, depth, dim_raw, kind, normalize, n_lags=0):
    ls = tuple(rng.uniform(0.5, 2.0, dim_raw)) if kind == "rbf" else None
    return sk.SigKernelParams(depth=depth, sigma_prime=tuple(rng.uniform(0.5, 2.0, depth + 1)),
                              beta=float(rng.uniform(0.5, 2.0)), tau=0.0,
                              lags=tuple(rng.uniform(0.5, 1.5, n_lags)), normalize_levels=normalize,
                              static=StaticKernelParams(kind, ls))


def random_augmented(rng, n, dim_raw, max_len, tau=None):
    out = []
    for _ in range(n):
        length = int(rng.integers(1, max_len + 1))
        times = np.cumsum(rng.uniform(0.2, 1.0, length))
        t = rng.uniform(0.0, 1.5) if tau is None else tau
        out.append(augment(Sequence(times, rng.standard_normal((length, dim_raw))), tau=t))
    return out


def random_tensors(rng, n, depth, dim):
    return [sk.InducingTensor(float(rng.standard_normal()),
                              tuple(rng.standard_normal((m, dim)) for m in range(1, depth + 1)))
            for _ in range(n)]


@contextmanager
def _quiet():
    """Silence the zero-norm fallback warnings that degenerate random inputs trigger."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


# -- suites ------------------------------------------------------------------------

def oracle_equivalence(n_instances: int = 200, seed: int = 0) -> dict:
    """All four fast blocks against the brute-force oracle on small random instances."""
    rng = np.random.default_rng(seed)
    worst = {"zz": 0.0, "zx": 0.0, "xx": 0.0, "diag": 0.0}
    start = time.perf_counter()
    for i in range(n_instances):
        depth = int(rng.integers(1, 5))
        d = int(rng.integers(1, 4))
        kind = ("linear", "rbf")[i % 2]
        params = random_params(rng, depth, d, kind, normalize=bool((i // 2) % 2))
        X = random_augmented(rng, int(rng.integers(1, 5)), d, 6)
        Y = random_augmented(rng, int(rng.integers(1, 5)), d, 6)
        Z = random_tensors(rng, int(rng.integers(1, 4)), depth, d + 1)
        with _quiet():
            pairs = {
                "zz": (sk.cov_inducing(Z, params).values, oracle.oracle_gram("zz", params, Z=Z)),
                "zx": (sk.cov_cross(Z, X, params).values, oracle.oracle_gram("zx", params, Z=Z, X=X)),
                "xx": (sk.cov_sequences(X, Y, params).values,
                       oracle.oracle_gram("xx", params, X=X, Y=Y)),
                "diag": (sk.var_sequences(X, params).values, oracle.oracle_gram("diag", params, X=X)),
            }
        for key, (fast, ref) in pairs.items():
            worst[key] = max(worst[key], rel_err(fast, ref))
    return {"max_rel_err": max(worst.values()), "per_block": worst,
            "seconds": time.perf_counter() - start}


def straight_line(v, n_segments):
    """Augmented path from 0 to ``v`` in ``n_segments`` equal steps (no time coordinate)."""
    v = np.asarray(v, dtype=np.float64)
    return AugmentedSequence(np.outer(np.arange(n_segments + 1) / n_segments, v))


def refinement(segments=(2, 4, 8, 16), depth: int = 4, seed: int = 0) -> dict:
    """Level-m entries for straight lines against C(N,m)^2 <v,w>^m / N^(2m)."""
    rng = np.random.default_rng(seed)
    v, w = rng.standard_normal(3), rng.standard_normal(3)
    params = sk.SigKernelParams(depth=depth, static=StaticKernelParams("linear"))
    worst = 0.0
    distance_to_limit = []
    for N in segments:
        levels = sk.cov_sequences([straight_line(v, N)], [straight_line(w, N)], params,
                                  per_level=True).values[:, 0, 0]
        expected = np.array([comb(N, m) ** 2 * (v @ w) ** m / N ** (2 * m) for m in range(depth + 1)])
        worst = max(worst, rel_err(levels[1:], expected[1:]))
        limit = np.array([(v @ w) ** m / np.prod(np.arange(1, m + 1)) ** 2 for m in range(depth + 1)])
        distance_to_limit.append(float(np.max(np.abs(levels[2:] - limit[2:]))))
    monotone = all(a > b for a, b in zip(distance_to_limit, distance_to_limit[1:]))
    return {"max_rel_err": worst, "distance_to_limit": distance_to_limit, "converging": monotone}


@_quiet()
def invariance(n_trials: int = 20, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    out = {"duplicate": 0.0, "padding": 0.0, "relabel": 0.0, "scale": 0.0}
    for trial in range(n_trials):
        kind = ("linear", "rbf")[trial % 2]
        depth = int(rng.integers(1, 5))
        d = int(rng.integers(1, 4))
        params = random_params(rng, depth, d, kind, normalize=bool(trial % 3 == 0))
        X = random_augmented(rng, 3, d, 8)
        Z = random_tensors(rng, 2, depth, d + 1)
        ref_xx = sk.cov_sequences(X, None, params).values
        ref_zx = sk.cov_cross(Z, X, params).values

        # repeat one observation of the first sequence
        x0 = X[0].values
        k = int(rng.integers(len(x0)))
        dup = [AugmentedSequence(np.insert(x0, k, x0[k], axis=0))] + X[1:]
        out["duplicate"] = max(out["duplicate"],
                               rel_err(sk.cov_sequences(dup, X, params).values, ref_xx),
                               rel_err(sk.cov_cross(Z, dup, params).values, ref_zx))

        # each sequence alone vs inside a padded batch with a longer partner
        longer = random_augmented(rng, 1, d, 12)[0]
        for i, x in enumerate(X):
            alone = sk.cov_sequences([x], X, params).values[0]
            batch = tabulate([x, AugmentedSequence(np.concatenate([longer.values] * 2))])
            padded = sk.cov_sequences(batch, X, params).values[0]
            out["padding"] = max(out["padding"], rel_err(padded, alone))

        # tau = 0, no lags: timestamps do not matter
        raw = Sequence(np.arange(6.0), rng.standard_normal((6, d)))
        other = Sequence(np.cumsum(rng.uniform(0.1, 3.0, 6)), raw.values)
        a = sk.cov_sequences([augment(raw)], X, params).values
        b = sk.cov_sequences([augment(other)], X, params).values
        out["relabel"] = max(out["relabel"], rel_err(b, a))

        # normalized, linear: global rescaling of every sequence
        lin = random_params(rng, depth, d, "linear", normalize=True)
        base_xx = sk.cov_sequences(X, None, lin).values
        base_zx = sk.cov_cross(Z, X, lin).values
        for c in (0.1, 10.0):
            cX = [AugmentedSequence(c * x.values) for x in X]
            out["scale"] = max(out["scale"], rel_err(sk.cov_sequences(cX, None, lin).values, base_xx),
                               rel_err(sk.cov_cross(Z, cX, lin).values, base_zx))
    return out


def psd(n_grams: int = 50, n: int = 8, seed: int = 0) -> dict:
    """Worst ``min eig / max eig`` over random K_XX and joint [[K_ZZ, K_ZX], [K_XZ, K_XX]] blocks."""
    rng = np.random.default_rng(seed)
    worst_xx, worst_joint = np.inf, np.inf
    for g in range(n_grams):
        kind = ("linear", "rbf")[g % 2]
        depth = int(rng.integers(1, 5))
        d = int(rng.integers(1, 4))
        params = random_params(rng, depth, d, kind, normalize=bool(g % 3 == 0))
        X = random_augmented(rng, n, d, 10)
        Z = random_tensors(rng, 4, depth, d + 1)
        with _quiet():
            Kxx = sk.cov_sequences(X, None, params).values
            Kzz = sk.cov_inducing(Z, params).values
            Kzx = sk.cov_cross(Z, X, params).values
        joint = np.block([[Kzz, Kzx], [Kzx.T, Kxx]])
        for K, which in ((Kxx, "xx"), (joint, "joint")):
            eig = np.linalg.eigvalsh(K + 1e-8 * np.eye(len(K)))
            ratio = eig[0] / eig[-1]
            if which == "xx":
                worst_xx = min(worst_xx, ratio)
            else:
                worst_joint = min(worst_joint, ratio)
    return {"min_ratio_xx": float(worst_xx), "min_ratio_joint": float(worst_joint)}


def _small_model(rng, point: int):
    """A tiny model with every parameter group present, at a random parameter point."""
    kind = ("rbf", "linear")[point % 2]
    inducing = "tensors" if point % 5 else "sequences"
    cfg = ModelConfig(n_classes=3, dim=2, depth=2 + point % 2, kind=kind,
                      normalize_levels=point % 4 < 2, tau=0.7, lags=(0.6,), inducing=inducing,
                      n_inducing=3)
    seqs = []
    for i in range(6):
        length = int(rng.integers(3, 6))
        seqs.append(Sequence(np.cumsum(rng.uniform(0.3, 1.0, length)),
                             rng.standard_normal((length, 2)), i % 3))
    model = SignatureGP.from_data(cfg, seqs, int(rng.integers(2**31)))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name == "q_sqrt_raw":
                p.copy_(torch.tril(p + 0.3 * torch.randn(p.shape, dtype=p.dtype,
                                                         generator=_gen(rng))))
            elif name in ("factors", "ind_states", "q_mu", "z0"):
                p.add_(0.5 * torch.randn(p.shape, dtype=p.dtype, generator=_gen(rng)))
            else:
                p.add_(0.3 * torch.randn(p.shape, dtype=p.dtype, generator=_gen(rng)))
    return model, SequenceData.from_sequences(seqs)


def _gen(rng):
    return torch.Generator().manual_seed(int(rng.integers(2**31)))


def gradient_check(n_points: int = 20, seed: int = 0, h: float = 1e-6) -> dict:
    """Central finite differences of the ELBO against autodiff, per parameter group."""
    rng = np.random.default_rng(seed)
    worst = {}
    for point in range(n_points):
        model, data = _small_model(rng, point)
        mc_seed = int(rng.integers(2**31))

        def objective():
            return model.elbo(data, len(data) * 2, 8, mc_seed)

        for p in model.parameters():
            p.requires_grad_(True)
        if not model.config.learn_tau:
            model.tau_raw.requires_grad_(False)
        model.zero_grad()
        objective().backward()
        with torch.no_grad():
            for name, p in model.named_parameters():
                if not p.requires_grad:
                    continue
                analytic = p.grad.detach().clone().reshape(-1)
                flat = p.view(-1)
                numeric = torch.empty_like(analytic)
                for j in range(flat.numel()):
                    orig = flat[j].item()
                    flat[j] = orig + h
                    up = objective().item()
                    flat[j] = orig - h
                    down = objective().item()
                    flat[j] = orig
                    numeric[j] = (up - down) / (2 * h)
                if name == "q_sqrt_raw":
                    # only the lower triangle is a free parameter
                    mask = torch.tril(torch.ones_like(p)).reshape(-1).bool()
                    analytic, numeric = analytic[mask], numeric[mask]
                denom = max(float(analytic.norm()), float(numeric.norm()), 1e-8)
                err = float((analytic - numeric).norm()) / denom
                worst[name] = max(worst.get(name, 0.0), err)
    return {"max_rel_err": max(worst.values()), "per_group": worst}


def kl_check(n_states: int = 50, seed: int = 0) -> dict:
    """kl_whitened against the textbook Gaussian KL formula."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_states):
        n, C = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        mu = rng.standard_normal((n, C))
        L = np.tril(rng.standard_normal((C, n, n)), -1)
        idx = np.arange(n)
        L[:, idx, idx] = rng.uniform(0.3, 2.0, (C, n))
        fast = float(svgp.kl_whitened(torch.from_numpy(mu), torch.from_numpy(L)))
        ref = 0.0
        for c in range(C):
            S = L[c] @ L[c].T
            ref += 0.5 * (np.trace(S) + mu[:, c] @ mu[:, c] - n - np.linalg.slogdet(S)[1])
        worst = max(worst, abs(fast - ref))
    prior = svgp.VariationalState.prior(4, 3)
    at_prior = float(svgp.kl_whitened(torch.from_numpy(prior.mu), torch.from_numpy(prior.L)))
    return {"max_abs_err": worst, "at_prior": at_prior}


def run_all(seed: int = 0, report=print) -> bool:
    checks = []
    with _quiet():
        r = oracle_equivalence(seed=seed)
        checks.append(("oracle equivalence", r["max_rel_err"] <= ORACLE_RTOL,
                       f"max rel err {r['max_rel_err']:.2e} in {r['seconds']:.1f}s"))
        r = refinement(seed=seed)
        checks.append(("straight-line refinement", r["max_rel_err"] <= REFINEMENT_RTOL and r["converging"],
                       f"max rel err {r['max_rel_err']:.2e}"))
        r = invariance(seed=seed)
        ok = max(r["duplicate"], r["padding"], r["relabel"]) <= INVARIANCE_RTOL and r["scale"] <= SCALE_RTOL
        checks.append(("invariances", ok, ", ".join(f"{k} {v:.1e}" for k, v in r.items())))
        r = psd(seed=seed)
        checks.append(("positive semi-definiteness",
                       min(r["min_ratio_xx"], r["min_ratio_joint"]) >= -PSD_RATIO,
                       f"min eig ratio xx {r['min_ratio_xx']:.1e}, joint {r['min_ratio_joint']:.1e}"))
        r = gradient_check(seed=seed)
        checks.append(("ELBO gradients", r["max_rel_err"] <= GRAD_RTOL,
                       f"max rel err {r['max_rel_err']:.1e}"))
        r = kl_check(seed=seed)
        checks.append(("KL divergence", r["max_abs_err"] <= KL_ATOL and r["at_prior"] == 0.0,
                       f"max err {r['max_abs_err']:.1e}, at prior {r['at_prior']}"))
    for name, ok, detail in checks:
        report(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all(ok for _, ok, _ in checks)
