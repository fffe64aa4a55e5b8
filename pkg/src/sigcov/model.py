"""Trainable sparse GP classifier with signature covariances.

Inducing variables live in the augmented state space (unscaled): rank-1
inducing tensors store their factors, inducing sequences store their states.
Both get the same per-coordinate scaling as the data before any kernel call.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn.functional import softplus

from . import sigkernel as sk
from . import svgp
from .errors import InvalidInputError
from .sequences import AugmentedSequence, augment_tensors, pad_sequences
from .static import StaticKernelParams, init_lengthscales

CHECKPOINT_VERSION = 1
EVAL_CHUNK = 256


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    dim: int
    depth: int = 4
    kind: str = "rbf"
    normalize_levels: bool = False
    tau: float = 1.0  # 0 keeps the time coordinate switched off for good
    lags: tuple = ()
    inducing: str = "tensors"
    n_inducing: int = 500
    inducing_length: Optional[int] = None  # inducing sequences only; defaults to depth + 1

    def __post_init__(self):
        object.__setattr__(self, "lags", tuple(float(s) for s in self.lags))
        if self.n_classes < 2:
            raise InvalidInputError("need at least two classes")
        if self.depth < 1 or self.n_inducing < 1 or self.dim < 1:
            raise InvalidInputError("depth, dim and n_inducing must be positive")
        if self.kind not in ("linear", "rbf"):
            raise InvalidInputError(f"unknown static kernel {self.kind!r}")
        if self.inducing not in ("tensors", "sequences"):
            raise InvalidInputError(f"unknown inducing variant {self.inducing!r}")
        if self.tau < 0 or any(s <= 0 for s in self.lags):
            raise InvalidInputError("tau must be non-negative and lags positive")
        if self.inducing_length is None:
            object.__setattr__(self, "inducing_length", self.depth + 1)
        if self.inducing_length < 2:
            raise InvalidInputError("inducing sequences need at least two states")

    @property
    def aug_dim(self) -> int:
        return 1 + self.dim * (1 + len(self.lags))

    @property
    def learn_tau(self) -> bool:
        return self.tau > 0


@dataclass
class SequenceData:
    """Padded tensors for a list of labelled sequences."""

    times: torch.Tensor
    values: torch.Tensor
    lengths: torch.Tensor
    labels: torch.Tensor

    @classmethod
    def from_sequences(cls, seqs) -> "SequenceData":
        times, values, lengths = pad_sequences(list(seqs))
        labels = torch.tensor([-1 if s.label is None else int(s.label) for s in seqs])
        return cls(times, values, lengths, labels)

    def __len__(self):
        return len(self.lengths)

    def take(self, idx) -> "SequenceData":
        idx = torch.as_tensor(idx, dtype=torch.long)
        L = int(self.lengths[idx].max())
        return SequenceData(self.times[idx, :L], self.values[idx, :L], self.lengths[idx],
                            self.labels[idx])


class SignatureGP(nn.Module):
    VARIATIONAL = ("q_mu", "q_sqrt_raw", "z0", "factors", "ind_states")
    SIGMA = ("sigma_prime_raw",)

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        f64 = dict(dtype=torch.float64)
        self.sigma_prime_raw = nn.Parameter(torch.full((c.depth + 1,), float(inv_softplus(1.0)), **f64))
        self.beta_raw = nn.Parameter(torch.tensor(float(inv_softplus(1.0)), **f64))
        self.tau_raw = nn.Parameter(torch.tensor(float(inv_softplus(max(c.tau, 1e-12))), **f64),
                                    requires_grad=c.learn_tau)
        self.lags_raw = nn.Parameter(torch.as_tensor(inv_softplus(np.array(c.lags, dtype=float)).reshape(-1)))
        if c.kind == "rbf":
            self.lengthscales_raw = nn.Parameter(torch.full((c.dim,), float(inv_softplus(1.0)), **f64))
        else:
            self.register_parameter("lengthscales_raw", None)
        n, D = c.n_inducing, c.aug_dim
        if c.inducing == "tensors":
            self.z0 = nn.Parameter(torch.ones(n, **f64))
            self.factors = nn.Parameter(torch.zeros(n, sk.n_factors(c.depth), D, **f64))
            self.register_parameter("ind_states", None)
        else:
            self.register_parameter("z0", None)
            self.register_parameter("factors", None)
            self.ind_states = nn.Parameter(torch.zeros(n, c.inducing_length, D, **f64))
        self.q_mu = nn.Parameter(torch.zeros(n, c.n_classes, **f64))
        self.q_sqrt_raw = nn.Parameter(
            torch.diag_embed(torch.full((c.n_classes, n), float(inv_softplus(1.0)), **f64)))

    # -- constrained views ------------------------------------------------------

    @property
    def tau(self) -> torch.Tensor:
        if not self.config.learn_tau:
            return torch.zeros((), dtype=torch.float64)
        return softplus(self.tau_raw)

    @property
    def lags(self) -> torch.Tensor:
        return softplus(self.lags_raw)

    @property
    def sigma2(self) -> torch.Tensor:
        return (softplus(self.beta_raw) * softplus(self.sigma_prime_raw)) ** 2

    @property
    def lengthscales(self) -> Optional[torch.Tensor]:
        return None if self.lengthscales_raw is None else softplus(self.lengthscales_raw)

    @property
    def q_sqrt(self) -> torch.Tensor:
        raw = self.q_sqrt_raw
        return torch.tril(raw, -1) + torch.diag_embed(softplus(torch.diagonal(raw, dim1=-2, dim2=-1)))

    def feature_scales(self) -> torch.Tensor:
        D = self.config.aug_dim
        if self.lengthscales_raw is None:
            return torch.ones(D, dtype=torch.float64)
        inv = 1.0 / self.lengthscales
        return torch.cat([torch.ones(1, dtype=torch.float64), inv.repeat(1 + len(self.config.lags))])

    # -- kernel blocks ----------------------------------------------------------

    def augmented(self, data: SequenceData) -> torch.Tensor:
        """Unscaled augmented states (n, L, D)."""
        return augment_tensors(data.times, data.values, data.lengths, self.tau, self.lags)

    def inducing_covariance(self, scales=None) -> torch.Tensor:
        c = self.config
        scales = self.feature_scales() if scales is None else scales
        if c.inducing == "tensors":
            return sk.k_zz(self.z0, self.factors * scales, self.sigma2, c.depth, c.kind)
        Z = self.ind_states * scales
        return sk.k_xx(Z, Z, self.sigma2, c.depth, c.kind, c.normalize_levels)

    def marginals(self, data: SequenceData, chol=None):
        c = self.config
        scales = self.feature_scales()
        if chol is None:
            chol = svgp.cholesky_with_jitter(self.inducing_covariance(scales))
        X = self.augmented(data) * scales
        x_sq = sk.variance_levels(X, c.depth, c.kind)
        if c.inducing == "tensors":
            k_zx = sk.k_zx(self.z0, self.factors * scales, X, self.sigma2, c.depth, c.kind,
                           c.normalize_levels, x_sq=x_sq)
        else:
            k_zx = sk.k_xx(self.ind_states * scales, X, self.sigma2, c.depth, c.kind,
                           c.normalize_levels, y_sq=x_sq)
        k_xx = sk.k_x(X, self.sigma2, c.depth, c.kind, c.normalize_levels, x_sq=x_sq)
        return svgp.marginal_q(chol, k_zx, k_xx, self.q_mu, self.q_sqrt)

    def elbo(self, batch: SequenceData, n_total: int, n_mc: int, seed: int) -> torch.Tensor:
        mean, var = self.marginals(batch)
        return svgp.elbo(mean, var, batch.labels, self.q_mu, self.q_sqrt, n_total, n_mc, seed)

    @torch.no_grad()
    def evaluate(self, data: SequenceData, n_mc: int, seed: int, chunk: int = EVAL_CHUNK) -> dict:
        """ELBO (full data, fixed draws), accuracy, mean nlpp and class probabilities."""
        chol = svgp.cholesky_with_jitter(self.inducing_covariance())
        ell, probs, nlpp = [], [], []
        for start in range(0, len(data), chunk):
            part = data.take(torch.arange(start, min(start + chunk, len(data))))
            mean, var = self.marginals(part, chol=chol)
            labelled = bool((part.labels >= 0).all())
            if labelled:
                ell.append(svgp.expected_log_lik(mean, var, part.labels, n_mc, seed + start).sum())
            p, nl = svgp.predict(mean, var, n_mc, seed + start, part.labels if labelled else None)
            probs.append(p)
            if nl is not None:
                nlpp.append(nl)
        probs = torch.cat(probs)
        out = {"probs": probs.numpy()}
        if nlpp:
            kl = svgp.kl_whitened(self.q_mu, self.q_sqrt)
            out["elbo"] = float(sum(ell) - kl)
            out["nlpp"] = float(torch.cat(nlpp).mean())
            out["accuracy"] = float((probs.argmax(-1) == data.labels).double().mean())
        return out

    # -- parameter bookkeeping --------------------------------------------------

    def named_groups(self) -> dict:
        groups = {"variational": [], "hyper": [], "sigma": []}
        for name, p in self.named_parameters():
            if name in self.VARIATIONAL:
                groups["variational"].append(name)
            elif name in self.SIGMA:
                groups["sigma"].append(name)
            elif name != "tau_raw" or self.config.learn_tau:
                groups["hyper"].append(name)
        return groups

    def hyper_digest(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            if name not in self.VARIATIONAL:
                h.update(name.encode())
                h.update(p.detach().numpy().tobytes())
        return h.hexdigest()

    def kernel_params(self) -> sk.SigKernelParams:
        ls = self.lengthscales
        static = StaticKernelParams(self.config.kind,
                                    None if ls is None else tuple(ls.detach().numpy()))
        with torch.no_grad():
            return sk.SigKernelParams(
                depth=self.config.depth,
                sigma_prime=tuple(softplus(self.sigma_prime_raw).numpy()),
                beta=float(softplus(self.beta_raw)), tau=float(self.tau),
                lags=tuple(self.lags.numpy()), normalize_levels=self.config.normalize_levels,
                static=static)

    def inducing_tensors(self) -> list:
        if self.config.inducing != "tensors":
            raise InvalidInputError("model uses inducing sequences")
        z0 = self.z0.detach().numpy()
        F = self.factors.detach().numpy()
        return [sk.InducingTensor.from_factors(z0[i], F[i], self.config.depth) for i in range(len(z0))]

    def inducing_sequences(self) -> list:
        if self.config.inducing != "sequences":
            raise InvalidInputError("model uses inducing tensors")
        return [AugmentedSequence(s) for s in self.ind_states.detach().numpy()]

    def variational_state(self) -> svgp.VariationalState:
        with torch.no_grad():
            return svgp.VariationalState(self.q_mu.numpy().copy(), self.q_sqrt.numpy().copy())

    def snapshot(self) -> dict:
        return {k: v.detach().clone() for k, v in self.state_dict().items()}

    def restore(self, snap: dict):
        self.load_state_dict(snap)

    # -- construction -----------------------------------------------------------

    @classmethod
    def from_data(cls, config: ModelConfig, seqs, seed: int, hyper_from: "SignatureGP" = None):
        from .trainer import init_inducing_tensors, sample_windows

        model = cls(config)
        if hyper_from is not None:
            with torch.no_grad():
                for name, p in hyper_from.named_parameters():
                    if name not in cls.VARIATIONAL:
                        getattr(model, name).copy_(p)
        elif config.kind == "rbf":
            pooled = np.concatenate([s.values for s in seqs])
            ls = init_lengthscales(pooled, d=config.dim, seed=seed)
            with torch.no_grad():
                model.lengthscales_raw.copy_(torch.from_numpy(inv_softplus(ls)))
        data = SequenceData.from_sequences(seqs)
        with torch.no_grad():
            aug = model.augmented(data).numpy()
        aug = [AugmentedSequence(aug[i, :int(n)]) for i, n in enumerate(data.lengths)]
        with torch.no_grad():
            if config.inducing == "tensors":
                Z = init_inducing_tensors(aug, config.n_inducing, config.depth, seed)
                model.z0.copy_(torch.tensor([z.z0 for z in Z], dtype=torch.float64))
                model.factors.copy_(torch.from_numpy(np.stack([z.factors() for z in Z])))
            else:
                windows = sample_windows([len(a) for a in aug], config.n_inducing,
                                         config.inducing_length, seed)
                states = []
                for i, start, w in windows:
                    vals = aug[i].values[start:start + w]
                    # windows shorter than the stored length are padded with their last state
                    pad = np.repeat(vals[-1:], config.inducing_length - w, axis=0)
                    states.append(np.concatenate([vals, pad]))
                model.ind_states.copy_(torch.from_numpy(np.stack(states)))
        return model

    # -- persistence ------------------------------------------------------------

    def save(self, path, extra: Optional[dict] = None):
        meta = {"version": CHECKPOINT_VERSION, "config": asdict(self.config), "extra": extra or {}}
        arrays = {name: t.detach().numpy() for name, t in self.state_dict().items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as npz:
            meta = json.loads(str(npz["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise InvalidInputError(f"unsupported checkpoint version {meta.get('version')}")
            cfg = meta["config"]
            cfg["lags"] = tuple(cfg["lags"])
            model = cls(ModelConfig(**cfg))
            state = {k: torch.from_numpy(npz[k].copy()) for k in npz.files if k != "__meta__"}
        model.load_state_dict(state)
        return model, meta["extra"]
