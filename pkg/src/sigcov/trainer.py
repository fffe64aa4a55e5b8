"""Training schedule, inducing-variable initialization and the inducing-variant comparison.

Training runs in four phases:

1. hold out a stratified validation split;
2. fit the variational parameters with the kernel fixed (``phase_epochs``);
3. (a) fit everything except the per-level scalings, then (b) everything,
   both with early stopping on validation nlpp and best-checkpoint restore;
4. put the validation data back and refit the variational parameters.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import torch

from .errors import InvalidInputError, TrainingDivergedError
from .model import ModelConfig, SequenceData, SignatureGP
from .optim import Optimizer
from .sequences import Sequence
from .sigkernel import InducingTensor

LOG_COLUMNS = ("epoch", "phase", "elbo", "val_nlpp", "val_accuracy", "wall_time")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    minibatch: int = 50
    patience: int = 500
    n_inducing: int = 500
    optimizer: str = "nadam"
    phase_epochs: int = 500
    seed: int = 0
    val_fraction: float = 0.2
    max_epochs: int = 5000  # cap on each early-stopping phase
    n_mc_train: int = 32
    n_mc_eval: int = 256

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError("lr must be positive")
        if self.minibatch < 1 or self.patience < 1 or self.n_inducing < 1:
            raise InvalidInputError("minibatch, patience and n_inducing must be positive")
        if not 0 < self.val_fraction < 1:
            raise InvalidInputError("val_fraction must lie in (0, 1)")
        if self.optimizer not in ("adam", "nadam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.phase_epochs < 0 or self.max_epochs < 1 or self.n_mc_train < 1 or self.n_mc_eval < 1:
            raise InvalidInputError("epoch counts and sample counts must be positive")

    @classmethod
    def keys(cls):
        return {f.name for f in fields(cls)}


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def append(self, **row):
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epoch index must increase")
        self.rows.append({k: row.get(k, float("nan")) for k in LOG_COLUMNS})

    def phase(self, name):
        return [r for r in self.rows if r["phase"] == name]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# -- inducing-variable initialization --------------------------------------------

def _values(seq):
    return seq.values


def init_inducing_tensors(train, n_inducing: int, depth: int, seed: int) -> list:
    """Rank-1 tensors whose level-m factors are m time-increasing observations of one random sequence.

    Sequences with fewer than m observations are sampled with replacement, so
    indices are then non-decreasing rather than strictly increasing.
    """
    if not train:
        raise InvalidInputError("empty training set")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_inducing):
        values = _values(train[rng.integers(len(train))])
        levels = []
        for m in range(1, depth + 1):
            idx = np.sort(rng.choice(len(values), m, replace=len(values) < m))
            levels.append(values[idx])
        out.append(InducingTensor(1.0, tuple(levels)))
    return out


def sample_windows(lengths, n_inducing: int, length: int, seed: int) -> list:
    """``(sequence index, start, width)`` of random contiguous windows, width clamped to the sequence."""
    if not len(lengths):
        raise InvalidInputError("empty training set")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_inducing):
        i = int(rng.integers(len(lengths)))
        w = min(length, int(lengths[i]))
        start = int(rng.integers(int(lengths[i]) - w + 1))
        out.append((i, start, w))
    return out


def init_inducing_sequences(train, n_inducing: int, length: int, seed: int) -> list:
    windows = sample_windows([len(s) for s in train], n_inducing, length, seed)
    return [Sequence(train[i].times[s:s + w], train[i].values[s:s + w]) for i, s, w in windows]


# -- training loop ----------------------------------------------------------------

def stratified_split(labels, val_fraction: float, rng) -> tuple:
    labels = np.asarray(labels)
    train_idx, val_idx = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_val = int(round(val_fraction * len(idx)))
        n_val = min(max(n_val, 1), len(idx) - 1) if len(idx) > 1 else 0
        val_idx.extend(idx[:n_val])
        train_idx.extend(idx[n_val:])
    return np.sort(train_idx), np.sort(val_idx)


class _Streams:
    """Per-purpose generators derived from one master seed."""

    def __init__(self, seed: int):
        split, init, batch, mc = np.random.SeedSequence(seed).spawn(4)
        self.split = np.random.default_rng(split)
        self.init_seed = int(np.random.default_rng(init).integers(2**31))
        self.batch = np.random.default_rng(batch)
        self.mc = np.random.default_rng(mc)
        self.eval_seed = int(np.random.default_rng(seed).integers(2**31))


class Trainer:
    def __init__(self, model: SignatureGP, config: TrainConfig, streams: _Streams,
                 log: Optional[TrainLog] = None, verbose: bool = False):
        self.model = model
        self.config = config
        self.streams = streams
        self.log = log if log is not None else TrainLog()
        self.verbose = verbose
        self.epoch = self.log.rows[-1]["epoch"] if self.log.rows else 0
        self.started = time.perf_counter()

    def _evaluate(self, data, seed_offset=0):
        return self.model.evaluate(data, self.config.n_mc_eval, self.streams.eval_seed + seed_offset)

    def record(self, phase, train: SequenceData, val: Optional[SequenceData]):
        elbo = self._evaluate(train)["elbo"]
        v = self._evaluate(val, 1) if val is not None and len(val) else {}
        row = dict(epoch=self.epoch, phase=phase, elbo=elbo, val_nlpp=v.get("nlpp", float("nan")),
                   val_accuracy=v.get("accuracy", float("nan")),
                   wall_time=time.perf_counter() - self.started)
        self.log.append(**row)
        if self.verbose:
            print(f"[{phase}] epoch {self.epoch} elbo {elbo:.4f} val_nlpp {row['val_nlpp']:.4f} "
                  f"val_acc {row['val_accuracy']:.3f}", flush=True)
        return row

    def _diverged(self, phase, loss):
        diag = {"phase": phase, "epoch": self.epoch, "loss": float(loss)}
        with torch.no_grad():
            for name, p in self.model.named_parameters():
                diag[f"|{name}|"] = float(p.norm())
        raise TrainingDivergedError(f"non-finite ELBO in phase {phase} at epoch {self.epoch}", diag)

    def run_phase(self, phase: str, groups, train: SequenceData, val: Optional[SequenceData],
                  epochs: int, early_stopping: bool, record_every: int = 1):
        cfg = self.config
        names = [n for g in groups for n in self.model.named_groups()[g]]
        params = []
        for name, p in self.model.named_parameters():
            active = name in names
            p.requires_grad_(active)
            if active:
                params.append(p)
        opt = Optimizer(params, cfg.lr, cfg.optimizer)
        best_nlpp, best_state, wait = math.inf, None, 0
        n = len(train)
        for e in range(epochs):
            self.epoch += 1
            order = self.streams.batch.permutation(n)
            for start in range(0, n, cfg.minibatch):
                batch = train.take(order[start:start + cfg.minibatch])
                seed = int(self.streams.mc.integers(2**62))
                try:
                    loss = -self.model.elbo(batch, n, cfg.n_mc_train, seed)
                except FloatingPointError:
                    loss = torch.tensor(float("nan"))
                if not torch.isfinite(loss):
                    self._diverged(phase, loss)
                opt.zero_grad()
                loss.backward()
                try:
                    opt.step()
                except TrainingDivergedError:
                    self._diverged(phase, loss)
            if not early_stopping and (e + 1) % record_every and e + 1 < epochs:
                continue
            row = self.record(phase, train, val)
            if not math.isfinite(row["elbo"]):
                self._diverged(phase, row["elbo"])
            if early_stopping:
                if row["val_nlpp"] < best_nlpp:
                    best_nlpp, best_state, wait = row["val_nlpp"], self.model.snapshot(), 0
                else:
                    wait += 1
                    if wait >= cfg.patience:
                        break
        if early_stopping and best_state is not None:
            self.model.restore(best_state)
        for p in self.model.parameters():
            p.requires_grad_(True)
        if not self.model.config.learn_tau:
            self.model.tau_raw.requires_grad_(False)
        return best_nlpp


def train(seqs, model_config: ModelConfig, config: TrainConfig, verbose: bool = False):
    """Fit a model on labelled sequences; returns ``(model, log)``."""
    seqs = list(seqs)
    labels = np.array([s.label for s in seqs])
    if np.any(labels == None) or len(np.unique(labels)) < 2:  # noqa: E711
        raise InvalidInputError("training needs labelled sequences from at least two classes")
    streams = _Streams(config.seed)
    tr_idx, val_idx = stratified_split(labels.astype(int), config.val_fraction, streams.split)
    tr_seqs = [seqs[i] for i in tr_idx]
    model = SignatureGP.from_data(model_config, tr_seqs, streams.init_seed)
    train_data = SequenceData.from_sequences(tr_seqs)
    val_data = SequenceData.from_sequences([seqs[i] for i in val_idx])
    full_data = SequenceData.from_sequences(seqs)

    trainer = Trainer(model, config, streams, verbose=verbose)
    trainer.record("init", train_data, val_data)
    trainer.run_phase("2", ["variational"], train_data, val_data, config.phase_epochs, False)
    trainer.run_phase("3a", ["variational", "hyper"], train_data, val_data, config.max_epochs, True)
    trainer.run_phase("3b", ["variational", "hyper", "sigma"], train_data, val_data,
                      config.max_epochs, True)
    trainer.run_phase("4", ["variational"], full_data, None, config.phase_epochs, False)
    return model, trainer.log


def fit_variational(model: SignatureGP, seqs, config: TrainConfig, epochs: int,
                    record_every: int = 1) -> TrainLog:
    """Optimize only the variational parameters (kernel hyperparameters fixed) on all of ``seqs``."""
    streams = _Streams(config.seed)
    data = SequenceData.from_sequences(list(seqs))
    trainer = Trainer(model, config, streams)
    trainer.record("init", data, None)
    trainer.run_phase("variational", ["variational"], data, None, epochs, False, record_every)
    return trainer.log


COMPARE_COLUMNS = ("n_inducing", "variant", "seed", "elbo", "accuracy", "nlpp")


def compare_inducing(base: SignatureGP, train_seqs, test_seqs, grid, seeds, epochs: int,
                     config: TrainConfig) -> list:
    """Inducing tensors vs inducing sequences under the kernel hyperparameters of ``base``."""
    rows = []
    test = SequenceData.from_sequences(list(test_seqs))
    for n_inducing in grid:
        for variant in ("tensors", "sequences"):
            for seed in seeds:
                cfg = ModelConfig(**{**base.config.__dict__, "inducing": variant,
                                     "n_inducing": int(n_inducing)})
                model = SignatureGP.from_data(cfg, list(train_seqs), seed, hyper_from=base)
                run_cfg = TrainConfig(**{**config.__dict__, "seed": int(seed)})
                log = fit_variational(model, train_seqs, run_cfg, epochs, record_every=epochs)
                metrics = model.evaluate(test, config.n_mc_eval, int(seed))
                rows.append(dict(n_inducing=int(n_inducing), variant=variant, seed=int(seed),
                                 elbo=log.rows[-1]["elbo"], accuracy=metrics["accuracy"],
                                 nlpp=metrics["nlpp"]))
    return rows
