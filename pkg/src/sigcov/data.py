"""Datasets: jsonl ingestion, normalization and synthetic tasks.

One record per line::

    {"label": 1, "times": [0.0, 0.5, ...], "values": [[x1, x2], ...], "split": "test"}

``times`` defaults to 0, 1, 2, ...; ``split`` (``train``/``test``) is optional.
Files ending in ``.gz`` are read and written gzip-compressed.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .sequences import Sequence

SYNTHETIC_KINDS = ("drift2", "phase2", "order3")


@dataclass(frozen=True, eq=False)
class Dataset:
    train: list
    test: list = field(default_factory=list)
    n_classes: int = 0
    dim: int = 0
    stats: dict = None  # {"mean": [...], "std": [...]} once normalized

    def __post_init__(self):
        seqs = list(self.train) + list(self.test)
        if not self.train:
            raise InvalidInputError("empty training set")
        dims = {s.dim for s in seqs}
        if len(dims) != 1:
            raise InvalidInputError(f"inconsistent state dimensions {sorted(dims)}")
        labels = [s.label for s in seqs if s.label is not None]
        n_classes = self.n_classes or (max(labels) + 1 if labels else 0)
        if any(not 0 <= l < n_classes for l in labels):
            raise InvalidInputError(f"labels must lie in [0, {n_classes})")
        object.__setattr__(self, "n_classes", int(n_classes))
        object.__setattr__(self, "dim", dims.pop())


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def read_records(path):
    """Yield ``(Sequence, split)`` pairs from a jsonl file."""
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                values = np.asarray(rec["values"], dtype=np.float64)
                if values.ndim == 1:
                    values = values[:, None]
                times = rec.get("times")
                times = np.arange(len(values), dtype=np.float64) if times is None else times
                label = rec.get("label")
                seq = Sequence(times, values, None if label is None else int(label))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
            yield seq, rec.get("split", "train")


def load(path, test_path=None, fmt: str = "jsonl") -> Dataset:
    if fmt != "jsonl":
        raise InvalidInputError(f"unsupported format {fmt!r}")
    train, test = [], []
    dim = None
    sources = [(path, None)] + ([(test_path, "test")] if test_path else [])
    for src, forced in sources:
        for lineno, (seq, split) in enumerate(read_records(src), start=1):
            if dim is None:
                dim = seq.dim
            elif seq.dim != dim:
                raise InvalidInputError(f"{src}: record {lineno} has dimension {seq.dim}, expected {dim}")
            split = forced or split
            if split not in ("train", "test"):
                raise InvalidInputError(f"{src}: record {lineno} has unknown split {split!r}")
            (test if split == "test" else train).append(seq)
    return Dataset(train, test)


def save(ds: Dataset, path):
    with _open(path, "w") as fh:
        for split, seqs in (("train", ds.train), ("test", ds.test)):
            for s in seqs:
                rec = {"label": s.label, "times": s.times.tolist(), "values": s.values.tolist(),
                       "split": split}
                fh.write(json.dumps(rec) + "\n")


def _apply(seqs, mean, std):
    return [Sequence(s.times, (s.values - mean) / std, s.label) for s in seqs]


def normalize(ds: Dataset, stats: dict = None) -> Dataset:
    """Zero mean, unit variance per dimension, fitted on the pooled training observations."""
    if stats is None:
        pooled = np.concatenate([s.values for s in ds.train])
        mean = pooled.mean(axis=0)
        std = pooled.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        stats = {"mean": mean.tolist(), "std": std.tolist()}
    mean, std = np.asarray(stats["mean"]), np.asarray(stats["std"])
    return Dataset(_apply(ds.train, mean, std), _apply(ds.test, mean, std), ds.n_classes,
                   ds.dim, stats)


def rescale_times(seqs) -> list:
    """Map each sequence's timestamps affinely onto [0, 1] (length-1 sequences go to 0)."""
    out = []
    for s in seqs:
        span = s.times[-1] - s.times[0]
        t = (s.times - s.times[0]) / span if span > 0 else np.zeros_like(s.times)
        out.append(Sequence(t, s.values, s.label))
    return out


# -- synthetic tasks -------------------------------------------------------------

def _lengths(rng, n):
    return rng.integers(10, 31, size=n)


def _drift2(rng, label, length):
    v = np.array([1.0, 0.5]) * (1 if label == 0 else -1)
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 1.5, length - 1))])
    values = np.outer(times / max(times[-1], 1.0), v) + 0.3 * rng.standard_normal((length, 2))
    return times, values


def _phase2(rng, label, length):
    times = np.sort(rng.uniform(0, 2 * np.pi, length))
    times = times + 1e-6 * np.arange(length)
    f = np.sin if label == 0 else np.cos
    values = f(times) + 0.1 * rng.standard_normal(length)
    return times, values[:, None]


# cluster centres visited by order3; the classes are the three cyclic orders
_ORDER3_CENTRES = np.array([[1.0, 0.0], [-0.5, 0.866], [-0.5, -0.866]])
_ORDER3_CYCLES = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


def _order3_template(rng, length):
    """Values for one sequence: three equally long blocks around the three centres."""
    sizes = np.full(3, length // 3)
    sizes[: length % 3] += 1
    blocks = [c + 0.15 * rng.standard_normal((k, 2)) for c, k in zip(_ORDER3_CENTRES, sizes)]
    return blocks


def make_synthetic(kind: str, n: int, seed: int, n_test: int = None) -> Dataset:
    """Balanced synthetic classification task; ``n`` training and ``n_test`` (default ``n``) test sequences.

    ``order3`` uses one value template per group of three sequences, permuted
    into each class's visiting order, so all classes share the same unordered
    multiset of values and only their order differs.
    """
    if kind not in SYNTHETIC_KINDS:
        raise InvalidInputError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    n_test = n if n_test is None else n_test
    rng = np.random.default_rng(seed)
    n_classes = 3 if kind == "order3" else 2

    def draw(count):
        labels = np.arange(count) % n_classes
        lengths = _lengths(rng, count)
        seqs = []
        if kind == "order3":
            for g in range(0, count, 3):
                length = int(lengths[g])
                blocks = _order3_template(rng, length)
                for label in range(min(3, count - g)):
                    values = np.concatenate([blocks[i] for i in _ORDER3_CYCLES[label]])
                    times = np.arange(length, dtype=np.float64)
                    seqs.append(Sequence(times, values, label))
            return seqs
        gen = _drift2 if kind == "drift2" else _phase2
        for label, length in zip(labels, lengths):
            times, values = gen(rng, int(label), int(length))
            seqs.append(Sequence(times, values, int(label)))
        return seqs

    return Dataset(draw(n), draw(n_test), n_classes)
