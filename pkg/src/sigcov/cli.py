"""``sigcov`` command line: synth, train, eval, gram, compare-inducing, verify."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as dio
from . import oracle
from . import sigkernel as sk
from . import verification
from .errors import InvalidInputError, OracleScaleExceeded
from .model import ModelConfig, SequenceData, SignatureGP
from .sequences import augment, subsample
from .static import StaticKernelParams, init_lengthscales
from .trainer import COMPARE_COLUMNS, TrainConfig, compare_inducing, init_inducing_tensors, train

MODEL_KEYS = {"depth", "kind", "normalize", "tau", "lags", "inducing", "inducing_length"}
DATA_KEYS = {"data", "test", "out", "rescale_times", "max_len"}
DEFAULTS = {"depth": 4, "kind": "rbf", "normalize": False, "tau": 1.0, "lags": [],
            "inducing": "tensors", "inducing_length": None, "test": None, "out": "run",
            "rescale_times": False, "max_len": None}

# flag name -> config key, for the options shared by several commands
FLAG_KEYS = {"nz": "n_inducing", "patience": "patience", "lr": "lr", "minibatch": "minibatch",
             "optimizer": "optimizer", "seed": "seed", "depth": "depth", "tau": "tau",
             "lags": "lags", "normalize": "normalize", "kind": "kind", "data": "data",
             "test": "test", "out": "out", "phase_epochs": "phase_epochs",
             "max_epochs": "max_epochs", "val_fraction": "val_fraction", "inducing": "inducing",
             "rescale_times": "rescale_times", "max_len": "max_len"}


class CliError(Exception):
    pass


def resolve_config(args) -> dict:
    """Defaults < config file < command-line flags; unknown file keys are rejected."""
    allowed = TrainConfig.keys() | MODEL_KEYS | DATA_KEYS
    cfg = dict(DEFAULTS)
    cfg.update({k: getattr(TrainConfig, k) for k in TrainConfig.keys()})
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: {exc}") from exc
        unknown = set(from_file) - allowed
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(from_file)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def split_config(cfg: dict, n_classes: int, dim: int):
    try:
        train_cfg = TrainConfig(**{k: cfg[k] for k in TrainConfig.keys()})
        model_cfg = ModelConfig(n_classes=n_classes, dim=dim, depth=int(cfg["depth"]),
                                kind=cfg["kind"], normalize_levels=bool(cfg["normalize"]),
                                tau=float(cfg["tau"]), lags=tuple(cfg["lags"]),
                                inducing=cfg["inducing"], n_inducing=int(cfg["n_inducing"]),
                                inducing_length=cfg["inducing_length"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from exc
    return train_cfg, model_cfg


def _parse_lags(text):
    return [float(s) for s in text.split(",") if s.strip()] if text else []


def prepare(seqs, rescale: bool, max_len):
    if max_len:
        seqs = [subsample(s, int(max_len)) for s in seqs]
    return dio.rescale_times(seqs) if rescale else list(seqs)


def load_dataset(cfg) -> dio.Dataset:
    for key in ("data", "test"):
        if cfg.get(key) and not Path(cfg[key]).exists():
            raise FileNotFoundError(cfg[key])
    if not cfg.get("data"):
        raise CliError("--data is required")
    return dio.load(cfg["data"], cfg.get("test"))


def preprocessing(extra: dict):
    """Rebuild the data transform stored with a checkpoint."""
    stats = extra.get("stats")

    def apply(ds):
        if stats is not None:
            ds = dio.normalize(ds, stats)
        return (prepare(ds.train, extra.get("rescale_times", False), extra.get("max_len")),
                prepare(ds.test, extra.get("rescale_times", False), extra.get("max_len")))
    return apply


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands ---------------------------------------------------------------------

def cmd_synth(args):
    ds = dio.make_synthetic(args.kind, args.n, args.seed, args.n_test)
    dio.save(ds, args.out)
    print(f"wrote {len(ds.train)} train / {len(ds.test)} test sequences to {args.out}")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    ds = dio.normalize(load_dataset(cfg))
    train_cfg, model_cfg = split_config(cfg, ds.n_classes, ds.dim)
    train_seqs = prepare(ds.train, cfg["rescale_times"], cfg["max_len"])
    test_seqs = prepare(ds.test, cfg["rescale_times"], cfg["max_len"])
    model, log = train(train_seqs, model_cfg, train_cfg, verbose=args.verbose)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    extra = {"stats": ds.stats, "rescale_times": bool(cfg["rescale_times"]),
             "max_len": cfg["max_len"], "train_config": train_cfg.__dict__}
    model.save(out / "checkpoint.npz", extra)
    log.to_csv(out / "trainlog.csv")
    eval_seqs = test_seqs or train_seqs
    metrics = model.evaluate(SequenceData.from_sequences(eval_seqs), train_cfg.n_mc_eval, train_cfg.seed)
    summary = {"split": "test" if test_seqs else "train", "n": len(eval_seqs),
               "accuracy": metrics["accuracy"], "nlpp": metrics["nlpp"],
               "epochs": log.rows[-1]["epoch"], "final_elbo": log.rows[-1]["elbo"]}
    _write_json(out / "metrics.json", summary)
    print(json.dumps(summary) if args.json else
          f"{summary['split']} accuracy {summary['accuracy']:.4f}  mean nlpp {summary['nlpp']:.4f}")
    return 0


def cmd_eval(args):
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(args.checkpoint)
    model, extra = SignatureGP.load(args.checkpoint)
    cfg = {"data": args.data, "test": args.test}
    ds = load_dataset(cfg)
    train_seqs, test_seqs = preprocessing(extra)(ds)
    seqs = test_seqs or train_seqs
    n_mc = extra.get("train_config", {}).get("n_mc_eval", 256)
    metrics = model.evaluate(SequenceData.from_sequences(seqs), n_mc, args.seed or 0)
    summary = {"split": "test" if test_seqs else "train", "n": len(seqs),
               "accuracy": metrics["accuracy"], "nlpp": metrics["nlpp"]}
    print(json.dumps(summary) if args.json else
          f"{summary['split']} accuracy {summary['accuracy']:.4f}  mean nlpp {summary['nlpp']:.4f}")
    return 0


def _gram_inputs(args):
    """Kernel parameters, inducing tensors and augmented sequences for ``gram``."""
    if args.checkpoint:
        model, extra = SignatureGP.load(args.checkpoint)
        params = model.kernel_params()
        ds = load_dataset({"data": args.data, "test": None})
        seqs, _ = preprocessing(extra)(ds)
        if model.config.inducing != "tensors" and args.block in ("zz", "zx"):
            raise CliError("checkpoint uses inducing sequences; only xx and diag are available")
        Z = model.inducing_tensors() if model.config.inducing == "tensors" else None
    else:
        cfg = resolve_config(args)
        ds = load_dataset(cfg)
        seqs = prepare(ds.train, False, cfg["max_len"])
        static = StaticKernelParams(cfg["kind"], None)
        if cfg["kind"] == "rbf":
            static = StaticKernelParams("rbf", tuple(init_lengthscales(
                np.concatenate([s.values for s in seqs]), seed=cfg["seed"])))
        params = sk.SigKernelParams(depth=int(cfg["depth"]), tau=float(cfg["tau"]),
                                    lags=tuple(cfg["lags"]), normalize_levels=bool(cfg["normalize"]),
                                    static=static)
        Z = None
    if args.limit:
        seqs = seqs[:args.limit]
    if args.max_len:
        seqs = prepare(seqs, False, args.max_len)
    X = [augment(s, params.tau, params.lags) for s in seqs]
    if Z is None and args.block in ("zz", "zx"):
        nz = args.nz or 10
        Z = init_inducing_tensors(X, nz, params.depth, args.seed or 0)
    return params, Z, X


def cmd_gram(args):
    params, Z, X = _gram_inputs(args)
    compute = {"zz": lambda: sk.cov_inducing(Z, params),
               "zx": lambda: sk.cov_cross(Z, X, params),
               "xx": lambda: sk.cov_sequences(X, None, params),
               "diag": lambda: sk.var_sequences(X, params)}
    block = compute[args.block]()
    out = Path(args.out or "gram.csv")
    block.to_csv(out)
    print(f"wrote {args.block} block {np.shape(block.values)} to {out}")
    if args.verify:
        try:
            ref = oracle.oracle_gram(args.block, params, Z=Z, X=X)
        except OracleScaleExceeded as exc:
            raise CliError(f"cannot verify: {exc}") from exc
        err = verification.rel_err(block.values, ref)
        ok = err <= verification.ORACLE_RTOL
        print(f"{'PASS' if ok else 'FAIL'}  oracle max rel err {err:.2e}")
        return 0 if ok else 1
    return 0


def cmd_compare(args):
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(args.checkpoint)
    base, extra = SignatureGP.load(args.checkpoint)
    ds = load_dataset({"data": args.data, "test": args.test})
    train_seqs, test_seqs = preprocessing(extra)(ds)
    cfg = TrainConfig(**{**extra.get("train_config", {}),
                         **({"lr": args.lr} if args.lr else {}),
                         **({"minibatch": args.minibatch} if args.minibatch else {})})
    grid = [int(v) for v in args.grid.split(",")]
    seeds = [(args.seed or 0) + i for i in range(args.seeds)]
    rows = compare_inducing(base, train_seqs, test_seqs or train_seqs, grid, seeds, args.epochs, cfg)
    out = Path(args.out or "compare.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    for n in grid:
        means = {v: np.mean([r["elbo"] for r in rows if r["n_inducing"] == n and r["variant"] == v])
                 for v in ("tensors", "sequences")}
        print(f"n_Z={n}: mean ELBO tensors {means['tensors']:.3f}, sequences {means['sequences']:.3f}")
    print(f"wrote {out}")
    return 0


def cmd_verify(args):
    return 0 if verification.run_all(seed=args.seed or 0) else 1


# -- parser ----------------------------------------------------------------------

def _common(p, model=True):
    p.add_argument("--data")
    p.add_argument("--test")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    if model:
        p.add_argument("--nz", type=int)
        p.add_argument("--depth", type=int)
        p.add_argument("--tau", type=float)
        p.add_argument("--lags", type=_parse_lags)
        p.add_argument("--normalize", action="store_true", default=None)
        p.add_argument("--kind", choices=("linear", "rbf"))


def build_parser():
    parser = argparse.ArgumentParser(prog="sigcov", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset as jsonl")
    p.add_argument("--kind", choices=dio.SYNTHETIC_KINDS, required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--n-test", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier")
    _common(p)
    p.add_argument("--optimizer", choices=("adam", "nadam"))
    p.add_argument("--lr", type=float)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--phase-epochs", dest="phase_epochs", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--inducing", choices=("tensors", "sequences"))
    p.add_argument("--rescale-times", dest="rescale_times", action="store_true", default=None)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p, model=False)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gram", help="export a covariance block as CSV")
    p.add_argument("block", choices=("zz", "zx", "xx", "diag"))
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--limit", type=int, help="use only the first N sequences")
    p.add_argument("--max-len", dest="max_len", type=int, help="subsample longer sequences")
    p.add_argument("--verify", action="store_true", help="compare with the brute-force reference")
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("compare-inducing", help="inducing tensors vs inducing sequences")
    _common(p, model=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", default="5,10,20")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float)
    p.add_argument("--minibatch", type=int)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run the self-check suites")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(args.threads or 1)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (CliError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
