"""Operator surface: pretrain, eval, attack-bench, gradcheck.

Exit codes: 0 ok, 1 usage, 2 config/format, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import yaml

from .attacks import METHODS, AttackConfig, craft_adversarial, perturbation_report
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (RunConfig, apply_overrides, dump_config, load_config,
                     load_config_file, run_id, with_seed)
from .data import Dataset, load_cifar10_split, make_synthetic
from .errors import (ConfigError, ContractError, DataFormatError, NumericError)
from .evaluate import default_k, extract_features, knn_eval, linear_probe
from .gradcheck import run_gradcheck
from .metrics import MetricsWriter
from .rng import stream
from .trainer import pretrain

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_run_config(args) -> RunConfig:
    cfg = load_config_file(args.config) if args.config else RunConfig()
    overrides: dict[str, object] = {}
    direct = {
        "seed": "seed",
        "out": "out_dir",
        "epochs": "train.epochs",
        "alpha": "train.alpha",
        "batch_size": "train.batch_size",
        "epsilon": "train.attack.epsilon",
        "dataset": "data.dataset",
        "subset": "data.subset",
        "data_dir": "data.data_dir",
    }
    for attr, key in direct.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        overrides[key.strip()] = yaml.safe_load(raw)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return with_seed(cfg, cfg.seed)


def _load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.dataset == "cifar10":
        train = load_cifar10_split(d.data_dir, "train", subset=d.subset or 5000)
        test = load_cifar10_split(d.data_dir, "test", subset=(d.subset or 5000) // 5)
        return train, test
    if d.dataset == "synthetic":
        train = make_synthetic(d.classes, d.per_class, d.image_size, d.noise,
                               seed=cfg.seed)
        test = make_synthetic(d.classes, d.test_per_class, d.image_size, d.noise,
                              seed=cfg.seed + 1)
        return train, test
    raise ConfigError(f"unknown dataset {d.dataset!r}")


def _prepare_out_dir(cfg: RunConfig, force: bool) -> Path:
    out = Path(cfg.out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise OSError(f"output directory {out} exists; pass --force to reuse it")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pretrain(args) -> int:
    cfg = _load_run_config(args)
    out = _prepare_out_dir(cfg, args.force)
    echo = dump_config(cfg)
    (out / "config.echo").write_text(echo, encoding="utf-8")
    train_set, _ = _load_datasets(cfg)
    if train_set.flat_dim != cfg.encoder.input_dim:
        raise ConfigError(
            f"encoder.input_dim={cfg.encoder.input_dim} but dataset images "
            f"flatten to {train_set.flat_dim}")
    with MetricsWriter(out / "metrics.jsonl", run_id(cfg)) as sink:
        state = pretrain(train_set, cfg.train, cfg.encoder, sink=sink)
    save_checkpoint(state.encoder, out / "encoder.ckpt")
    print(f"pretrained {cfg.train.epochs} epochs over {len(train_set)} images; "
          f"checkpoint at {out / 'encoder.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    encoder = load_checkpoint(args.checkpoint)
    train_set, test_set = _load_datasets(cfg)
    if train_set.flat_dim != encoder.config.input_dim:
        raise ConfigError(
            f"checkpoint expects input_dim={encoder.config.input_dim}, dataset "
            f"flattens to {train_set.flat_dim}")
    train_bank = extract_features(train_set, encoder)
    test_bank = extract_features(test_set, encoder)
    if args.method == "knn":
        k = args.k if args.k is not None else default_k(len(train_bank))
        report = knn_eval(train_bank, test_bank, k=k,
                          temperature=args.knn_temperature,
                          weighted=not args.majority_vote)
    else:
        report = linear_probe(train_bank, test_bank, epochs=args.probe_epochs,
                              lr=args.probe_lr, seed=cfg.seed)
    print(f"{report.method} accuracy: {report.accuracy:.4f}")
    for c in sorted(report.per_class_accuracy):
        print(f"  class {c}: {report.per_class_accuracy[c]:.4f}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with MetricsWriter(Path(args.out) / "metrics.jsonl", run_id(cfg)) as sink:
            sink({"step": 0, "epoch": 0, "metric": f"{report.method}_accuracy",
                  "value": report.accuracy, "config": report.config})
    return EXIT_OK


def cmd_attack_bench(args) -> int:
    cfg = _load_run_config(args)
    encoder = load_checkpoint(args.checkpoint)
    train_set, _ = _load_datasets(cfg)
    methods = [m.strip() for m in args.methods.split(",")]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown attack method {m!r}")
    epsilons = [float(e) for e in args.epsilon_list.split(",")]
    rng = stream(cfg.seed, "attack")
    batch_size = args.batch_size or cfg.train.batch_size
    batches = []
    for _ in range(args.batches):
        idx = rng.choice(len(train_set), size=batch_size, replace=False)
        batches.append(train_set.images[idx].reshape(batch_size, -1))

    sink = None
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        sink = MetricsWriter(Path(args.out) / "metrics.jsonl", run_id(cfg))
    print(f"{'method':>8} {'eps':>6} {'loss_before':>12} {'loss_after':>12} "
          f"{'gap':>10} {'linf':>8}")
    results = {}
    for method in methods:
        for eps in epsilons:
            attack = dataclasses.replace(
                cfg.train.attack or AttackConfig(), method=method, epsilon=eps)
            befores, afters, linfs = [], [], []
            for i, batch in enumerate(batches):
                adv = craft_adversarial(batch, encoder, cfg.train.loss, attack,
                                        rng=stream(cfg.seed, "attack", i))
                rep = perturbation_report(adv)
                befores.append(adv.loss_before)
                afters.append(adv.loss_after)
                linfs.append(rep["linf_norm"])
            row = {
                "method": method, "epsilon": eps,
                "loss_before": float(np.mean(befores)),
                "loss_after": float(np.mean(afters)),
                "linf": float(np.max(linfs)),
            }
            results[(method, eps)] = row
            print(f"{method:>8} {eps:>6.3f} {row['loss_before']:>12.5f} "
                  f"{row['loss_after']:>12.5f} "
                  f"{row['loss_after'] - row['loss_before']:>10.5f} {row['linf']:>8.4f}")
            if sink is not None:
                sink({"step": 0, "epoch": 0, "metric": "attack_bench", **row})
    if sink is not None:
        sink.close()
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(scope=args.scope, instances=args.instances,
                            corrupt_op=args.corrupt_op)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:>20}: {status} (worst |err| {r.worst_error:.3e}, "
              f"tol {r.worst_tolerance:.3e}, {r.instances} instances)")
    if failed:
        worst = max(failed, key=lambda r: r.worst_error - r.worst_tolerance)
        print(f"gradcheck FAILED; worst offender: {worst.name}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="clae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--dataset", choices=["cifar10", "synthetic"])
        p.add_argument("--subset", type=int, help="first N records per split")
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-key config override (repeatable)")

    p = sub.add_parser("pretrain", help="run adversarial contrastive pretraining")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--force", action="store_true",
                   help="allow writing into an existing output directory")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="score a checkpoint with kNN or a linear probe")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=["knn", "probe"], default="knn")
    p.add_argument("--k", type=int)
    p.add_argument("--knn-temperature", type=float, default=0.1)
    p.add_argument("--majority-vote", action="store_true")
    p.add_argument("--probe-epochs", type=int, default=100)
    p.add_argument("--probe-lr", type=float, default=0.1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack-bench",
                       help="compare attack methods and budgets on fixed batches")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--methods", default="fgsm,random")
    p.add_argument("--epsilon", dest="epsilon_list", default="0.03")
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_attack_bench)

    p = sub.add_parser("gradcheck", help="finite-difference verification suites")
    p.add_argument("--scope", choices=["losses", "encoder", "attack", "all"],
                   default="all")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--corrupt-op", dest="corrupt_op",
                   help=argparse.SUPPRESS)  # fault-injection hook for tests
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataFormatError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError,) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
