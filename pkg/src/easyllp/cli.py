"""Command-line interface.

Every command resolves its flags into a plain config dict, runs from that
dict alone and embeds it in the output, so ``easyllp replay OUTPUT --out NEW``
reproduces any output byte for byte.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import gen_fig2, gen_gaussian_blobs, load_csv, partition_into_bags, train_test_split, write_csv
from .estimators import ClassPrior
from .experiments import (
    METHODS,
    accuracy_sweep,
    format_table,
    loss_tracking,
    variance_sweep,
)
from .models import evaluate
from .oracle import (
    EstimatorKind,
    lemma_suite,
    oracle_expectations,
    random_distribution,
    random_table,
)
from .trainers import Adam, ErmConfig, PlainSgd, SgdConfig, erm_minibatch, sgd_pick_one, train_event_level

DEFAULT_KS = ",".join(str(2**r) for r in range(1, 11))
ALL_KINDS = ",".join(kind.value for kind in EstimatorKind)


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _choice_list(choices):
    def parse(text):
        values = [v.strip() for v in text.split(",") if v.strip()]
        bad = [v for v in values if v not in choices]
        if bad or not values:
            raise argparse.ArgumentTypeError(f"choose from {', '.join(choices)}; got {text!r}")
        return values

    return parse


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _add_dataset_flags(p, required):
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--csv", metavar="PATH", help="dataset CSV (header row, integer label column)")
    src.add_argument("--generator", choices=("blobs", "fig2"), help="synthetic dataset")
    p.add_argument("--label-column", default="-1", help="label column name or index (default: last)")
    p.add_argument("--no-header", action="store_true", help="CSV has no header row")
    p.add_argument("--n", type=int, default=10_000, help="generated examples (default 10000)")
    p.add_argument("--d", type=int, default=10, help="blobs feature dimension (default 10)")
    p.add_argument("--separation", type=float, default=3.29,
                   help="distance between blob centres (default 3.29, Bayes accuracy ~0.95)")
    p.add_argument("--positive-rate", type=float, default=0.5, help="blobs positive rate")
    p.add_argument("--data-seed", type=int, default=None, help="generator seed (default: --seed)")


def _dataset_config(args, default_generator=None):
    if args.csv is not None:
        return {
            "source": "csv",
            "path": args.csv,
            "label_column": args.label_column,
            "has_header": not args.no_header,
        }
    generator = args.generator or default_generator
    cfg = {
        "source": generator,
        "n": args.n,
        "seed": args.seed if args.data_seed is None else args.data_seed,
    }
    if generator == "blobs":
        cfg.update(d=args.d, separation=args.separation, positive_rate=args.positive_rate)
    return cfg


def _load_dataset(cfg):
    if cfg["source"] == "csv":
        dataset = load_csv(cfg["path"], cfg["label_column"], cfg["has_header"])
        return dataset, None
    rng = np.random.default_rng(cfg["seed"])
    if cfg["source"] == "fig2":
        return gen_fig2(cfg["n"], rng), 0.5
    ds = gen_gaussian_blobs(cfg["n"], cfg["d"], cfg["separation"], cfg["positive_rate"], rng)
    return ds, cfg["positive_rate"]


def _split(cfg):
    ds, population_rate = _load_dataset(cfg["dataset"])
    rng = np.random.default_rng([cfg["seed"], 1])
    train, test = train_test_split(ds, cfg["test_fraction"], rng)
    return train, test, population_rate


# ---------------------------------------------------------------------------
# commands: each maps a resolved config to output text
# ---------------------------------------------------------------------------


def _erm_config(cfg, seed):
    if cfg["optimizer"] == "adam":
        opt = Adam(lr=cfg["lr"])
    else:
        opt = PlainSgd(lr=cfg["lr"])
    return ErmConfig(epochs=cfg["epochs"], batch_bags=cfg["batch_bags"], optimizer=opt, seed=seed,
                     rebag_each_epoch=cfg.get("rebag", False))


def run_train(cfg):
    train, test, population_rate = _split(cfg)
    method = cfg["method"]
    if method == "event":
        report = train_event_level(train, _erm_config(cfg, cfg["seed"]))
        prior = None
    else:
        # the split is already in random order, so consecutive grouping is a random bagging
        bags = partition_into_bags(train, cfg["k"], shuffle=False)
        if cfg["prior"] == "true":
            prior = ClassPrior.binary(population_rate) if population_rate is not None else train.class_frequencies()
        else:
            prior = bags.estimate_prior()
        if method == "soft_erm":
            if cfg.get("rebag"):
                report = erm_minibatch(train, _erm_config(cfg, cfg["seed"]), prior=prior, k=cfg["k"])
            else:
                report = erm_minibatch(bags, _erm_config(cfg, cfg["seed"]), prior=prior)
        else:
            scfg = SgdConfig(
                mode="soft" if method == "soft_sgd" else "surrogate",
                step_scale=cfg["step_scale"],
                radius=cfg["radius"],
                seed=cfg["seed"],
                passes=max(cfg["epochs"], 1),
            )
            report = sgd_pick_one(bags, scfg, prior)
    train_metrics = evaluate(report.final_model, train)
    test_metrics = evaluate(report.final_model, test)
    out = {
        "config": cfg,
        "prior": None if prior is None else prior.p,
        "metrics": {
            "train_accuracy": train_metrics.accuracy,
            "train_loss": train_metrics.mean_loss,
            "test_accuracy": test_metrics.accuracy,
            "test_loss": test_metrics.mean_loss,
        },
        "model": report.final_model.to_dict(),
        "report": report.to_dict(),
    }
    return json.dumps(out, indent=2, sort_keys=True) + "\n", report.final_model


def run_variance(cfg):
    table = variance_sweep(ks=cfg["ks"], bags_per_point=cfg["bags_per_point"], kinds=cfg["kinds"],
                           seed=cfg["seed"])
    return format_table(table.columns, table.as_rows(), cfg, cfg["format"])


def run_oracle(cfg):
    rng = np.random.default_rng(cfg["seed"])
    columns = ("dist", "classes", "k", "check", "lhs", "rhs", "slack", "status")
    rows = []
    for i in range(cfg["n_dists"]):
        for C in (2, 3):
            D = random_distribution(rng, cfg["max_atoms"], C)
            G = random_table(rng, D, cfg["dim"])
            target = D.expectation(G)
            for k in range(1, cfg["kmax"] + 1):
                for kind in EstimatorKind:
                    err = float(np.max(np.abs(oracle_expectations(D, G, k, kind).mean - target)))
                    tol = 1e-10
                    rows.append((i, C, k, f"unbiased_{kind.value}", err, tol, tol - err,
                                 "PASS" if err <= tol else "FAIL"))
            if C == 2:
                for check in lemma_suite(D, G, cfg["kmax"]).checks:
                    rows.append((i, C, check.k, check.name, check.lhs, check.rhs, check.slack, check.status))
    return format_table(columns, rows, cfg, cfg["format"])


def run_track(cfg):
    ds, _ = _load_dataset(cfg["dataset"])
    ecfg = _erm_config(cfg, cfg["seed"])
    table = loss_tracking(ds, cfg["k"], cfg["epochs"], ecfg, cfg["replicas"], base_seed=cfg["seed"])
    return format_table(table.columns, table.as_rows(), dict(cfg, replica_seeds=table.seeds), cfg["format"])


def run_sweep(cfg):
    train, test, _ = _split(cfg)
    table = accuracy_sweep(
        train, test, ks=cfg["ks"], methods=cfg["methods"], replicas=cfg["replicas"], epochs=cfg["epochs"],
        erm_cfg=_erm_config(cfg, cfg["seed"]),
        sgd_cfg=SgdConfig(step_scale=cfg["step_scale"], radius=cfg["radius"]),
        base_seed=cfg["seed"], prior_source=cfg["prior"],
    )
    return format_table(table.columns, table.as_rows(), dict(cfg, replica_seeds=table.seeds), cfg["format"])



COMMANDS = {
    "train": run_train,
    "variance": run_variance,
    "oracle": run_oracle,
    "track": run_track,
    "sweep": run_sweep,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p, fmt_default="csv"):
    p.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    p.add_argument("--out", required=True, metavar="PATH", help="output file")
    p.add_argument("--format", choices=("csv", "json"), default=fmt_default)


def _add_trainer_flags(p, epochs):
    p.add_argument("--epochs", type=int, default=epochs, help=f"training rounds (default {epochs})")
    p.add_argument("--batch-bags", type=int, default=4, help="bags per ERM minibatch (default 4)")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=1e-2, help="ERM learning rate (default 0.01)")
    p.add_argument("--step-scale", type=float, default=1.0, help="SGD step scale c (default 1)")
    p.add_argument("--radius", type=float, default=10.0, help="SGD projection radius (default 10)")


def build_parser():
    parser = argparse.ArgumentParser(prog="easyllp", description="Learning from label proportions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    p.add_argument("--generator", choices=("blobs", "fig2"), default="blobs")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--separation", type=float, default=3.29)
    p.add_argument("--positive-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("train", help="train one model")
    _add_dataset_flags(p, required=True)
    p.add_argument("--k", type=int, default=32, help="bag size (default 32)")
    p.add_argument("--method", choices=METHODS, default="soft_erm")
    p.add_argument("--prior", choices=("true", "estimated"), default="estimated")
    p.add_argument("--rebag", action="store_true", help="soft_erm: new bags every epoch")
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--model-out", metavar="PATH", help="also write the model JSON here")
    _add_trainer_flags(p, 40)
    _add_common(p, "json")

    p = sub.add_parser("variance", help="Monte Carlo variance of the four estimators")
    p.add_argument("--ks", type=_int_list, default=_int_list(DEFAULT_KS))
    p.add_argument("--bags-per-point", type=int, default=10**5)
    p.add_argument("--kinds", type=_choice_list([k.value for k in EstimatorKind]),
                   default=ALL_KINDS.split(","))
    _add_common(p)

    p = sub.add_parser("oracle", help="exact unbiasedness and second-moment checks")
    p.add_argument("--kmax", type=int, default=5)
    p.add_argument("--n-dists", type=int, default=10)
    p.add_argument("--max-atoms", type=int, default=4)
    p.add_argument("--dim", type=int, default=2)
    _add_common(p)

    p = sub.add_parser("track", help="bag loss estimate vs true loss during training")
    _add_dataset_flags(p, required=False)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--replicas", type=int, default=30)
    _add_trainer_flags(p, 200)
    _add_common(p)

    p = sub.add_parser("sweep", help="best test accuracy vs bag size")
    _add_dataset_flags(p, required=False)
    p.add_argument("--ks", type=_int_list, default=_int_list(DEFAULT_KS))
    p.add_argument("--methods", type=_choice_list(METHODS), default=["event", "soft_erm"])
    p.add_argument("--replicas", type=int, default=30)
    p.add_argument("--prior", choices=("true", "estimated"), default="estimated")
    p.add_argument("--test-fraction", type=float, default=0.25)
    _add_trainer_flags(p, 40)
    _add_common(p)

    p = sub.add_parser("replay", help="re-run the config embedded in an output file")
    p.add_argument("source", metavar="OUTPUT", help="CSV or JSON file written by another command")
    p.add_argument("--out", required=True, metavar="PATH")
    return parser


def _trainer_config(args):
    return {
        "epochs": args.epochs,
        "batch_bags": args.batch_bags,
        "optimizer": args.optimizer,
        "lr": args.lr,
        "step_scale": args.step_scale,
        "radius": args.radius,
    }


def resolve_config(args) -> dict:
    """Flags to the config dict embedded in the output."""
    c = args.command
    if c == "gen":
        return {"command": c}
    cfg = {"command": c, "seed": args.seed, "format": args.format}
    if c == "train":
        cfg.update(dataset=_dataset_config(args), k=args.k, method=args.method, prior=args.prior,
                   rebag=args.rebag, test_fraction=args.test_fraction, **_trainer_config(args))
    elif c == "variance":
        cfg.update(ks=args.ks, bags_per_point=args.bags_per_point, kinds=args.kinds)
    elif c == "oracle":
        cfg.update(kmax=args.kmax, n_dists=args.n_dists, max_atoms=args.max_atoms, dim=args.dim)
    elif c == "track":
        cfg.update(dataset=_dataset_config(args, "blobs"), k=args.k, replicas=args.replicas,
                   **_trainer_config(args))
    elif c == "sweep":
        cfg.update(dataset=_dataset_config(args, "blobs"), ks=args.ks, methods=args.methods,
                   replicas=args.replicas, prior=args.prior, test_fraction=args.test_fraction,
                   **_trainer_config(args))
    return cfg


def _usage_checks(parser, args):
    for name in ("k", "epochs", "replicas", "bags_per_point", "kmax", "n_dists", "batch_bags", "n"):
        value = getattr(args, name, None)
        minimum = 0 if name == "epochs" else 1
        if value is not None and value < minimum:
            parser.error(f"--{name.replace('_', '-')} must be >= {minimum}")
    if getattr(args, "bags_per_point", 2) < 2:
        parser.error("--bags-per-point must be >= 2")


def read_embedded_config(path) -> dict:
    text = Path(path).read_text()
    if text.startswith("# config: "):
        return json.loads(text.splitlines()[0][len("# config: "):])
    return json.loads(text)["config"]


def execute(cfg: dict):
    """Run a resolved config; returns the output text (and, for train, the model)."""
    result = COMMANDS[cfg["command"]](cfg)
    if isinstance(result, tuple):
        return result
    return result, None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _usage_checks(parser, args)
    try:
        if args.command == "gen":
            rng = np.random.default_rng(args.seed)
            if args.generator == "fig2":
                ds = gen_fig2(args.n, rng)
            else:
                ds = gen_gaussian_blobs(args.n, args.d, args.separation, args.positive_rate, rng)
            write_csv(ds, args.out)
            return 0
        cfg = read_embedded_config(args.source) if args.command == "replay" else resolve_config(args)
        text, model = execute(cfg)
        Path(args.out).write_text(text)
        if model is not None and getattr(args, "model_out", None):
            model.save(args.model_out)
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"easyllp: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
