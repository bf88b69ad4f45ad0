"""Command-line front end: train / test / compare / oracle / project.

Flag values override the config file; `--quick` applies smoke-scale
overrides on top of both.  Exit codes: 0 success, 2 config error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import analysis, harness
from .autodiff import NumericError
from .harness import ConfigError, ExperimentConfig


def _base_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for key in ("seed", "strategy", "algo", "env", "out"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    cfg.apply_overrides(**overrides)
    if getattr(args, "quick", False):
        cfg.apply_quick()
    return cfg.validate()


def _add_common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=["long", "short"])
    p.add_argument("--algo", choices=["pearl", "varibad"])
    p.add_argument("--env", choices=["point", "semicircle", "velmatch"])
    p.add_argument("--out", help="output directory root")
    p.add_argument("--quick", action="store_true",
                   help="smoke-scale overrides for a fast end-to-end run")


def build_parser():
    parser = argparse.ArgumentParser(prog="memrl")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="meta-train one agent")
    _add_common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the run's latest checkpoint")

    p = sub.add_parser("test", help="meta-test adaptation from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file "
                   "(default: <run dir>/checkpoint.json)")

    p = sub.add_parser("compare", help="compare strategy-pair run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="comparison.csv")

    p = sub.add_parser("oracle", help="belief-oracle benchmark")
    _add_common(p)
    p.add_argument("--checkpoint", help="optional checkpoint for agreement score")
    p.add_argument("--goals", type=int, default=10,
                   help="discretized goal count for the oracle task set")
    p.add_argument("--oracle-out", default=None, help="benchmark CSV path")

    p = sub.add_parser("project", help="project an embeddings CSV to 2-D")
    p.add_argument("embeddings", help="embeddings CSV from `test`")
    p.add_argument("--method", choices=["pca", "tsne"], default="pca")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output CSV path")
    return parser


def cmd_train(args):
    cfg = _base_config(args)
    run_dir = harness.run_meta_training(cfg, resume=args.resume, log=print)
    print(f"run artifacts in {run_dir}")


def cmd_test(args):
    cfg = _base_config(args)
    ckpt = args.checkpoint or os.path.join(cfg.run_dir(), "checkpoint.json")
    if not os.path.exists(ckpt):
        raise ConfigError(f"checkpoint not found: {ckpt}")
    run_dir = harness.run_meta_testing(ckpt, cfg)
    print(f"test artifacts in {run_dir}")


def cmd_compare(args):
    rows, summary = harness.compare(args.run_dirs, args.out)
    print(summary)
    print(f"comparison CSV written to {args.out}")


def cmd_oracle(args):
    cfg = _base_config(args)
    out = args.oracle_out or os.path.join(cfg.out, f"oracle-{cfg.env}.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    rows, agreement = harness.oracle_eval(cfg, out, checkpoint_path=args.checkpoint,
                                          n_goals=args.goals)
    rets = np.array([r[3] for r in rows])
    print(f"oracle benchmark: {len(rows)} rollouts, mean return {rets.mean():.3f}")
    if agreement is not None:
        print(f"belief agreement score: {agreement:.3f}")
    print(f"benchmark CSV written to {out}")


def cmd_project(args):
    with open(args.embeddings, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    vcols = [i for i, h in enumerate(header) if h.startswith("v") and h[1:].isdigit()]
    if not vcols:
        raise ConfigError("no v1..vK columns found in embeddings CSV")
    x = np.array([[float(r[i]) for i in vcols] for r in rows])
    if args.method == "pca":
        proj = analysis.pca_project(x)
    else:
        proj = analysis.tsne_project(x, perplexity=args.perplexity,
                                     iters=args.iters, seed=args.seed)
    out = args.out or args.embeddings.replace(".csv", f".{args.method}.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header + ["p1", "p2"])
        for r, p in zip(rows, proj):
            w.writerow(r + [repr(float(p[0])), repr(float(p[1]))])
    print(f"projection written to {out}")


COMMANDS = {
    "train": cmd_train,
    "test": cmd_test,
    "compare": cmd_compare,
    "oracle": cmd_oracle,
    "project": cmd_project,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
