"""Command-line entry point: ``hetreg verify | train | bench | pseudolabel``.

Exit codes: 0 success, 1 a property failed, 2 bad configuration or
arguments, 3 a training run diverged (outputs written so far are kept).
"""
import argparse
import os
import sys

import numpy as np

from . import bench, config, harness, pseudolabel, verify
from ._backend import BACKEND
from .datasets import write_csv
from .errors import ConfigError, HetRegError, NonFinite
from .losses import LOSS_NAMES

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _loss_list(text):
    names = [v.strip() for v in text.split(",") if v.strip()]
    for name in names:
        if name not in LOSS_NAMES:
            raise argparse.ArgumentTypeError(f"unknown loss {name!r}; choose from {', '.join(LOSS_NAMES)}")
    return names


def cmd_verify(args):
    outcomes = verify.run_all(seed=args.seed, scale=args.scale, only=args.only)
    print(verify.format_report(outcomes))
    complete = verify.registry_complete()
    print(f"registry: {len(verify.REGISTRY)} properties, expected {verify.EXPECTED_COUNT} "
          f"({'ok' if complete else 'MISMATCH'})")
    failed = [o.key for o in outcomes if not o.passed]
    if failed or not complete:
        print(f"{len(failed)} propert{'y' if len(failed) == 1 else 'ies'} failed", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


def cmd_train(args):
    if args.print_schema:
        print(config.print_schema())
        return EXIT_OK
    if not args.config:
        raise ConfigError("train needs a config file (or --print-schema)")
    cfg = config.load_config(args.config)
    if args.output_dir:
        cfg.run["output_dir"] = args.output_dir
    workers = 1 if args.deterministic else None
    results = harness.run_config(cfg, deterministic=args.deterministic, workers=workers,
                                 plots=False if args.no_plots else None)
    for r in results:
        last = r.log[-1] if r.log else {}
        status = "DIVERGED" if r.diverged else "ok"
        print(f"{r.stem:<30} epochs {len(r.log):>5}  kl {last.get('kl', float('nan')):.6g}  "
              f"w2 {last.get('w2', float('nan')):.6g}  {status}")
    harness.raise_on_divergence(results)
    return EXIT_OK


def cmd_bench(args):
    records = bench.run_bench(args.dims, args.losses, warmup=args.warmup, steps=args.steps, seed=args.seed)
    rows = [r.row() for r in records]
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        write_csv(args.out, bench.BENCH_COLUMNS, rows)
    print(f"backend: {BACKEND}")
    print(" ".join(f"{c:>12}" for c in bench.BENCH_COLUMNS))
    for r in records:
        print(f"{r.loss_kind:>12} {r.dim:>12d} {r.median_ms:>12.3f} {r.mean_ms:>12.3f} {r.std_ms:>12.3f} "
              f"{r.peak_bytes:>12d} {r.eig_calls:>12d} {r.steps:>12d}")
    return EXIT_OK


def cmd_pseudolabel(args):
    if args.config:
        scenario = config.load_config(args.config).scenario
    else:
        scenario = {k: v[1] for k, v in config.SCHEMA["scenario"].items()}
        scenario.update(kind=args.scenario, variant=args.variant, dim=args.dim, seed=args.seed,
                        n_samples=args.n_samples, path=args.csv, has_header=args.has_header)
        if args.csv:
            scenario["kind"] = "csv"
    ds = harness.pseudolabel_dataset(scenario)
    k = args.k if args.k is not None else pseudolabel.default_k(ds.target_dim)
    labels = pseudolabel.pseudo_labels(ds, k)
    pseudolabel.export_labels(labels, args.out)
    mean_trace = float(np.mean(np.trace(labels.cov, axis1=1, axis2=2)))
    print(f"rows {len(labels)}  k {k}  mean trace {mean_trace:.6g}  PSD repairs {labels.repaired}")
    if args.brute_force_check:
        rng = np.random.default_rng(args.seed)
        rows = np.sort(rng.choice(len(ds), min(args.brute_force_check, len(ds)), replace=False))
        bad = harness.brute_force_check(ds, labels, k, rows)
        print(f"brute-force check: {len(rows) - len(bad)}/{len(rows)} rows identical")
        if bad:
            return EXIT_PROPERTY
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="hetreg", description="Heteroscedastic regression losses and benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--scale", type=float, default=1.0, help="multiply sample counts (1.0 = full suite)")
    v.add_argument("--only", default=None, help="run properties whose key starts with this prefix")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", help="train the losses listed in a config file")
    t.add_argument("config", nargs="?", help="INI config (see --print-schema)")
    t.add_argument("--print-schema", action="store_true", help="describe the config format and exit")
    t.add_argument("--output-dir", default=None, help="override [run] output_dir")
    t.add_argument("--deterministic", action="store_true",
                   help="one worker, timing and memory columns written as 0 so reruns are byte-identical")
    t.add_argument("--no-plots", action="store_true")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="time one training step per loss and dimension")
    b.add_argument("--dims", type=_int_list, default=[8, 16, 32])
    b.add_argument("--losses", type=_loss_list, default=list(LOSS_NAMES))
    b.add_argument("--warmup", type=int, default=bench.WARMUP_STEPS)
    b.add_argument("--steps", type=int, default=bench.TIMED_STEPS)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="CSV path")
    b.set_defaults(func=cmd_bench)

    pl = sub.add_parser("pseudolabel", help="export neighborhood covariance labels")
    pl.add_argument("--config", default=None, help="take the [scenario] section from a config file")
    pl.add_argument("--scenario", choices=config.SCENARIO_KINDS, default="sinusoid")
    pl.add_argument("--variant", type=int, default=1)
    pl.add_argument("--dim", type=int, default=8)
    pl.add_argument("--n-samples", type=int, default=None)
    pl.add_argument("--csv", default=None, help="numeric table; 25%% of columns become inputs")
    pl.add_argument("--has-header", action="store_true")
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--k", type=int, default=None, help="neighbors per row (default 10 x target dim)")
    pl.add_argument("--out", required=True)
    pl.add_argument("--brute-force-check", type=int, default=0, metavar="ROWS",
                    help="compare this many random rows against the naive reference")
    pl.set_defaults(func=cmd_pseudolabel)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFinite as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (HetRegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
