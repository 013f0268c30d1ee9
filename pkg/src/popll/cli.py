"""Command-line entry point.

    popll run <config>
    popll sweep <config> --param <name> --values v1,v2,...
    popll corrupt <supervised.csv|plld> --out <file.plld> --seed <n>
    popll stats <file.plld>

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DataError, avg_candidate_labels, corrupt_id, load_plld, load_supervised, save_plld, train_annotator
from .experiment import SWEEPABLE, ConfigError, ExperimentConfig, run_experiment, summary_table, sweep
from .nn import NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def stats_line(ds) -> str:
    n, q = ds.features.shape
    return f"n={n} q={q} c={ds.n_classes} avg_cls={avg_candidate_labels(ds):.4f}"


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    report = run_experiment(cfg)
    sys.stdout.write(summary_table(report))
    print(f"wrote {report.output_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    _, rows = sweep(cfg, args.param, args.values)
    for r in rows:
        print(f"{args.param}={r['value']}: {100 * r['test_acc_mean']:.2f}±{100 * r['test_acc_std']:.2f}%")
    print(f"wrote {cfg.output_path() / f'sweep_{args.param}' / 'curve.csv'}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    X, y = load_supervised(args.input)
    c = int(y.max()) + 1 if args.classes is None else args.classes
    if (y >= c).any():
        raise DataError(f"labels exceed --classes {c}")
    rng = np.random.default_rng(args.seed)
    if args.uniform_annotator:
        annotator = lambda Z: np.full((len(Z), c), 1.0 / c)  # noqa: E731
    else:
        annotator = train_annotator(X, y, c, rng, hidden=args.hidden, epochs=args.epochs)
    ds, _ = corrupt_id(annotator, X, y, rng, n_classes=c)
    save_plld(ds, args.out)
    print(stats_line(ds))
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = load_plld(args.plld)
    print(stats_line(ds))
    sizes = np.bincount(ds.candidates.sum(axis=1), minlength=ds.n_classes + 1)[1:]
    print("cardinality " + " ".join(f"{k + 1}:{int(v)}" for k, v in enumerate(sizes) if v))
    print(f"has_truth={int(ds.true_labels is not None)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popll", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", type=Path)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a config once per parameter value")
    s.add_argument("config", type=Path)
    s.add_argument("--param", required=True, choices=SWEEPABLE)
    s.add_argument("--values", required=True, help="comma-separated list")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("corrupt", help="instance-dependent partial labels for a supervised set")
    c.add_argument("input", type=Path)
    c.add_argument("--out", required=True, type=Path)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--hidden", type=int, default=128)
    c.add_argument("--epochs", type=int, default=20)
    c.add_argument("--classes", type=int, default=None)
    c.add_argument("--uniform-annotator", action="store_true",
                   help="annotator with equal scores on every label")
    c.set_defaults(func=cmd_corrupt)

    t = sub.add_parser("stats", help="summary statistics of a PLLD file")
    t.add_argument("plld", type=Path)
    t.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
