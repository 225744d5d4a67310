"""Command line front end: run experiments, print predictions, sweep grids.

Three subcommands:

* run: execute a Monte-Carlo experiment from a spec file, write the CSV
  (when the spec or --out names a path) and print the summary.
* predict: the pure-analysis table for a spec file, no sampling.
* sweep: closed-form predictions over a (load, snr) grid at fixed
  antenna count, for mapping out where the plain detector contracts.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import harness
from .model import SystemConfig


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmpid",
        description="Message-passing detection benchmarks for overloaded linear systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a Monte-Carlo experiment from a spec file")
    run_p.add_argument("--spec", required=True, help="path to a key=value spec file")
    run_p.add_argument("--out", help="override the spec's output_path")
    run_p.add_argument("--trials", type=int, help="override the spec's n_trials")
    run_p.add_argument("--seed", type=int, help="override the base seed")
    run_p.add_argument("--detectors", help="comma list overriding the spec's detector_set")
    run_p.add_argument("--max-iters", type=int, help="override the spec's max_iters")
    run_p.add_argument("--workers", type=int, default=1, help="thread count for trials")

    pred_p = sub.add_parser("predict", help="closed-form prediction table for a spec file")
    pred_p.add_argument("--spec", required=True, help="path to a key=value spec file")

    sweep_p = sub.add_parser("sweep", help="prediction grid over load factors and SNRs")
    sweep_p.add_argument("--n-antennas", type=int, required=True)
    sweep_p.add_argument("--betas", default="2,4,8", help="comma list of load factors > 1")
    sweep_p.add_argument("--snrs", default="1,10,100", help="comma list of prior_var/noise_var")
    sweep_p.add_argument("--prior-var", type=float, default=1.0)
    sweep_p.add_argument("--out", help="also write the grid as CSV")
    return parser


def _apply_overrides(spec: harness.ExperimentSpec, args) -> harness.ExperimentSpec:
    changes = {}
    if args.out is not None:
        changes["output_path"] = args.out
    if args.trials is not None:
        changes["n_trials"] = args.trials
    if args.max_iters is not None:
        changes["max_iters"] = args.max_iters
    if args.detectors is not None:
        changes["detector_set"] = tuple(
            part.strip() for part in args.detectors.split(",") if part.strip()
        )
    if args.seed is not None:
        changes["cfg"] = spec.cfg.with_seed(args.seed)
    return dataclasses.replace(spec, **changes) if changes else spec


def _cmd_run(args) -> int:
    spec = _apply_overrides(harness.load_spec(args.spec), args)
    result = harness.run_experiment(spec, workers=args.workers)
    print(result.summary)
    if result.csv_path is not None:
        print(f"csv: {result.csv_path} ({len(result.records)} rows)")
    return 0


def _cmd_predict(args) -> int:
    spec = harness.load_spec(args.spec)
    print(harness.predict(spec))
    return 0


_SWEEP_COLUMNS = ("n_users", "n_antennas", "beta") + harness._PREDICT_COLUMNS


def _cmd_sweep(args) -> int:
    betas = [float(part) for part in args.betas.split(",") if part.strip()]
    snrs = [float(part) for part in args.snrs.split(",") if part.strip()]
    if not betas or not snrs:
        raise ValueError("sweep needs at least one beta and one snr")
    rows = []
    for beta in betas:
        n_users = round(beta * args.n_antennas)
        if n_users <= args.n_antennas:
            raise ValueError(f"beta={beta:g} is not an overloaded system at this antenna count")
        for snr in snrs:
            cfg = SystemConfig(
                n_users=n_users,
                n_antennas=args.n_antennas,
                noise_var=args.prior_var / snr,
                prior_var=args.prior_var,
            )
            row = {"n_users": n_users, "n_antennas": args.n_antennas, "beta": cfg.beta}
            row.update(harness.prediction_row(cfg))
            rows.append(row)

    table = [_SWEEP_COLUMNS]
    for row in rows:
        table.append(tuple(harness._format_cell(row[col]) for col in _SWEEP_COLUMNS))
    widths = [max(len(line[i]) for line in table) for i in range(len(_SWEEP_COLUMNS))]
    for line in table:
        print("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(line)))
    if args.out is not None:
        with open(args.out, "w", encoding="ascii", newline="") as handle:
            handle.write(",".join(_SWEEP_COLUMNS) + "\n")
            for row in rows:
                handle.write(",".join(harness._format_cell(row[col]) for col in _SWEEP_COLUMNS) + "\n")
        print(f"csv: {args.out} ({len(rows)} rows)")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "predict": _cmd_predict, "sweep": _cmd_sweep}
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
