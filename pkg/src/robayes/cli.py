"""Experiment CLI.

Subcommands: simulate-mean, simulate-reg, stream, hardness, audit-dp, rates.
Flags --config/--seed/--trials/--out plus grid overrides; file values are
overridden by flags. Exit codes: 0 success, 2 when any trial was infeasible
(the bottom outcome), 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import config_from_values, parse_config_file, rate_fit, run

TASK_BY_COMMAND = {
    "simulate-mean": "mean",
    "simulate-reg": "regression",
    "stream": "stream",
    "hardness": "hardness",
    "audit-dp": "audit",
}


def _add_common(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--trials", type=int)
    parser.add_argument("--out", help="output path prefix (.csv/.json appended)")
    parser.add_argument("--n", type=str, help="comma-separated sample sizes")
    parser.add_argument("--d", type=str, help="comma-separated dimensions")
    parser.add_argument("--eta", type=str, help="comma-separated corruption fractions")
    parser.add_argument("--epsilon", type=str, help="comma-separated privacy budgets")
    parser.add_argument("--beta", type=str, help="comma-separated failure probabilities")
    parser.add_argument("--sigma2", type=str, help="comma-separated prior variances")
    parser.add_argument("--mode", choices=("eff", "stat"))
    parser.add_argument("--batches", type=int)
    parser.add_argument("--measure-runtime", action="store_true", default=None)


def _numeric_tuple(text):
    vals = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            vals.append(int(part))
        except ValueError:
            vals.append(float(part))
    return tuple(vals)


def build_parser():
    parser = argparse.ArgumentParser(prog="robayes")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in TASK_BY_COMMAND:
        _add_common(sub.add_parser(command))
    rates = sub.add_parser("rates", help="fit error exponents from an existing CSV")
    rates.add_argument("csv", help="CSV produced by a simulate run")
    return parser


def _config_from_args(args):
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    values["task"] = TASK_BY_COMMAND[args.command]
    for key in ("seed", "trials", "out", "mode", "batches"):
        val = getattr(args, key)
        if val is not None:
            values[key] = val
    if args.measure_runtime is not None:
        values["measure_runtime"] = args.measure_runtime
    for key in ("n", "d", "eta", "epsilon", "beta", "sigma2"):
        val = getattr(args, key)
        if val is not None:
            values[key] = _numeric_tuple(val)
    return config_from_values(values)


def _rates_command(args):
    import math

    rows = {}
    with open(args.csv) as f:
        header = f.readline().strip().split(",")
        idx = {name: i for i, name in enumerate(header)}
        for line in f:
            parts = line.strip().split(",")
            n = int(parts[idx["n"]])
            err = float(parts[idx["error"]])
            if math.isfinite(err):
                rows.setdefault(n, []).append(err)
    import numpy as np

    summaries = [
        {"n": n, "quantiles": {50: float(np.median(errs))}} for n, errs in sorted(rows.items())
    ]
    fit = rate_fit(summaries)
    print(json.dumps(fit, indent=2))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rates":
            return _rates_command(args)
        config = _config_from_args(args)
        report = run(config)
        print(json.dumps(report.to_dict(), indent=2))
        return 2 if report.infeasible else 0
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
