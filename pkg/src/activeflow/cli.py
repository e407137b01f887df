"""Command-line entry point: ``activeflow {run,baseline,verify,plotdata}``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .errors import ActiveFlowError, ConfigurationError

log = logging.getLogger("activeflow")


def _load(args):
    from .harness import RunConfig, load_config

    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    out = args.output or config.output_dir
    if out is None:
        raise ConfigurationError("no output directory given (use --output or output_dir in the config)")
    return config, out


def cmd_run(args) -> int:
    from .harness import metrics, run

    config, out = _load(args)
    records = run(config, out, baseline=args.command == "baseline")
    if records:
        m = metrics(records)
        print(f"final regret {m['final_regret']:.4f}  best y {m['final_best_y']:.4f}  "
              f"rounds to optimum {m['rounds_to_optimum']}")
    print(f"wrote {out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(set(args.only) if args.only else None)
    failed = [r for r in results if not (r.passed and r.in_time)]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_plotdata(args) -> int:
    """Merge the rounds.csv of several run directories into one long-format regret table."""
    from .harness import read_rounds

    writer = csv.writer(args.out)
    writer.writerow(["run", "round", "best_y", "regret"])
    for d in args.runs:
        path = os.path.join(d, "rounds.csv")
        if not os.path.exists(path):
            raise ConfigurationError(f"{path} not found")
        name = os.path.basename(os.path.normpath(d))
        for row in read_rounds(path):
            writer.writerow([name, row["round"], row["best_y"], row["regret"]])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activeflow", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "active flow matching loop"),
                           ("baseline", "uniform random search with the same budget")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", nargs="?", help="YAML run configuration")
        s.add_argument("-o", "--output", help="output directory")
        s.add_argument("--seed", type=int, help="override the master seed")
        s.set_defaults(func=cmd_run)
    s = sub.add_parser("verify", help="exact-oracle checks with a pass/fail table")
    s.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    s.set_defaults(func=cmd_verify)
    s = sub.add_parser("plotdata", help="regret curves of one or more runs as CSV")
    s.add_argument("runs", nargs="+", help="run output directories")
    s.add_argument("-o", "--out", type=argparse.FileType("w"), default=sys.stdout)
    s.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ActiveFlowError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
