"""``nkemu`` command line.

Exit codes: 0 success, 2 invalid input or config, 3 numerical failure,
4 an acceptance threshold was missed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench
from .config import PROBLEMS, RunConfig, default_config
from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 2, 3, 4


def _config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig.profile(args.problem, args.profile)
    over = {}
    if getattr(args, "output_dir", None):
        over["output_dir"] = args.output_dir
    if getattr(args, "workers", None):
        over["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "M", None) is not None:
        over["M"] = args.M
    if getattr(args, "n_warm", None) is not None:
        over["n_warm"] = args.n_warm
    if getattr(args, "lambda_flow", None) is not None:
        over["lambda_flow"] = args.lambda_flow
    if getattr(args, "lambda_train", None):
        over["lambda_train"] = args.lambda_train
    return cfg.with_overrides(**over) if over else cfg


def _add_config_args(p, data_flags=False):
    p.add_argument("--config", help="JSON config file (see nkemu/schema/run_config.schema.json)")
    p.add_argument("--problem", choices=PROBLEMS, default="elliptic")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--workers", type=int, help="parallel realizations (NKEMU_WORKERS overrides)")
    if data_flags:
        p.add_argument("--seed", type=int)
        p.add_argument("--M", type=int, help="number of training draws")
        p.add_argument("--n-warm", dest="n_warm", type=int)
        p.add_argument("--lambda-flow", dest="lambda_flow", type=float)
        p.add_argument("--lambda-train", dest="lambda_train", type=float, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nkemu", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a training dataset")
    _add_config_args(p, data_flags=True)

    p = sub.add_parser("train", help="fit the factor surrogate")
    _add_config_args(p, data_flags=True)
    p.add_argument("--data", help="dataset directory (default: the run directory)")

    p = sub.add_parser("eval", help="evaluate a trained model on fresh draws")
    _add_config_args(p, data_flags=True)
    p.add_argument("--model", help="model directory (default: the run directory)")

    p = sub.add_parser("theory-check", help="run the convergence certification suite")
    _add_config_args(p)

    p = sub.add_parser("report", help="summarize evaluation reports as CSV and Markdown")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--out", default="summary", help="output prefix (writes .csv and .md)")

    p = sub.add_parser("show-config", help="print a fully populated profile")
    p.add_argument("--problem", choices=PROBLEMS, default="elliptic")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    return ap


def _run(args) -> int:
    cmd = args.command
    if cmd == "show-config":
        print(json.dumps(default_config(args.problem, args.profile), sort_keys=True, indent=2))
        return EXIT_OK
    if cmd == "report":
        rows = bench.cmd_report(args.reports, args.out)
        print(bench.summary_markdown(rows), end="")
        return EXIT_OK
    cfg = _config(args)
    if cmd == "gen-data":
        path = bench.cmd_gen_data(cfg)
        print(f"dataset written to {path} (config {cfg.hash})")
        return EXIT_OK
    if cmd == "train":
        path = bench.cmd_train(cfg, args.data)
        print(f"model written to {path} (config {cfg.hash})")
        return EXIT_OK
    if cmd == "eval":
        rep = bench.cmd_eval(cfg, args.model)
        m = rep.metrics
        print(f"{cfg.problem} [{cfg.hash}] median {m['median_final']:.3e} "
              f"(10%: {m['q10_final']:.3e}, 90%: {m['q90_final']:.3e}), "
              f"mean iterations {m['mean_iterations']:.1f}")
        for name, ok in rep.verdicts.items():
            print(f"  {name}: {m.get(name)} -> {'PASS' if ok else 'FAIL'}")
        if rep.notes:
            print(f"  note: {rep.notes}")
        print(f"report: {bench.run_dir(cfg) / 'report.json'}")
        return EXIT_OK if rep.passed else EXIT_THRESHOLD
    if cmd == "theory-check":
        rep = bench.cmd_theory_check(cfg)
        print(rep.table())
        return EXIT_OK if rep.passed else EXIT_THRESHOLD
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
