"""Command-line entry point: ``otaffl run | verify | sweep``.

Flag values take precedence over the config file, which takes precedence over
built-in defaults. Exit codes: 0 success, 1 invalid configuration or
arguments, 2 runtime failure (including failed ``verify`` checks).
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import parse_config
from .errors import ConfigError, OtaFflError
from .fedsim.engine import run_experiment
from .verify import run_checks

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
DEFAULT_OUT = "otaffl-out"
FAILED_MARKER = "FAILED"

log = logging.getLogger("otaffl")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="otaffl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--epsilon", type=float)
    run.add_argument("--rounds", type=int)
    run.add_argument("--algorithm")

    verify = sub.add_parser("verify", help="run the built-in oracle and property checks")
    verify.add_argument("--full", action="store_true", help="use full sample sizes")
    verify.add_argument("--only", action="append", help="run only the named check (repeatable)")

    sweep = sub.add_parser("sweep", help="run one experiment per (epsilon, seed) pair")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--seed", type=_ints, help="comma-separated seeds")
    sweep.add_argument("--epsilon", type=_floats, help="comma-separated epsilon values")
    sweep.add_argument("--out")
    sweep.add_argument("--rounds", type=int)
    sweep.add_argument("--algorithm")
    sweep.add_argument("--jobs", type=int, default=1)
    return parser


def _overrides(args, seed=None, epsilon=None):
    return {
        "seed": seed,
        "out_dir": getattr(args, "out", None),
        "rounds": args.rounds,
        "algorithm.kind": args.algorithm,
        "algorithm.epsilon": epsilon,
    }


def _mark_failed(out_dir, exc):
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, FAILED_MARKER), "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
    except OSError:
        pass


def cmd_run(args):
    cfg = parse_config(args.config, _overrides(args, args.seed, args.epsilon))
    out_dir = cfg.out_dir or DEFAULT_OUT
    try:
        result = run_experiment(cfg, out_dir)
    except (OtaFflError, OSError, FloatingPointError) as exc:
        _mark_failed(out_dir, exc)
        raise
    s = result.summary
    print(f"{cfg.algorithm.kind}: {cfg.rounds} rounds, seed {cfg.seed} -> {out_dir}")
    print(f"  mean acc {s.mean_acc:.4f}  std acc {s.std_acc:.4f}  worst10 {s.worst10:.4f}  best10 {s.best10:.4f}")
    print(f"  loss mean {s.extra['loss_mean']:.4f}  loss std {s.extra['loss_std']:.4f}")
    return EXIT_OK


def cmd_verify(args):
    results = run_checks(full=args.full, names=args.only)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def _sweep_one(job):
    cfg, out_dir = job
    try:
        s = run_experiment(cfg, out_dir).summary
    except (OtaFflError, OSError, FloatingPointError) as exc:
        _mark_failed(out_dir, exc)
        return {"error": f"{type(exc).__name__}: {exc}"}
    return {
        "mean_acc": s.mean_acc, "std_acc": s.std_acc, "worst10": s.worst10, "best10": s.best10,
        "loss_mean": s.extra["loss_mean"], "loss_std": s.extra["loss_std"], "loss_worst10": s.extra["loss_worst10"],
    }


def cmd_sweep(args):
    base = parse_config(args.config, _overrides(args))
    root = base.out_dir or DEFAULT_OUT
    seeds = args.seed or [base.seed]
    epsilons = args.epsilon or [None]
    jobs, keys = [], []
    for eps in epsilons:
        for seed in seeds:
            cfg = parse_config(args.config, _overrides(args, seed, eps))
            name = (f"eps_{eps:g}_" if eps is not None else "") + f"seed_{seed}"
            jobs.append((cfg, os.path.join(root, name)))
            keys.append((eps, seed, name))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]

    metrics = ["mean_acc", "std_acc", "worst10", "best10", "loss_mean", "loss_std", "loss_worst10"]
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "aggregate.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epsilon", "seed", "run_dir", "status"] + metrics)
        for (eps, seed, name), row in zip(keys, rows):
            status = "failed" if "error" in row else "ok"
            writer.writerow(["" if eps is None else eps, seed, name, status] + [row.get(m, "") for m in metrics])

    groups = {}
    for (eps, _, _), row in zip(keys, rows):
        if "error" not in row:
            groups.setdefault("all" if eps is None else f"{eps:g}", []).append(row)
    summary = {
        k: {m: float(np.mean([r[m] for r in v])) for m in metrics} | {"runs": len(v)} for k, v in groups.items()
    }
    failed = [name for (_, _, name), row in zip(keys, rows) if "error" in row]
    with open(os.path.join(root, "aggregate.json"), "w") as fh:
        json.dump({"by_epsilon": summary, "failed_runs": failed}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    for k, v in summary.items():
        print(f"epsilon {k}: mean acc {v['mean_acc']:.4f}  loss std {v['loss_std']:.4f}  ({v['runs']} runs)")
    if failed:
        print(f"{len(failed)} run(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OtaFflError, OSError, FloatingPointError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
