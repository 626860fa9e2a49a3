"""Command-line entry point: ``e2c <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import E2CError
from .config import load_config

log = logging.getLogger("e2c")


def _cfg(args):
    return load_config(args.config)


def cmd_validate(args):
    cfg = _cfg(args)
    print(f"{args.config}: ok (variant={cfg.variant}, env={cfg.env_kind}, hash={cfg.config_hash[:12]})")
    return 0


def cmd_train(args):
    from ..trainer import train

    cfg = _cfg(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out = Path(args.out) if args.out else cfg.resolved_output_dir() / f"seed_{seed}"
    hist = train(cfg, seed, out, args.iterations, resume=args.resume, record_wall_time=args.wall_time)
    last = hist[-1] if hist else {}
    print(json.dumps({"out": str(out), "iterations": len(hist), **{k: last[k] for k in last
                                                                     if k.startswith("mean_")}}))
    return 0


def cmd_sweep(args):
    from .sweep import sweep

    cfg = _cfg(args)
    seeds = None if args.seed is None else [args.seed]
    res = sweep(cfg, seeds, args.out, args.iterations, args.jobs, args.wall_time)
    print(json.dumps({"ran": res.ran, "skipped": res.skipped, "failed": res.failed}))
    if res.failed:
        for seed, err in res.failed.items():
            print(f"seed {seed} failed: {err}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args):
    from ..trainer import evaluate

    cfg = _cfg(args)
    mode = "stochastic" if args.stochastic else "greedy"
    res = evaluate(cfg, args.checkpoint, args.episodes, 0 if args.seed is None else args.seed, mode)
    print(json.dumps(res))
    return 0


def cmd_verify_bounds(args):
    from ..tabular import summarize, verification_suite

    records = list(verification_suite(args.instances, args.seed, args.gamma))
    summary = summarize(records)
    if args.out:
        Path(args.out).write_text(json.dumps({"summary": summary, "records": records}, indent=1) + "\n")
    print(json.dumps(summary))
    return 0 if summary["violations"] == 0 and summary["pinsker_failures"] == 0 else 1


def cmd_plot_data(args):
    from .plotdata import aggregate, write_rows

    paths = []
    for p in args.inputs:
        p = Path(p)
        paths.extend(sorted(p.glob(f"seed_*/{args.file}")) if p.is_dir() else [p])
    rows = aggregate(paths, args.column, args.window)
    if args.out:
        write_rows(rows, args.out)
    else:
        for r in rows:
            print(f"{r['iteration']},{r['mean']!r},{r['se']!r},{r['n']}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="e2c", description="Constrained multi-agent PPO experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, seed=True):
        sp.add_argument("--config", required=True, metavar="PATH")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override the config's seed list")
        return sp

    with_config(sub.add_parser("validate-config", help="check a config against the schema"), seed=False) \
        .set_defaults(fn=cmd_validate)

    for name, fn in (("train", cmd_train), ("sweep", cmd_sweep)):
        sp = with_config(sub.add_parser(name))
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--wall-time", action="store_true", help="fill the wall_time_s column")
        if name == "train":
            sp.add_argument("--resume", action="store_true")
        else:
            sp.add_argument("--resume", action="store_true", help="accepted for symmetry; sweeps always resume")
            sp.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel")
        sp.set_defaults(fn=fn)

    sp = with_config(sub.add_parser("eval", help="replay a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int, default=20)
    sp.add_argument("--stochastic", action="store_true", help="sample actions instead of taking the mode")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("verify-bounds", help="randomized tabular check of the team-cost bound")
    sp.add_argument("--instances", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--gamma", type=float, default=0.9)
    sp.add_argument("--out", metavar="PATH")
    sp.set_defaults(fn=cmd_verify_bounds)

    sp = sub.add_parser("plot-data", help="smoothed mean and standard error across seeds")
    sp.add_argument("inputs", nargs="+", help="CSV files or sweep directories")
    sp.add_argument("--file", default="episodes.csv", help="CSV name inside sweep directories")
    sp.add_argument("--column", default="reward")
    sp.add_argument("--window", type=int, default=100)
    sp.add_argument("--out", metavar="PATH", help=".csv or .json; stdout if omitted")
    sp.set_defaults(fn=cmd_plot_data)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (E2CError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
