"""Command-line entry point: ``policyfuzz {train,fuzz,sweep,scan,report}``.

Exit codes: 0 on success, 2 on a usage or configuration error, 1 when a
run fails for any other reason.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .envs import InvalidInputError, exhaustive_scan, make_env, scan_inputs
from .harness import aggregate, load_sweep, run_campaign, run_sweep
from .policies import BUILTIN_PREFIX, load_policy, save_policy, train_q_learning

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
HELP_WIDTH = 80


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so main() owns every exit code
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="policyfuzz", formatter_class=_formatter,
                     description="Fuzz-test decision policies in small deterministic environments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", formatter_class=_formatter, help="train a tabular Q-learning policy",
                       description="Train a tabular Q-learning policy and save it as JSON (gzip if PATH ends in .gz).")
    p.add_argument("--env", required=True, choices=("cartpole", "taxi"), help="environment to train on")
    p.add_argument("--episodes", required=True, type=int, help="number of training episodes")
    p.add_argument("--seed", type=int, default=0, help="training seed (default: 0)")
    p.add_argument("--alpha", type=float, default=0.1, help="learning rate (default: 0.1)")
    p.add_argument("--out", required=True, help="output policy file")

    p = sub.add_parser("fuzz", formatter_class=_formatter, help="run one testing campaign",
                       description="Run the campaign described by a JSON config and write its run directory.")
    p.add_argument("--config", required=True, help="campaign config (JSON)")
    p.add_argument("--out", default=None,
                   help="run directory (default: runs/<env>-<method>-seed<seed>)")

    p = sub.add_parser("sweep", formatter_class=_formatter, help="run a parameter sweep",
                       description="Run every (K, tau, gamma) x seed combination of a sweep file.")
    p.add_argument("--spec", required=True, help="sweep file (JSON)")
    p.add_argument("--out", required=True, help="sweep directory, receives sweep.csv and runs/")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default: 1)")

    p = sub.add_parser("scan", formatter_class=_formatter, help="compute the ground-truth fault set",
                       description="Execute every input (taxi) or a dense grid (landerlite).")
    p.add_argument("--env", required=True, choices=("taxi", "landerlite"), help="environment to scan")
    p.add_argument("--policy", default=None, help="policy file (default: the builtin policy)")
    p.add_argument("--resolution", type=int, default=200,
                   help="grid points per axis, landerlite only (default: 200)")
    p.add_argument("--out", required=True, help="output JSON file")

    p = sub.add_parser("report", formatter_class=_formatter, help="aggregate run directories",
                       description="Median and interquartile cumulative-fault curves per group.")
    p.add_argument("--runs", required=True, nargs="+",
                   help="run directories, or directories searched for them")
    p.add_argument("--group-by", default="method", help="config field to group by (default: method)")
    p.add_argument("--out", required=True, help="aggregate CSV; finals go to <stem>_final.csv")
    return parser


def _cmd_train(args) -> int:
    if args.episodes < 0:
        raise ConfigError("--episodes must be non-negative")
    table = train_q_learning(make_env(args.env), args.episodes, alpha=args.alpha, seed=args.seed)
    path = save_policy(table, args.out)
    print(f"wrote {path} (mean greedy return {table.metadata['eval_mean_return']:.2f})")
    return EXIT_OK


def _cmd_fuzz(args) -> int:
    config = load_config(args.config)
    out = args.out or Path("runs") / f"{config.env}-{config.method}-seed{config.seed}"
    summary = run_campaign(config, out)
    print(f"{out}: {summary['final_faults']} faults in {config.budget} executions "
          f"({summary['total']:.1f} s)")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    index = run_sweep(load_sweep(args.spec), args.out, jobs=args.jobs)
    print(f"wrote {index}")
    return EXIT_OK


def _cmd_scan(args) -> int:
    if args.resolution < 1:
        raise ConfigError("--resolution must be positive")
    env = make_env(args.env)
    policy = load_policy(args.policy or BUILTIN_PREFIX + args.env, args.env)
    n_inputs = len(scan_inputs(env, args.resolution))
    faults = sorted(exhaustive_scan(env, policy, args.resolution))
    doc = {"env": args.env, "resolution": args.resolution if args.env == "landerlite" else None,
           "n_inputs": n_inputs, "n_faults": len(faults), "faults": [list(f) for f in faults]}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc) + "\n")
    print(f"{args.env}: {len(faults)} of {n_inputs} inputs fail; wrote {out}")
    return EXIT_OK


def _find_runs(paths) -> list[Path]:
    runs = []
    for p in map(Path, paths):
        if (p / "config.json").is_file():
            runs.append(p)
        elif p.is_dir():
            runs.extend(sorted(c.parent for c in p.rglob("config.json") if (c.parent / "curve.csv").is_file()))
        else:
            raise ConfigError(f"{p} is not a directory")
    if not runs:
        raise ConfigError("no run directories found")
    return runs


def _cmd_report(args) -> int:
    stats = aggregate(_find_runs(args.runs), args.group_by, args.out)
    for name, s in stats.items():
        f = s["final"]
        print(f"{args.group_by}={name}: runs={s['n_runs']} median={f['median']:g} "
              f"iqr=[{f['q25']:g}, {f['q75']:g}]")
    return EXIT_OK


COMMANDS = {"train": _cmd_train, "fuzz": _cmd_fuzz, "sweep": _cmd_sweep,
            "scan": _cmd_scan, "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    try:
        return COMMANDS[args.verb](args)
    except (ConfigError, FileNotFoundError, InvalidInputError) as exc:
        print(f"policyfuzz {args.verb}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
