"""Command line: run a scenario, check a history, or produce plot series."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .checker import check_history
from .errors import BadConfig
from .harness import FAMILIES, FRAGMENTED, WHOLE_FILE, ScenarioConfig, emit_plot_data, run_scenario, sweep
from .history import History

# flag name -> (ScenarioConfig field, type)
CONFIG_FLAGS = {
    "servers": int,
    "writers": int,
    "readers": int,
    "ops": int,
    "rint": int,
    "wint": int,
    "file-size": int,
    "min-block": int,
    "avg-block": int,
    "max-block": int,
    "seed": int,
    "crashes": int,
    "workload": str,
}


def _config_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="key=value file; flags given explicitly override it")
    for flag, typ in CONFIG_FLAGS.items():
        p.add_argument(f"--{flag}", type=typ, default=None)
    p.add_argument("--baseline", choices=(FRAGMENTED, WHOLE_FILE), default=None)
    p.add_argument("--transport", choices=("sim", "socket"), default=None)
    return p


def config_from_args(args: argparse.Namespace) -> ScenarioConfig:
    overrides = {}
    for flag in list(CONFIG_FLAGS) + ["baseline", "transport"]:
        name = flag.replace("-", "_")
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.config is not None:
        cfg = ScenarioConfig.from_file(args.config, **overrides)
    else:
        cfg = ScenarioConfig(**overrides)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = _config_parser()
    parser = argparse.ArgumentParser(prog="fragstore", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run one scenario and check its history")
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--budget", type=int, default=200_000, help="search nodes per linearizability check")

    check = sub.add_parser("check", help="check a history log")
    check.add_argument("history", type=Path)
    check.add_argument("--out", type=Path, help="directory for verdict.txt (default: print only)")
    check.add_argument("--whole-object", action="store_true",
                       help="also test each file as one linearizable object")
    check.add_argument("--max-ops", type=int, default=None)
    check.add_argument("--budget", type=int, default=200_000)

    plot = sub.add_parser("plotdata", parents=[common], help="sweep an experiment family into series files")
    plot.add_argument("--out", type=Path, required=True)
    plot.add_argument("--family", choices=sorted(FAMILIES) + ["all"], default="all")
    plot.add_argument("--seeds", type=int, default=5, help="samples averaged per point")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    result = run_scenario(cfg)
    result.history.dump(out / "history.log")
    (out / "metrics.tsv").write_text(result.metrics.to_tsv())
    (out / "trace.log").write_text("".join(line + "\n" for line in result.trace))
    report = check_history(result.history, budget=args.budget)
    (out / "verdict.txt").write_text(report.render())
    for key, value in result.metrics.summary().items():
        print(f"{key}\t{value}")
    print(f"verdict\t{'OK' if report.ok else 'VIOLATIONS FOUND'}")
    return 0 if report.ok else 1


def cmd_check(args: argparse.Namespace) -> int:
    try:
        history = History.load(args.history)
    except ValueError as err:
        print(f"fragstore: cannot parse {args.history}: {err}", file=sys.stderr)
        return 2
    report = check_history(history, max_ops=args.max_ops, budget=args.budget, whole_object=args.whole_object)
    text = report.render()
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "verdict.txt").write_text(text)
    sys.stdout.write(text)
    return 0 if report.ok else 1


def cmd_plotdata(args: argparse.Namespace) -> int:
    base = config_from_args(args)
    families = sorted(FAMILIES) if args.family == "all" else [args.family]
    points = []
    for family in families:
        points += sweep(family, replace(base), seeds=range(base.seed, base.seed + args.seeds))
    for path in emit_plot_data(points, args.out / "series"):
        print(path)
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"run": cmd_run, "check": cmd_check, "plotdata": cmd_plotdata}[args.command](args)
    except BadConfig as err:
        print(f"fragstore: bad configuration: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
