"""Command line entry point: ``run``, ``sweep``, ``plotdata`` and ``defaults``.

Exit codes: 0 on success, 1 for configuration errors, 2 for numeric failures
during a run.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, emit_config, parse_config
from .runner import OUTPUT_ENV, X_AXES, Y_AXES, emit_plotdata, parse_grid, read_metrics, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("flasc")


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise ConfigError(path, f"cannot read file ({e.strerror})") from None


def cmd_run(args) -> int:
    text = _read(args.config) + "\n" + "\n".join(args.set or [])
    cfg = parse_config(text)
    result = run_experiment(cfg, out_dir=args.out)
    final = result.final
    print(f"{cfg.strategy} seed={cfg.seed} rounds={cfg.rounds} accuracy={final.accuracy:.4f} "
          f"up={final.up_params_cum} down={final.down_params_cum}")
    print(f"wrote {result.paths['metrics']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = parse_grid(_read(args.gridspec) + "\n" + "\n".join(args.set or []))
    sweep = run_sweep(grid)
    text = sweep.csv_text()
    out_dir = args.out or os.environ.get(OUTPUT_ENV)
    dest = Path(args.output or Path(args.gridspec).stem + ".csv")
    if out_dir:
        dest = Path(out_dir) / dest.name
    elif not args.output:
        dest = Path("runs") / dest
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(text)
    print(f"{len(sweep.runs)} runs, {len(sweep.failures)} failed; wrote {dest}")
    for point, seed, msg in sweep.failures:
        print(f"FAILED {point} seed={seed}: {msg}", file=sys.stderr)
    if sweep.failures and not sweep.runs:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_plotdata(args) -> int:
    rows = []
    for path in args.metrics:
        rows.extend(read_metrics(_read(path)))
    try:
        text = emit_plotdata(rows, args.x, args.y, args.bands)
    except ValueError as e:
        raise ConfigError("axes", str(e)) from None
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_defaults(args) -> int:
    sys.stdout.write(emit_config(ExperimentConfig()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flasc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a key=value config file")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (overrides {OUTPUT_ENV} and output=)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a grid of experiments")
    sweep.add_argument("gridspec")
    sweep.add_argument("--out", help="output directory")
    sweep.add_argument("-o", "--output", help="concatenated metrics file name")
    sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    sweep.set_defaults(func=cmd_sweep)

    plot = sub.add_parser("plotdata", help="long-form plot data from metrics files")
    plot.add_argument("metrics", nargs="+")
    plot.add_argument("--x", default="up_params_cum", help=f"one of {', '.join(X_AXES)}")
    plot.add_argument("--y", default="accuracy", help=f"one of {', '.join(Y_AXES)}")
    plot.add_argument("--bands", action="store_true", help="min/mean/max across seeds")
    plot.add_argument("-o", "--output")
    plot.set_defaults(func=cmd_plotdata)

    defaults = sub.add_parser("defaults", help="print every config key with its default")
    defaults.set_defaults(func=cmd_defaults)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, ArithmeticError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
