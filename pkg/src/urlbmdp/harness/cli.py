"""Command-line entry point: ``urlbmdp run|sweep|plot|selfcheck``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..errors import ConfigError, ContractViolation
from .config import ExperimentConfig, expand_grid, load_config
from .output import emit_csv, emit_plot_data, read_csv
from .runner import run_experiment

OUTPUT_ENV = "URLBMDP_OUTPUT_DIR"


def _output_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "results")


def _default_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.algorithm}_{cfg.env}_H{cfg.H}_a{cfg.alpha:g}_s{cfg.seed}"


def _run_one(cfg: ExperimentConfig, out: Path, name: str) -> Path:
    records = list(run_experiment(cfg))
    path = emit_csv(records, out / f"{name}.csv")
    (out / f"{name}.cfg").write_text(cfg.dumps())
    finals = {}
    for r in records:
        finals[r.replicate] = r.mean_reward
    shown = " ".join(f"{v:.3f}" for v in finals.values())
    print(f"{path}: final mean reward per replicate: {shown}")
    return path


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    out = _output_dir(args.out)
    _run_one(cfg, out, args.name or _default_name(cfg))
    return 0


def cmd_sweep(args) -> int:
    try:
        grid = expand_grid(Path(args.grid).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read grid {args.grid}: {exc}") from exc
    base = load_config(args.config, args.set)
    out = _output_dir(args.out)
    # validate every combination before spending compute on any of them
    configs = []
    for combo in grid:
        try:
            configs.append((combo, base.replace(**combo)))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
    for combo, cfg in configs:
        suffix = "_".join(f"{k}-{v}" for k, v in combo.items())
        _run_one(cfg, out, f"{args.prefix}_{suffix}" if suffix else args.prefix)
    return 0


def cmd_plot(args) -> int:
    series = {Path(p).stem: read_csv(p) for p in args.csv}
    out = _output_dir(args.out)
    for path in emit_plot_data(series, out, args.name):
        print(path)
    return 0


def cmd_selfcheck(args) -> int:
    from ..selfcheck import run_checks

    failures = 0
    for name, ok, detail in run_checks():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += not ok
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urlbmdp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./results)")

    p = sub.add_parser("run", help="run one configuration and write its learning-curve CSV")
    common(p)
    p.add_argument("--name", help="output file stem")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every combination listed in a grid file")
    common(p)
    p.add_argument("grid", help="file of 'key = v1, v2, ...' lines")
    p.add_argument("--prefix", default="sweep", help="output file stem prefix")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="mean/std bands and an SVG from learning-curve CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out")
    p.add_argument("--name", default="curves", help="SVG file stem")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("selfcheck", help="run the built-in invariant checks")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, ContractViolation) as exc:
        print(f"urlbmdp: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"urlbmdp: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
