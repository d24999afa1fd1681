"""Command-line experiment runner.

Three subcommands: `run` executes the sweep of one config file, `compare`
adds cross-method deviation and onset reporting, `reproduce` runs a canned
figure from the registry.  Exit codes: 0 success, 2 configuration error,
3 I/O error, 4 numerical non-convergence at any requested point under
--strict (without --strict such points are failure markers in the CSV).
"""

from __future__ import annotations

import argparse
import os
import sys

from .experiments import (
    ConfigError,
    compare_methods,
    comparison_csv_text,
    load_config,
    plot_sweep_svg,
    reproduce_figure,
    run_sweep,
    sweep_csv_text,
    write_manifest,
    write_sweep_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NONCONVERGED = 4


def _parser():
    parser = argparse.ArgumentParser(
        prog="floqdot",
        description="transport sweeps for a periodically driven quantum dot",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required):
        if config_required:
            p.add_argument("--config", required=True,
                           help="INI config file path")
        p.add_argument("--set", dest="overrides", action="append",
                       default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config entry (repeatable)")
        p.add_argument("--strict", action="store_true",
                       help="exit 4 if any sweep point fails to converge")

    run_p = sub.add_parser("run", help="run one sweep to CSV, SVG, manifest")
    common(run_p, True)
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--no-svg", action="store_true",
                       help="skip the SVG plot")

    cmp_p = sub.add_parser(
        "compare", help="run a multi-method sweep and report deviations"
    )
    common(cmp_p, True)
    cmp_p.add_argument("--out", help="optional output directory for CSVs")

    rep_p = sub.add_parser("reproduce", help="run a canned figure")
    common(rep_p, False)
    rep_p.add_argument("--figure", type=int, required=True,
                       choices=range(2, 9), help="figure number")
    rep_p.add_argument("--out", help="output directory (default figureN)")

    return parser


def _log(msg):
    print(msg, file=sys.stderr)


def _cmd_run(args):
    config = load_config(args.config, args.overrides)
    result = run_sweep(config, log=_log)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    write_sweep_csv(result, csv_path)
    outputs = ["sweep.csv"]
    if not args.no_svg:
        svg_path = os.path.join(args.out, "sweep.svg")
        plot_sweep_svg(result, svg_path)
        outputs.append("sweep.svg")
    timings = {m: round(float(result.wall[m].sum()), 3)
               for m in config.methods}
    write_manifest(os.path.join(args.out, "manifest.json"),
                   {"sweep": config}, timings, outputs + ["manifest.json"])
    print(f"wrote {', '.join(outputs + ['manifest.json'])} to {args.out}")
    failed = sum(len(v) for v in result.failures.values())
    if failed:
        print(f"{failed} point evaluations failed; markers are in the CSV")
        if args.strict:
            return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_compare(args):
    config = load_config(args.config, args.overrides)
    report = compare_methods(config, log=_log)
    print(report.summary())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "compare.csv"), "w",
                  encoding="utf-8", newline="") as fh:
            fh.write(comparison_csv_text(report))
        write_sweep_csv(report.result, os.path.join(args.out, "sweep.csv"))
        timings = {m: round(float(report.result.wall[m].sum()), 3)
                   for m in config.methods}
        write_manifest(os.path.join(args.out, "manifest.json"),
                       {"compare": config}, timings,
                       ["compare.csv", "sweep.csv", "manifest.json"])
        print(f"wrote compare.csv, sweep.csv, manifest.json to {args.out}")
    if args.strict and report.result.has_failures:
        return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_reproduce(args):
    out = args.out or f"figure{args.figure}"
    outputs, any_failures = reproduce_figure(
        args.figure, out, overrides=args.overrides, log=_log
    )
    print(f"wrote {', '.join(outputs)} to {out}")
    if args.strict and any_failures:
        return EXIT_NONCONVERGED
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "reproduce": _cmd_reproduce,
    }[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
