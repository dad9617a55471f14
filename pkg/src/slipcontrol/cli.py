"""Command line: ``run``, ``ablate`` and ``check-config``.

Exit codes: 0 all checks passed, 1 acceptance failure, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import default_config, load_config, validate
from .errors import ConfigError, SlipControlError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="slipcontrol", description="Navier-slip control laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the pipeline for the configured variant"),
                        ("ablate", "run designed and undesigned twins"),
                        ("check-config", "parse and echo a config")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", metavar="PATH", help="config file (defaults apply when omitted)")
        s.add_argument("--out", metavar="DIR", default="slipcontrol_out", help="report directory")
        s.add_argument("--eps-list", metavar="E1,E2,...", help="override [sweep] eps")
        s.add_argument("--workers", type=int, metavar="N", help="override [sweep] workers")
        s.add_argument("--seed", type=int, metavar="N", help="override [sweep] seed")
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    over = {}
    if args.eps_list is not None:
        over["sweep__eps"] = args.eps_list
    if args.workers is not None:
        over["sweep__workers"] = str(args.workers)
    if args.seed is not None:
        over["sweep__seed"] = str(args.seed)
    if over:
        try:
            cfg = cfg.with_values(**over)
            validate(cfg)
        except ConfigError as exc:
            raise ConfigError(f"command line:0: {str(exc).split(': ', 1)[-1]}") from None
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "check-config":
        sys.stdout.write(cfg.echo())
        return EXIT_OK

    from .pipeline import export_report, run_ablation, run_pipeline, summary_text

    try:
        report = (run_ablation if args.command == "ablate" else run_pipeline)(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SlipControlError, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    try:
        code = export_report(report, args.out)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    sys.stdout.write(summary_text(report))
    return code


def main_exit():
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
