"""``diffmpc`` command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime or solver error.
Progress goes to stderr; data only to files under ``--out``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from diffmpc.config import (default_accelerator_config, default_oscillator_config,
                            dump_config, load_config)
from diffmpc.errors import ConfigError, DiffMPCError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("diffmpc")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; a bad flag is a config error here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, config=True, steps=True):
    if config:
        p.add_argument("--config", type=Path, help="experiment YAML (default: built-in)")
    p.add_argument("--out", type=Path, help="output directory (created if absent)")
    p.add_argument("--seed", type=int, help="override the RNG seed")
    if steps:
        p.add_argument("--steps", type=int, help="override the number of control steps T")
    p.add_argument("-q", "--quiet", action="store_true", help="no progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diffmpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("run-accelerator", "closed-loop beamline tuning"),
                           ("run-oscillator", "closed-loop oscillator tracking with MHE")):
        _common(sub.add_parser(name, help=helptext))
    gc = sub.add_parser("grad-check", help="AD vs finite differences on every objective")
    _common(gc, config=False, steps=False)
    gc.add_argument("--points", type=int, default=100, help="random points per plant")
    vc = sub.add_parser("validate-config", help="parse and validate a config file")
    vc.add_argument("--config", type=Path, required=True)
    vc.add_argument("-q", "--quiet", action="store_true")
    ed = sub.add_parser("emit-defaults", help="write the default configs")
    ed.add_argument("--out", type=Path, default=Path("."))
    ed.add_argument("-q", "--quiet", action="store_true")
    return parser


def _experiment(args, default_factory, expected_plant):
    cfg = load_config(args.config) if args.config else default_factory()
    if cfg.plant.name != expected_plant:
        raise ConfigError(f"plant.name: this command runs the {expected_plant}, "
                          f"config selects {cfg.plant.name!r}")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.steps is not None:
        if args.steps < 1:
            raise ConfigError("--steps: must be at least 1")
        cfg = replace(cfg, steps=args.steps)
    if args.out is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    cfg.validate()
    return cfg


def _run(args, default_factory, plant_name) -> int:
    from diffmpc.loop import audit_inputs, run_closed_loop, write_log

    cfg = _experiment(args, default_factory, plant_name)

    def progress(t, rec):
        log.info("step %d/%d  max|y| %.6g  theta_hat %s", t + 1, cfg.steps,
                 float(abs(rec.y).max()), " ".join(f"{v:.6g}" for v in rec.theta_hat))

    runlog = run_closed_loop(cfg, progress)
    paths = write_log(runlog, cfg.out_dir)
    for problem in audit_inputs(runlog):
        log.warning("input audit: %s", problem)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def _grad_check(args) -> int:
    import csv

    from diffmpc.verify import GRAD_TOL, run_grad_checks

    results = run_grad_checks(args.points, 0 if args.seed is None else args.seed)
    worst: dict[str, float] = {}
    for name, rep in results:
        worst[name] = max(worst.get(name, 0.0), rep.max_rel_err)
    for name, err in worst.items():
        log.info("%-28s max rel err %.3e  %s", name, err, "ok" if err < GRAD_TOL else "FAIL")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "grad_check.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", "index", "max_rel_err"])
            for i, (name, rep) in enumerate(results):
                w.writerow([name, i, format(rep.max_rel_err, ".17g")])
    return EXIT_OK if all(e < GRAD_TOL for e in worst.values()) else EXIT_RUNTIME


def _emit_defaults(args) -> int:
    out = args.out
    for name, cfg in (("accelerator.yaml", default_accelerator_config()),
                      ("oscillator.yaml", default_oscillator_config())):
        path = dump_config(cfg, out / name)
        log.info("wrote %s", path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        if args.command == "run-accelerator":
            return _run(args, default_accelerator_config, "accelerator")
        if args.command == "run-oscillator":
            return _run(args, default_oscillator_config, "oscillator")
        if args.command == "grad-check":
            return _grad_check(args)
        if args.command == "validate-config":
            load_config(args.config)
            log.info("%s: ok", args.config)
            return EXIT_OK
        return _emit_defaults(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DiffMPCError, ArithmeticError, ValueError, OSError) as exc:
        log.error("runtime error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
