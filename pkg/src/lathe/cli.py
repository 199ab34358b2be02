"""Command-line entry point: ``lathe <subcommand> ...``.

Exit status is 0 on success, 1 on a usage or validation error and 2 when
``verify-bounds`` finds a failing inequality.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys

from . import exponents, harness
from .errors import ConfigError, LatheError
from .graph_metrics import Forest, greedy_2packing

EXIT_OK, EXIT_INVALID, EXIT_VERIFY = 0, 1, 2

# Example tree used to illustrate the greedy packing.
PACKING_DEMO_EDGES = (
    (1, 2), (1, 3), (2, 4), (2, 5), (3, 6), (3, 7), (4, 8), (5, 9), (8, 10), (8, 11),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        try:
            fh = open(path, "w", newline="")
        except OSError as exc:
            raise LatheError(f"cannot open {path}: {exc}") from exc
        with fh:
            yield fh


def _grid(step: float):
    return exponents.rho_grid(0.01, 0.99, step)


def cmd_simulate(args) -> int:
    overrides = dict(
        structure=args.structure,
        p=args.p,
        levels=args.levels,
        rhos=harness.parse_floats(args.rho) if args.rho else None,
        n_grid=harness.parse_n_grid(args.n) if args.n else None,
        trials=args.trials,
        seed=args.seed,
        workers=args.workers,
        out=args.out,
        trace_out=args.trace_out,
        allow_assumption_violation=args.allow_assumption_violation or None,
    )
    config = harness.load_config(args.config, **overrides)
    config.validate()
    with _output(config.out) as out, contextlib.ExitStack() as stack:
        trace = stack.enter_context(_output(config.trace_out)) if config.trace_out else None
        harness.run_experiment(config, out, trace)
    return EXIT_OK


def cmd_exponents(args) -> int:
    names = sorted(exponents.CURVES) if "all" in args.curve else args.curve
    grid = _grid(args.grid_step)
    with _output(args.out) as out:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("rho", "value", "label"))
        for name in names:
            for r, v, label in exponents.exponent_curve(name, grid).rows():
                w.writerow((format(r, ".10g"), format(v, ".12g"), label))
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    report = exponents.verify_bounds(_grid(args.grid_step))
    with _output(args.out) as out:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("check", "rho", "lhs", "rhs", "margin", "pass"))
        for r in report.rows:
            w.writerow((r.check, format(r.rho, ".10g"), format(r.lhs, ".12g"),
                        format(r.rhs, ".12g"), format(r.margin, ".6g"), int(r.passed)))
    failed = {r.check for r in report.failures()}
    for name, (margin, rho) in sorted(report.worst_margins().items()):
        status = "FAIL" if name in failed else "pass"
        print(f"{name:8s} worst margin {margin:+.6g} at rho={rho:g}  {status}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_packing_demo(args) -> int:
    tree = Forest(range(1, 12), PACKING_DEMO_EDGES)
    result = greedy_2packing(tree, tree.edges)
    with _output(args.out) as out:
        print("greedy 2-packing, rooted at node 1", file=out)
        for step, (edge, removed) in enumerate(result.trace, 1):
            dropped = ", ".join(f"{{{u},{v}}}" for u, v in removed)
            print(f"step {step}: select {{{edge[0]},{edge[1]}}}; delete {dropped}", file=out)
        sel = ", ".join(f"{{{u},{v}}}" for u, v in result.selected)
        print(f"packing size {result.size}: {sel}", file=out)
    return EXIT_OK


def cmd_slope(args) -> int:
    rows = harness.read_summary_csv(args.csv)
    slopes = harness.slopes_by_series(rows)
    with _output(args.out) as out:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("structure", "rho", "algorithm", "slope", "residual", "points"))
        for (structure, rho, algo), est in slopes.items():
            if est is None:
                w.writerow((structure, rho, algo, "", "", 0))
            else:
                w.writerow((structure, rho, algo, format(est.slope, ".8g"),
                            format(est.residual, ".6g"), est.points))
        for (structure, rho, algo), est in slopes.items():
            if algo != "active":
                continue
            base = slopes.get((structure, rho, "passive"))
            if est is not None and base is not None:
                print(f"{structure} rho={rho:g}: active/passive slope ratio "
                      f"{est.slope / base.slope:.4f}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--workers", type=int, default=None, help="worker processes")
    common.add_argument("--out", default=None, help="output path (default: stdout)")

    parser = _Parser(prog="lathe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="passive vs active Monte Carlo")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--structure", choices=harness.STRUCTURES)
    p.add_argument("--p", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--rho", help="comma-separated correlations")
    p.add_argument("--n", help="vector-sample grid, start:stop:step or comma list")
    p.add_argument("--trials", type=int)
    p.add_argument("--trace-out", help="per-trial diagnostics CSV")
    p.add_argument("--allow-assumption-violation", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("exponents", parents=[common], help="emit exponent curves as CSV")
    p.add_argument("--curve", action="append", default=None,
                   help=f"one of {', '.join(sorted(exponents.CURVES))}, or all")
    p.add_argument("--grid-step", type=float, default=0.005)
    p.set_defaults(func=cmd_exponents)

    p = sub.add_parser("verify-bounds", parents=[common], help="check the exponent inequalities")
    p.add_argument("--grid-step", type=float, default=0.005)
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("packing-demo", parents=[common], help="trace the greedy 2-packing")
    p.set_defaults(func=cmd_packing_demo)

    p = sub.add_parser("slope", parents=[common], help="fit error-exponent slopes from a summary CSV")
    p.add_argument("csv", help="summary CSV written by simulate")
    p.set_defaults(func=cmd_slope)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "curve", "unset") is None:
        args.curve = ["k-passive"]
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except LatheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
