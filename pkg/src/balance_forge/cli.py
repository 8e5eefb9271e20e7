"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 computation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import secrets
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .balance import KINDS
from .core import Allocation, THREADS_ENV, default_workers, load_covariates_file, standardize
from .designs import METHODS, DesignSpec
from .errors import BalanceForgeError, ComputationError, DataError, DomainError, ParseError

log = logging.getLogger("balance_forge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_COMPUTE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _c_grid(text):
    try:
        start, step, stop = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:step:stop, got {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("need step > 0 and stop >= start")
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def _add_design_flags(p, method_default="greedy", rerand_flag="--R"):
    p.add_argument("--method", choices=METHODS, default=method_default)
    p.add_argument("--objective", choices=KINDS, default="l1")
    p.add_argument("--weights", type=_float_list, default=None, help="w1,...,wp for weighted-l1")
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--b", type=float, default=2.0, help="extreme-set coefficient (greedy-restricted)")
    p.add_argument("--c-thresh", type=float, default=1.0, help="sum-difference threshold (greedy-restricted)")
    p.add_argument(rerand_flag, dest="R", type=int, default=100, help="draws for rerand-best")
    p.add_argument("--threshold", type=float, default=None, help="acceptance threshold for rerand-threshold")
    p.add_argument("--max-attempts", type=int, default=10 ** 6)


def build_parser() -> Parser:
    parser = Parser(prog="balance-forge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help=f"cap on parallel workers (default: ${THREADS_ENV} or all cores)")
    parser.add_argument("--config", default=None, help="JSON file of flag defaults for the subcommand")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("design", help="allocate subjects with a design method")
    p.add_argument("--covariates", required=True)
    _add_design_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("metrics", help="entropy and deviation randomness metrics of a design method")
    _add_design_flags(p)
    p.add_argument("--n", type=int, required=True, help="subjects per arm")
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--dist", choices=("normal", "exponential", "uniform"), default="normal")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--mode", choices=("redraw", "fixed"), default="redraw")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--bias-correct", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("simulate", help="run an (n, p) grid and write one CSV row per replicate")
    _add_design_flags(p)
    p.add_argument("--n-grid", type=_int_list, required=True)
    p.add_argument("--p-grid", type=_int_list, default=[1])
    p.add_argument("--dist", choices=("normal", "exponential", "uniform"), default="normal")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rates", help="fit the log-balance rate regression to simulate output")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("infer", help="permutation test and inverted confidence interval")
    p.add_argument("--covariates", required=True)
    p.add_argument("--responses", required=True, help="CSV with a single column y in subject order")
    p.add_argument("--design", required=True, help="design JSON holding the observed allocation")
    _add_design_flags(p, method_default=None, rerand_flag="--rerand-R")
    p.add_argument("--R", dest="resolution", type=int, default=999)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta0", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("optimal", help="exhaustive search for the minimum-balance allocation")
    p.add_argument("--covariates", required=True)
    p.add_argument("--objective", choices=KINDS, default="l1")
    p.add_argument("--weights", type=_float_list, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-symmetry", action="store_true")
    p.add_argument("--force", action="store_true", help="allow more than 30 subjects")
    p.add_argument("--out", default=None)

    p = sub.add_parser("theory", help="collision densities by quadrature against closed forms")
    p.add_argument("--dist", choices=("uniform", "exponential", "normal"), required=True)
    p.add_argument("--c-grid", type=_c_grid, default=_c_grid("0:0.1:2"))
    p.add_argument("--out", default=None)

    p = sub.add_parser("reproduce", help="regenerate table/figure data (CSV) and figures (PNG)")
    p.add_argument("--target", nargs="+", required=True,
                   choices=("table1", "table2", "fig1", "fig2", "fig34", "table3", "all"))
    p.add_argument("--scale", choices=("desk", "full"), default="desk")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    return parser


# -- helpers -----------------------------------------------------------------

def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
    return args.seed


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose", "config")}


def _emit_json(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_csv(rows, fields, path: Optional[str]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _spec(args, method=None) -> DesignSpec:
    params = {"restarts": args.restarts, "b": args.b, "c_thresh": args.c_thresh, "R": args.R,
              "threshold": args.threshold, "max_attempts": args.max_attempts}
    return DesignSpec(method or args.method, args.objective, args.weights, params)


def _workers(args) -> int:
    return args.threads if args.threads is not None else default_workers()


def _load_responses(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty responses file")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r and any(c.strip() for c in r)]
    if header != ["y"]:
        raise ParseError(f"responses file must have the single column 'y', got {header}")
    try:
        return np.array([float(r[0]) for r in body])
    except ValueError as e:
        raise ParseError(f"non-numeric response: {e}") from None


# -- subcommands -------------------------------------------------------------

def cmd_design(args) -> int:
    x = load_covariates_file(args.covariates)
    seed = _seed(args)
    spec = _spec(args)
    res = spec(x, seed)
    out = res.to_dict()
    out["objective"] = args.objective
    out["weights"] = args.weights
    out["config"] = _config(args)
    _emit_json(out, args.out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .randomness import estimate_pair_probabilities, randomness_report

    seed = _seed(args)
    est = estimate_pair_probabilities(_spec(args), args.n, args.p, args.dist, args.replicates, seed,
                                      mode=args.mode, workers=_workers(args))
    rep = randomness_report(est)
    out = {
        "entropy": rep.entropy,
        "deviation": rep.bias_corrected_deviation if args.bias_correct else rep.deviation,
        "raw_deviation": rep.deviation,
        "bias_corrected_deviation": rep.bias_corrected_deviation,
        "reference": rep.reference,
        "replicates": est.replicates,
        "seed": seed,
        "config": _config(args),
    }
    _emit_json(out, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simharness import run_grid, write_records

    seed = _seed(args)
    records = run_grid(args.n_grid, args.p_grid, args.dist, args.replicates, _spec(args), seed, _workers(args))
    write_records(args.out, records)
    with open(args.out + ".config.json", "w", encoding="utf-8") as fh:
        json.dump(_config(args), fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_rates(args) -> int:
    from .simharness import fit_rate_regression, read_records

    fit = fit_rate_regression(read_records(args.infile))
    out = fit.to_dict()
    out["config"] = _config(args)
    _emit_json(out, args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    from .inference import ExperimentData, invert_ci, null_allocations, permutation_test

    x = load_covariates_file(args.covariates)
    y = _load_responses(args.responses)
    with open(args.design, encoding="utf-8") as fh:
        design = json.load(fh)
    try:
        observed = Allocation(np.array(design["allocation"]))
    except (KeyError, TypeError) as e:
        raise ParseError(f"design file lacks a valid allocation: {e}") from None
    method = args.method or design.get("method", "greedy")
    if args.objective == "l1" and design.get("objective") and args.weights is None:
        args.objective = design["objective"]
        args.weights = design.get("weights")
    args.method = method
    spec = _spec(args, method)
    seed = _seed(args)
    data = ExperimentData(x, y, observed)
    nulls = null_allocations(x, spec, args.resolution, seed, _workers(args))
    res = permutation_test(data, args.resolution, spec, seed, beta0=args.beta0, alpha=args.alpha, nulls=nulls)
    res.ci = invert_ci(data, args.resolution, spec, args.alpha, seed, nulls=nulls)
    out = res.to_dict()
    out["seed"] = seed
    out["config"] = _config(args)
    _emit_json(out, args.out)
    return EXIT_OK


def cmd_optimal(args) -> int:
    from .balance import make_objective
    from .optimal import enumerate_optimal

    x = load_covariates_file(args.covariates)
    z = standardize(x)
    obj = make_objective(args.objective, z, args.weights)
    workers = args.workers if args.workers is not None else _workers(args)
    res = enumerate_optimal(z, obj, workers=workers, symmetry=not args.no_symmetry, force=args.force)
    out = res.to_dict()
    out["objective"] = args.objective
    out["config"] = _config(args)
    _emit_json(out, args.out)
    return EXIT_OK


def cmd_theory(args) -> int:
    from .kernels import kernel_table

    rows = kernel_table(args.dist, args.c_grid)
    _emit_csv(rows, list(rows[0]), args.out)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .simharness import TARGETS, reproduce

    seed = _seed(args)
    targets = TARGETS if "all" in args.target else args.target
    written = []
    for t in targets:
        written += reproduce(t, seed, args.scale, args.out_dir, _workers(args), figures=not args.no_figures)
    with open(os.path.join(args.out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(_config(args), fh, indent=2, sort_keys=True)
    for path in written:
        print(path)
    return EXIT_OK


COMMANDS = {
    "design": cmd_design,
    "metrics": cmd_metrics,
    "simulate": cmd_simulate,
    "rates": cmd_rates,
    "infer": cmd_infer,
    "optimal": cmd_optimal,
    "theory": cmd_theory,
    "reproduce": cmd_reproduce,
}


def _apply_config(parser: Parser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, encoding="utf-8") as fh:
            defaults = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {known.config}: {e}") from None
    command = next((a for a in rest if a in COMMANDS), None)
    sub = parser._subparsers._group_actions[0].choices.get(command) if command else None
    if sub is not None:
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except ComputationError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    except BalanceForgeError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_COMPUTE


def main() -> None:
    sys.exit(run())
