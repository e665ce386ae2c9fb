"""Command-line interface: ``gsfmix {fit,path,select,simulate,bench,eval}``.

Every flag can also be given in a config file (``--config FILE``) as
``key=value`` lines or a JSON object, with keys spelled like the flags
(``k-bound`` or ``k_bound``). Flags given on the command line win.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import MixingMeasure
from .errors import (AllZeroLikelihood, DataError, DegenerateCovariance, EmptyPath, GSFError, InvalidAtom,
                     InvalidObservation, LineSearchDiverged, MeasureError, UnknownModel, ZeroTildeNorm)
from .harness import METHODS, RunConfig, emit_report, ingest_csv, registry_lookup, run_replications
from .kernels import GaussianLocationKernel, MultinomialKernel
from .metrics import wasserstein
from .penalties import PhiPenalty, RPenalty
from .selection import (GridSpec, default_grid, fit_path, preliminary_fit, select_order_gsf,
                        select_order_gsf_hard, select_order_ic, select_order_naive)
from .solver import SolverConfig, difference_norms, fit_gsf

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

DATA_ERRORS = (DataError, InvalidObservation, InvalidAtom, MeasureError, UnknownModel, OSError,
               json.JSONDecodeError)
NUMERICAL_ERRORS = (DegenerateCovariance, LineSearchDiverged, AllZeroLikelihood, EmptyPath, ZeroTildeNorm,
                    np.linalg.LinAlgError)


class UsageError(Exception):
    """Raised instead of exiting when the command line is malformed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- argument groups ---------------------------------------------------------

def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("data", nargs="?", help="observations CSV (one row per observation)")
    g.add_argument("--kernel", choices=("gaussian", "multinomial"), default="gaussian")
    g.add_argument("--trials", type=int, help="multinomial trial count (default: common row sum)")
    g.add_argument("--covariance", default="estimate",
                   help="Gaussian covariance: identity, estimate, or file:PATH (CSV matrix)")
    g.add_argument("--header", action="store_true", help="skip the first CSV row")


def _add_penalty(p):
    g = p.add_argument_group("penalty")
    g.add_argument("--penalty", choices=("scad", "mcp", "alasso"), default="scad")
    g.add_argument("--scad-a", type=float, default=3.7)
    g.add_argument("--mcp-a", type=float, default=3.0)
    g.add_argument("--alasso-beta", type=float, default=2.0)
    g.add_argument("--phi-c", type=float, default=3.0, help="mixing-proportion penalty constant")


def _add_solver(p):
    g = p.add_argument_group("solver")
    g.add_argument("--eps-inner", type=float, default=1e-5)
    g.add_argument("--delta-outer", type=float, default=1e-8)
    g.add_argument("--max-em-iters", type=int, default=2500)
    g.add_argument("--max-pgd-iters", type=int, default=1000)
    g.add_argument("--starts", type=int, default=5, help="random starts for the preliminary fit")
    g.add_argument("--seed", type=int, default=0)


def _add_grid(p):
    g = p.add_argument_group("tuning grid")
    g.add_argument("--grid-count", type=int, default=40)
    g.add_argument("--lambda-min", type=float, help="override the default grid lower end")
    g.add_argument("--lambda-max", type=float, help="override the default grid upper end")
    g.add_argument("--no-warm-start", dest="warm_start", action="store_false",
                   help="start every grid point from the preliminary fit")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gsfmix", description="Order selection in finite mixtures by Group-Sort-Fuse.")
    parser.add_argument("--config", help="config file (key=value lines or JSON)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="GSF fit at one lambda")
    _add_data(p), _add_penalty(p), _add_solver(p)
    p.add_argument("--k-bound", type=int, default=12)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--output", help="write the fit as JSON here (default: stdout)")

    p = sub.add_parser("path", help="regularization path as CSV")
    _add_data(p), _add_penalty(p), _add_solver(p), _add_grid(p)
    p.add_argument("--k-bound", type=int, default=12)
    p.add_argument("--output", help="path CSV (default: stdout)")

    p = sub.add_parser("select", help="select the order with a tuned method")
    _add_data(p), _add_penalty(p), _add_solver(p), _add_grid(p)
    p.add_argument("--method", choices=("gsf", "gsf-hard", "aic", "bic", "naive-gsf"), default="gsf")
    p.add_argument("--k-bound", type=int, default=12)
    p.add_argument("--output", help="selection JSON (default: stdout)")
    p.add_argument("--path-output", help="also write the regularization path CSV here")

    p = sub.add_parser("simulate", help="draw a dataset from a registry model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, help="override the multinomial trial count")
    p.add_argument("--output", help="dataset CSV (default: stdout)")

    p = sub.add_parser("bench", help="replicated order selection on a registry model")
    _add_solver(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--k-bound", type=int, default=12)
    p.add_argument("--methods", default="gsf-scad", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--trials", type=int, help="override the multinomial trial count")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--phi-c", type=float, default=3.0)
    p.add_argument("--grid-count", type=int, default=40)
    p.add_argument("--no-warm-start", dest="warm_start", action="store_false")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", help="report file (default: stdout)")
    p.add_argument("--output-dir", help="also write report.csv and report.json here")

    p = sub.add_parser("eval", help="Wasserstein distances between two measure JSON files")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--output", help="result JSON (default: stdout)")
    return parser


# -- config files ------------------------------------------------------------

def read_config(path) -> dict:
    """Parse a JSON object or ``key=value`` lines (``#`` starts a comment)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for i, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{i}: expected key=value")
            key, val = line.split("=", 1)
            raw[key.strip()] = val.strip()
    return {k.lstrip("-").replace("-", "_"): v for k, v in raw.items()}


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok in COMMANDS:
            return None
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv`` with config-file values as defaults, so explicit flags win."""
    path = _config_path(argv)
    command = next((tok for tok in argv if tok in COMMANDS), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    config = read_config(path)
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in config.items():
        key = "lam" if key == "lambda" else key
        action = actions.get(key)
        if action is None or key == "help":
            raise UsageError(f"unknown config key {key!r} for '{command}'")
        if isinstance(action, (argparse._StoreFalseAction, argparse._StoreTrueAction)):
            val = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes", "on")
        elif action.type is not None and not isinstance(val, bool):
            try:
                val = action.type(val)
            except ValueError:
                raise UsageError(f"config key {key!r}: invalid value {val!r}") from None
        if action.choices is not None and val not in action.choices:
            raise UsageError(f"config key {key!r}: invalid choice {val!r}")
        defaults[key] = val
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- builders ----------------------------------------------------------------

def _solver(args) -> SolverConfig:
    return SolverConfig(eps_inner=args.eps_inner, delta_outer=args.delta_outer, max_em_iters=args.max_em_iters,
                        max_pgd_iters=args.max_pgd_iters, n_starts=args.starts, seed=args.seed)


def _penalty(args) -> RPenalty:
    a = {"scad": args.scad_a, "mcp": args.mcp_a}.get(args.penalty)
    return RPenalty(args.penalty, a=a, beta=args.alasso_beta)


def _load(args):
    if not args.data:
        raise UsageError("a data CSV is required")
    dataset = ingest_csv(args.data, args.kernel, header=args.header, trials=args.trials)
    if args.kernel == "multinomial":
        return MultinomialKernel(dataset.trials, dataset.dim), dataset
    spec = args.covariance
    if spec == "identity":
        kernel = GaussianLocationKernel(dataset.dim, None, "known")
    elif spec == "estimate":
        kernel = GaussianLocationKernel(dataset.dim, None, "estimated")
    elif spec.startswith("file:"):
        cov = np.loadtxt(spec[5:], delimiter=",", ndmin=2)
        kernel = GaussianLocationKernel(dataset.dim, cov, "known")
    else:
        raise UsageError(f"--covariance must be identity, estimate or file:PATH, not {spec!r}")
    return kernel, dataset


def _grid(args, kernel, penalty, n) -> GridSpec:
    base = default_grid(kernel.kernel_id, penalty.variant, n, args.grid_count)
    lo = base.lambda_min if args.lambda_min is None else args.lambda_min
    hi = base.lambda_max if args.lambda_max is None else args.lambda_max
    return GridSpec(lo, hi, args.grid_count)


def _write(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _measure_json(measure: MixingMeasure, covariance=None, **extra) -> dict:
    out = dict(extra)
    out["weights"] = measure.weights.tolist()
    out["atoms"] = measure.atoms.tolist()
    if covariance is not None:
        out["covariance"] = np.asarray(covariance).tolist()
    return out


# -- commands ----------------------------------------------------------------

def cmd_fit(args) -> int:
    kernel, dataset = _load(args)
    config, phi, penalty = _solver(args), PhiPenalty(args.phi_c), _penalty(args)
    prelim = preliminary_fit(kernel, dataset, args.k_bound, phi, config)
    _, tilde = difference_norms(prelim.measure.atoms)
    state = fit_gsf(kernel, dataset, args.k_bound, penalty, args.lam, tilde, phi, config, prelim.measure,
                    covariance=prelim.covariance)
    merged = state.measure.merged()
    out = _measure_json(merged, state.covariance, order=state.order, **{"lambda": args.lam},
                        loglik=state.loglik, penalized_loglik=state.penalized_loglik,
                        converged=state.converged, iterations=state.iterations)
    _write(json.dumps(out, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_path(args) -> int:
    kernel, dataset = _load(args)
    penalty = _penalty(args)
    path = fit_path(kernel, dataset, args.k_bound, penalty, PhiPenalty(args.phi_c),
                    _grid(args, kernel, penalty, dataset.n), _solver(args), args.warm_start)
    _write(path.to_csv(), args.output)
    return EXIT_OK


def cmd_select(args) -> int:
    kernel, dataset = _load(args)
    config, phi, penalty = _solver(args), PhiPenalty(args.phi_c), _penalty(args)
    if args.method == "gsf":
        sel = select_order_gsf(kernel, dataset, args.k_bound, penalty, phi,
                               _grid(args, kernel, penalty, dataset.n), config, args.warm_start)
    elif args.method == "naive-gsf":
        sel = select_order_naive(kernel, dataset, args.k_bound, penalty, phi,
                                 _grid(args, kernel, penalty, dataset.n), config, args.warm_start)
    elif args.method == "gsf-hard":
        sel = select_order_gsf_hard(kernel, dataset, args.k_bound, phi, config)
    else:
        sel = select_order_ic(kernel, dataset, args.k_bound, args.method, config)
    rec = None
    if sel.path is not None:
        rec = next(r for r in sel.path.records if r.lam == sel.lam)
        if args.path_output:
            Path(args.path_output).write_text(sel.path.to_csv())
    criterion = "aic" if args.method == "aic" else "bic"
    cov = sel.covariance if sel.covariance is not None else getattr(kernel, "covariance", None)
    out = _measure_json(sel.measure, cov, order=sel.order, **{"lambda": sel.lam, criterion: sel.criterion},
                        loglik=rec.loglik if rec is not None else None)
    _write(json.dumps(out, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = registry_lookup(args.model)
    if args.trials is not None:
        model = model.with_trials(args.trials)
    if args.n < 0:
        raise UsageError("--n must be nonnegative")
    dataset = model.sample(args.n, args.seed)
    Y = dataset.observations
    fmt = "%d" if model.kernel_id == "multinomial" else "%.17g"
    lines = [",".join(fmt % v for v in row) for row in Y]
    _write("".join(line + "\n" for line in lines), args.output)
    return EXIT_OK


def cmd_bench(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    try:
        config = RunConfig(model=args.model, n=args.n, replications=args.replications, K_bound=args.k_bound,
                           methods=methods, seed=args.seed, output_dir=args.output_dir, workers=args.workers,
                           trials=args.trials, phi_c=args.phi_c, grid_count=args.grid_count,
                           warm_start=args.warm_start, solver=_solver(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    registry_lookup(args.model)
    report = run_replications(config)
    _write(emit_report(report, args.format), args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    a = MixingMeasure.from_json(Path(args.first).read_text())
    b = MixingMeasure.from_json(Path(args.second).read_text())
    out = {"w1": wasserstein(a, b, 1), "w2": wasserstein(a, b, 2)}
    _write(json.dumps(out) + "\n", args.output)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "path": cmd_path, "select": cmd_select, "simulate": cmd_simulate,
            "bench": cmd_bench, "eval": cmd_eval}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help and --version exit through argparse
        return int(exc.code or 0)
    except NUMERICAL_ERRORS as exc:
        print(f"gsfmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DATA_ERRORS as exc:
        print(f"gsfmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GSFError as exc:
        print(f"gsfmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"gsfmix: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
