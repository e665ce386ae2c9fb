"""Simulation models, replication runner, CSV ingestion and report output.

Every replication draws its own seed from ``SeedSequence([seed, rep])``, so a
report depends only on the master seed and not on how replications are spread
over worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Dataset, MixingMeasure
from .errors import GSFError, ParseError, RaggedRows, TrialSumMismatch, UnknownModel
from .kernels import GaussianLocationKernel, MultinomialKernel
from .metrics import aggregate_selection
from .penalties import PhiPenalty, RPenalty
from .selection import (default_grid, ic_fits, preliminary_fit, select_from_fits, select_order_gsf,
                        select_order_gsf_hard, select_order_naive)
from .solver import SolverConfig

MAX_FAILURE_RATE = 0.10


# -- model registry ----------------------------------------------------------

def ar_covariance(d: int, rho: float = 0.5) -> np.ndarray:
    """``sigma_ij = rho ** |i - j|``."""
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


@dataclass(frozen=True, eq=False)
class SimModel:
    id: str
    kernel_id: str
    measure: MixingMeasure
    covariance: np.ndarray | None = None
    trials: int | None = None
    covariance_known: bool = False

    @property
    def K0(self) -> int:
        return self.measure.K

    @property
    def dim(self) -> int:
        return self.measure.dim

    def with_trials(self, trials: int) -> "SimModel":
        if self.kernel_id != "multinomial":
            raise ValueError("only multinomial models have a trial count")
        return replace(self, trials=int(trials))

    def sampling_kernel(self):
        if self.kernel_id == "multinomial":
            return MultinomialKernel(self.trials, self.dim)
        return GaussianLocationKernel(self.dim, self.covariance, "known")

    def fitting_kernel(self):
        """Kernel used for estimation.

        Gaussian models estimate the shared covariance unless ``covariance_known``
        is set, in which case the generating covariance is used as given.
        """
        if self.kernel_id == "multinomial":
            return MultinomialKernel(self.trials, self.dim)
        if self.covariance_known:
            return GaussianLocationKernel(self.dim, self.covariance, "known")
        return GaussianLocationKernel(self.dim, None, "estimated")

    def sample(self, n: int, seed) -> Dataset:
        return self.sampling_kernel().sample(self.measure, n, seed)


def _multinomial(model_id, weights, atoms, trials=50):
    return SimModel(model_id, "multinomial", MixingMeasure(atoms, weights), trials=trials)


def _gaussian(model_id, weights, atoms, ar=False, known=False):
    d = len(atoms[0])
    cov = ar_covariance(d) if ar else np.eye(d)
    return SimModel(model_id, "gaussian", MixingMeasure(atoms, weights), covariance=cov, covariance_known=known)


def _build_registry() -> dict[str, SimModel]:
    models = [
        _multinomial("multinomial-1", [.2, .8], [[.2, .2, .2, .2, .2], [.1, .3, .2, .1, .3]]),
        _multinomial("multinomial-2", [1 / 3] * 3,
                     [[.2, .2, .2, .2, .2], [.1, .3, .2, .1, .3], [.3, .1, .2, .3, .1]]),
        _multinomial("multinomial-3", [.25] * 4, [[.2, .2, .6], [.2, .6, .2], [.6, .2, .2], [.45, .1, .45]]),
        _multinomial("multinomial-4", [.2] * 5,
                     [[.2, .2, .6], [.6, .2, .2], [.45, .1, .45], [.2, .7, .1], [.1, .7, .2]]),
        _multinomial("multinomial-5", [1 / 6] * 6,
                     [[.2, .2, .6], [.2, .6, .2], [.6, .2, .2], [.45, .1, .45], [.2, .7, .1], [.1, .7, .2]]),
        _multinomial("multinomial-6", [1 / 7] * 7,
                     [[.2, .2, .6], [.2, .6, .2], [.6, .2, .2], [.45, .1, .45], [.1, .7, .2], [.7, .2, .1],
                      [.1, .2, .7]]),
        _multinomial("multinomial-7", [.125] * 8,
                     [[.2, .2, .2, .4], [.2, .2, .4, .2], [.2, .4, .2, .2], [.4, .2, .2, .2],
                      [.1, .3, .1, .5], [.1, .3, .5, .1], [.1, .5, .3, .1], [.5, .1, .3, .1]]),
    ]
    gaussian_means = {
        "1": ([.5, .5], [[0, 0], [2, 2]]),
        "2": ([.25] * 4, [[0, 0], [2, 2], [4, 4], [6, 6]]),
        "3": ([1 / 3] * 3, [[0, 0, 0, 0], [2.5, 1.5, 2, 1.5], [1.5, 3, 2.75, 2]]),
        "4": ([.2] * 5, [[0, 0, 0, 0, 0, 0], [-1.5, 2.25, -1, 0, .5, .75], [.25, 1.5, .75, .25, -.5, -1],
                         [-.25, .5, -2.5, 1.25, .75, 1.5], [-1, -1.5, -.25, 1.75, -.5, 2]]),
        "5": ([.2] * 5, [[0] * 8, [1, 1.5, .75, 2, 1.5, 1.75, .5, 2.5], [2, .75, 1.5, 1, 1.75, .5, 2.5, 1.5],
                         [1.5, 2, 1, .75, 2.5, 1.5, 1.75, .5], [.75, 1, 2, 1.5, .5, 2.5, 1.5, 1.75]]),
    }
    for key, (w, mu) in gaussian_means.items():
        models.append(_gaussian(f"gaussian-{key}a", w, mu, ar=False))
        models.append(_gaussian(f"gaussian-{key}b", w, mu, ar=True))
    models.append(_gaussian("f1", [.5, .5], [[-2, 0], [0, 1]], known=True))
    models.append(_gaussian("f2", [1 / 3] * 3, [[1, 2], [1, 0], [-1, -1]], known=True))
    return {m.id: m for m in models}


REGISTRY = _build_registry()


def registry_lookup(model_id: str) -> SimModel:
    try:
        return REGISTRY[model_id]
    except KeyError:
        raise UnknownModel(f"unknown model {model_id!r}; known: {', '.join(sorted(REGISTRY))}") from None


# -- replications ------------------------------------------------------------

METHODS = ("gsf-scad", "gsf-mcp", "gsf-alasso", "gsf-hard", "aic", "bic", "naive-scad", "naive-mcp",
           "lqa-scad", "lqa-mcp")


@dataclass(frozen=True)
class RunConfig:
    model: str
    n: int
    replications: int = 100
    K_bound: int = 12
    methods: tuple = ("gsf-scad",)
    seed: int = 0
    output_dir: str | None = None
    workers: int = 1
    trials: int | None = None
    phi_c: float = 3.0
    grid_count: int = 40
    warm_start: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.K_bound < 1:
            raise ValueError("K_bound must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "methods", tuple(self.methods))
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")


@dataclass(frozen=True)
class SelectionReport:
    model: str
    K0: int
    n: int
    K_bound: int
    seed: int
    methods: tuple
    orders: tuple            # per replication: tuple of selected orders (None where the method failed)
    failures: tuple          # (rep, method, message)

    def selections(self, method: str) -> list[int]:
        j = self.methods.index(method)
        return [rep[j] for rep in self.orders if rep[j] is not None]

    def proportion(self, method: str, order: int | None = None) -> float:
        """Fraction of successful replications in which ``method`` selected ``order`` (default ``K0``)."""
        sel = self.selections(method)
        target = self.K0 if order is None else order
        return sum(o == target for o in sel) / len(sel) if sel else float("nan")

    def summary(self) -> dict:
        pairs = [(m, o) for rep in self.orders for m, o in zip(self.methods, rep) if o is not None]
        return aggregate_selection(pairs, self.K0) if pairs else {}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["orders"] = [list(r) for r in self.orders]
        d["failures"] = [list(f) for f in self.failures]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionReport":
        return cls(d["model"], int(d["K0"]), int(d["n"]), int(d["K_bound"]), int(d["seed"]),
                   tuple(d["methods"]), tuple(tuple(r) for r in d["orders"]),
                   tuple(tuple(f) for f in d["failures"]))


def replication_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(rep)]).generate_state(1, dtype=np.uint32)[0])


def run_methods(model: SimModel, dataset: Dataset, methods, K_bound: int, phi: PhiPenalty,
                solver: SolverConfig, grid_count: int = 40, warm_start: bool = True) -> dict:
    """Selected order per method; a failed method maps to its error message (a ``str``)."""
    kernel = model.fitting_kernel()
    n = dataset.n
    out = {}
    prelim = None
    fits = None

    def preliminary():
        nonlocal prelim
        if prelim is None:
            prelim = preliminary_fit(kernel, dataset, K_bound, phi, solver)
        return prelim

    for method in methods:
        try:
            if method.startswith("gsf-") and method != "gsf-hard":
                penalty = RPenalty(method[4:])
                grid = default_grid(kernel.kernel_id, penalty.variant, n, grid_count)
                sel = select_order_gsf(kernel, dataset, K_bound, penalty, phi, grid, solver,
                                       warm_start, preliminary())
            elif method == "gsf-hard":
                sel = select_order_gsf_hard(kernel, dataset, K_bound, phi, solver, preliminary=preliminary())
            elif method in ("aic", "bic"):
                if fits is None:
                    fits = ic_fits(kernel, dataset, K_bound, solver)
                sel = select_from_fits(fits, kernel, n, method)
            else:
                pairs, variant = ("all", method[6:]) if method.startswith("naive-") else ("chain", method[4:])
                penalty = RPenalty(variant)
                grid = default_grid(kernel.kernel_id, penalty.variant, n, grid_count)
                sel = select_order_naive(kernel, dataset, K_bound, penalty, phi, grid, solver,
                                         warm_start, preliminary(), pairs=pairs)
            out[method] = sel.order
        except (GSFError, np.linalg.LinAlgError) as exc:
            out[method] = f"{type(exc).__name__}: {exc}"
    return out


def _one_replication(args):
    config, model, rep = args
    rseed = replication_seed(config.seed, rep)
    dataset = model.sample(config.n, rseed)
    solver = replace(config.solver, seed=rseed)
    return run_methods(model, dataset, config.methods, config.K_bound, PhiPenalty(config.phi_c),
                       solver, config.grid_count, config.warm_start)


def resolve_model(config: RunConfig) -> SimModel:
    model = registry_lookup(config.model)
    if config.trials is not None:
        model = model.with_trials(config.trials)
    return model


class ReplicationFailure(GSFError):
    """More than the tolerated fraction of replications failed."""


def run_replications(config: RunConfig) -> SelectionReport:
    """Run every method on ``config.replications`` simulated datasets.

    Replications are independent given their seeds; results are collected in
    replication order whatever the number of workers.
    """
    model = resolve_model(config)
    jobs = [(config, model, rep) for rep in range(config.replications)]
    if config.workers == 1:
        results = [_one_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_one_replication, jobs))
    orders, failures = [], []
    failed_reps = 0
    for rep, res in enumerate(results):
        row = []
        bad = False
        for m in config.methods:
            val = res[m]
            if isinstance(val, str):
                failures.append((rep, m, val))
                row.append(None)
                bad = True
            else:
                row.append(int(val))
        failed_reps += bad
        orders.append(tuple(row))
    if failed_reps > MAX_FAILURE_RATE * config.replications:
        raise ReplicationFailure(f"{failed_reps} of {config.replications} replications failed; "
                                 f"first error: {failures[0][2]}")
    report = SelectionReport(model.id, model.K0, config.n, config.K_bound, config.seed,
                             config.methods, tuple(orders), tuple(failures))
    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        emit_report(report, "json", out / "report.json")
        emit_report(report, "csv", out / "report.csv")
    return report


# -- I/O ---------------------------------------------------------------------

def _parse_rows(text: str, header: bool) -> tuple[list[str] | None, np.ndarray]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    names = None
    if header and rows:
        names, rows = rows[0], rows[1:]
    if not rows:
        raise ParseError("no data rows")
    width = len(rows[0])
    values = []
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise RaggedRows(f"row {i} has {len(row)} fields, expected {width}")
        vals = []
        for j, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"row {i}, column {j}: cannot parse {cell.strip()!r} as a number") from None
            if not math.isfinite(v):
                raise ParseError(f"row {i}, column {j}: non-finite value")
            vals.append(v)
        values.append(vals)
    return names, np.array(values, dtype=float)


def ingest_csv(path, kernel_id: str = "gaussian", header: bool = False, trials: int | None = None) -> Dataset:
    """Read a rectangular numeric CSV into a :class:`Dataset`.

    Row numbers in error messages count data rows from 1. For multinomial data
    the trial count is the common row sum unless ``trials`` is given.
    """
    text = Path(path).read_text()
    _, Y = _parse_rows(text, header)
    if kernel_id == "gaussian":
        return Dataset(Y)
    if kernel_id != "multinomial":
        raise ValueError(f"unknown kernel {kernel_id!r}")
    bad = np.flatnonzero((Y < 0) | (Y != np.round(Y)))
    if bad.size:
        i, j = divmod(int(bad[0]), Y.shape[1])
        raise ParseError(f"row {i + 1}, column {j + 1}: counts must be nonnegative integers")
    sums = Y.sum(axis=1)
    M = int(trials) if trials is not None else int(sums[0])
    off = np.flatnonzero(sums != M)
    if off.size:
        i = int(off[0])
        raise TrialSumMismatch(f"row {i + 1} sums to {int(sums[i])}, expected {M}")
    return Dataset(Y, trials=M)


def report_table(report: SelectionReport) -> tuple[list[str], list[list]]:
    """Rows ``K_hat`` with the proportion of replications selecting it per method."""
    top = max([report.K0] + [o for rep in report.orders for o in rep if o is not None])
    header = ["K_hat", *report.methods]
    rows = []
    for k in range(1, top + 1):
        rows.append([k] + [report.proportion(m, k) for m in report.methods])
    return header, rows


def emit_report(report: SelectionReport, fmt: str = "csv", path=None) -> str:
    """Write ``report`` as a ``K_hat`` x method table (csv) or as its full record (json)."""
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        header, rows = report_table(report)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [f"{v:.3f}" for v in row[1:]])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def read_report(text: str) -> SelectionReport:
    return SelectionReport.from_dict(json.loads(text))
