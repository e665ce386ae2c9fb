"""Order selection: tuning grids, regularization paths, GSF-Hard and information criteria.

A path is fitted by starting from the preliminary estimator (the
log-barrier penalized MLE with ``K_bound`` atoms) and sweeping the tuning
parameter upwards, each fit warm-started from the previous one. The selected
model is the record with the smallest BIC.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import MixingMeasure, PathRecord, RegularizationPath
from .errors import EmptyPath, GSFError, InvalidGrid
from .ordering import nn_chain_ordering
from .penalties import PhiPenalty, RPenalty, Variant
from .solver import (PAIR_FUSE_TOL, FitState, SolverConfig, difference_norms, fit_gsf, fit_pairwise,
                     fit_plain_em_multistart, log_likelihood)

DEFAULT_GRID_COUNT = 40
HARD_GRID_COUNT = 10
HARD_GRID_RANGE = (1.25, 1.5)


@dataclass(frozen=True)
class GridSpec:
    lambda_min: float
    lambda_max: float
    count: int = DEFAULT_GRID_COUNT
    spacing: str = "log"

    def __post_init__(self):
        if self.spacing not in ("log", "linear"):
            raise InvalidGrid(f"spacing must be 'log' or 'linear', not {self.spacing!r}")
        if self.count < 2:
            raise InvalidGrid("a grid needs at least two points")
        if self.lambda_min < 0:
            raise InvalidGrid("lambda_min must be nonnegative")
        if not self.lambda_max > self.lambda_min:
            raise InvalidGrid(f"lambda_max={self.lambda_max:g} must exceed lambda_min={self.lambda_min:g}")
        if self.spacing == "log" and self.lambda_min == 0:
            raise InvalidGrid("log spacing needs lambda_min > 0")

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.lambda_min, self.lambda_max, self.count)
        return np.linspace(self.lambda_min, self.lambda_max, self.count)


def default_grid(kernel_id: str, penalty_variant, n: int, count: int = DEFAULT_GRID_COUNT) -> GridSpec:
    """Default tuning range for a kernel family, penalty and sample size."""
    if n < 2:
        raise InvalidGrid("n must be at least 2")
    variant = Variant(penalty_variant)
    gaussian = kernel_id == "gaussian"
    if kernel_id not in ("gaussian", "multinomial"):
        raise ValueError(f"unknown kernel {kernel_id!r}")
    if variant is Variant.ALASSO:
        lam_min = 0.01
        lam_max = n ** -0.5 * np.log(n) if gaussian else n ** -0.35
    else:
        lam_min = 0.1 if gaussian else 0.4
        lam_max = n ** -0.25 * np.log(n)
    return GridSpec(lam_min, float(lam_max), count)


def hard_grid(n: int, count: int = HARD_GRID_COUNT) -> np.ndarray:
    """Linear grid on ``[1.25, 1.5] * n^(-1/4) log n`` used by GSF-Hard."""
    scale = n ** -0.25 * np.log(n)
    return np.linspace(HARD_GRID_RANGE[0] * scale, HARD_GRID_RANGE[1] * scale, count)


# -- information criteria ----------------------------------------------------

def degrees_of_freedom(kernel, order: int) -> int:
    if order < 1:
        raise ValueError("order must be >= 1")
    return order * kernel.atom_df + (order - 1) + kernel.covariance_df


def bic_of(fit, kernel, n: int, order: int) -> float:
    """``-2 loglik + df log n``; ``fit`` is a :class:`FitState` or a log-likelihood value."""
    loglik = fit.loglik if isinstance(fit, FitState) else float(fit)
    return -2.0 * loglik + degrees_of_freedom(kernel, order) * np.log(n)


def aic_of(fit, kernel, n: int, order: int) -> float:
    loglik = fit.loglik if isinstance(fit, FitState) else float(fit)
    return -2.0 * loglik + 2.0 * degrees_of_freedom(kernel, order)


# -- regularization paths ----------------------------------------------------

@dataclass(frozen=True)
class Selection:
    order: int
    measure: MixingMeasure
    lam: float | None
    criterion: float
    path: RegularizationPath | None = None
    covariance: np.ndarray | None = None


def _n_obs(dataset) -> int:
    return dataset.n if hasattr(dataset, "n") else np.atleast_2d(dataset).shape[0]


def preliminary_fit(kernel, dataset, K_bound: int, phi: PhiPenalty, config: SolverConfig) -> FitState:
    """Log-barrier penalized MLE with ``K_bound`` atoms (best of ``config.n_starts`` starts)."""
    return fit_plain_em_multistart(kernel, dataset, K_bound, phi, config)


def _trace_path(kernel, dataset, K_bound, lambdas, fit_one: Callable, start: FitState,
                warm_start: bool) -> RegularizationPath:
    n = _n_obs(dataset)
    records = []
    prev = start
    for lam in lambdas:
        init = prev if warm_start else start
        try:
            state = fit_one(float(lam), init.measure, init.covariance)
        except GSFError as exc:
            records.append(PathRecord(float(lam), init.measure, K_bound, float("nan"), float("inf"),
                                      False, 0, error=f"{type(exc).__name__}: {exc}"))
            continue
        records.append(PathRecord(
            lam=float(lam), measure=state.measure, order=state.order, loglik=state.loglik,
            bic=bic_of(state, kernel, n, state.order), converged=state.converged,
            iterations=state.iterations, penalized_loglik=state.penalized_loglik,
            covariance=state.covariance))
        prev = state
    return RegularizationPath(tuple(records), kernel.kernel_id, n, K_bound)


def fit_path(kernel, dataset, K_bound: int, penalty: RPenalty, phi: PhiPenalty, grid: GridSpec,
             config: SolverConfig, warm_start: bool = True, preliminary: FitState | None = None
             ) -> RegularizationPath:
    """GSF fits along ``grid`` (ascending), each recorded with its order and BIC.

    A record whose fit raised a solver error is kept with ``error`` set and an
    infinite BIC, and the sweep continues from the last successful fit.
    """
    if K_bound < 1:
        raise ValueError("K_bound must be >= 1")
    prelim = preliminary if preliminary is not None else preliminary_fit(kernel, dataset, K_bound, phi, config)
    _, tilde = difference_norms(prelim.measure.atoms)

    def fit_one(lam, init, cov):
        return fit_gsf(kernel, dataset, K_bound, penalty, lam, tilde, phi, config, init, covariance=cov)

    return _trace_path(kernel, dataset, K_bound, grid.values(), fit_one, prelim, warm_start)


def best_record(path: RegularizationPath) -> PathRecord:
    """Minimal-BIC record; ties go to the smaller lambda."""
    usable = [r for r in path.records if r.error is None and np.isfinite(r.bic)]
    if not usable:
        raise EmptyPath("no successful fit on the regularization path")
    return min(usable, key=lambda r: (r.bic, r.lam))


def _selection_from_path(path: RegularizationPath, fuse_tol: float = 0.0) -> Selection:
    rec = best_record(path)
    return Selection(rec.order, rec.measure.merged(fuse_tol), rec.lam, rec.bic, path, rec.covariance)


def select_order_gsf(kernel, dataset, K_bound: int, penalty: RPenalty, phi: PhiPenalty,
                     grid: GridSpec | None = None, config: SolverConfig | None = None,
                     warm_start: bool = True, preliminary: FitState | None = None) -> Selection:
    """Order and mixing measure of the BIC-selected point on the GSF path."""
    config = config or SolverConfig()
    grid = grid or default_grid(kernel.kernel_id, penalty.variant, _n_obs(dataset))
    path = fit_path(kernel, dataset, K_bound, penalty, phi, grid, config, warm_start, preliminary)
    return _selection_from_path(path)


# -- GSF-Hard ----------------------------------------------------------------

def gsf_hard(tilde: MixingMeasure, lam: float) -> MixingMeasure:
    """Merge chain-consecutive atoms closer than ``lam``.

    Atoms are visited along the nearest-neighbour chain ordering; a block grows
    while the next consecutive distance is at most ``lam`` and is replaced by
    the unweighted mean of its atoms carrying the pooled weight.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    atoms = np.asarray(tilde.atoms)
    weights = np.asarray(tilde.weights)
    perm = nn_chain_ordering(atoms).perm
    blocks = [[perm[0]]]
    for prev, cur in zip(perm[:-1], perm[1:]):
        if np.linalg.norm(atoms[cur] - atoms[prev]) <= lam:
            blocks[-1].append(cur)
        else:
            blocks.append([cur])
    new_atoms = np.array([atoms[b].mean(axis=0) for b in blocks])
    new_weights = np.array([weights[b].sum() for b in blocks])
    return MixingMeasure(new_atoms, new_weights / new_weights.sum())


def select_order_gsf_hard(kernel, dataset, K_bound: int, phi: PhiPenalty, config: SolverConfig | None = None,
                          lambdas=None, preliminary: FitState | None = None) -> Selection:
    """GSF-Hard over its default grid, scored by BIC at the merged measure (no refit)."""
    config = config or SolverConfig()
    n = _n_obs(dataset)
    prelim = preliminary if preliminary is not None else preliminary_fit(kernel, dataset, K_bound, phi, config)
    lambdas = hard_grid(n) if lambdas is None else np.asarray(lambdas, dtype=float)
    best = None
    for lam in lambdas:
        merged = gsf_hard(prelim.measure, float(lam))
        loglik = log_likelihood(kernel, dataset, merged, prelim.covariance)
        crit = bic_of(loglik, kernel, n, merged.K)
        if best is None or crit < best.criterion:
            best = Selection(merged.K, merged, float(lam), crit, None, prelim.covariance)
    if best is None:
        raise EmptyPath("empty GSF-Hard grid")
    return best


# -- information criteria over k ---------------------------------------------

def ic_fits(kernel, dataset, K_max: int, config: SolverConfig | None = None) -> list[FitState]:
    """Unpenalized multi-start EM fits for ``k = 1..K_max``."""
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    config = config or SolverConfig()
    no_phi = PhiPenalty(0.0)
    return [fit_plain_em_multistart(kernel, dataset, k, no_phi, config) for k in range(1, K_max + 1)]


def select_from_fits(fits: list[FitState], kernel, n: int, criterion: str = "bic") -> Selection:
    """Order minimizing AIC or BIC among fits of orders ``1..len(fits)`` (ties go to the smaller order)."""
    criterion = criterion.lower()
    if criterion not in ("aic", "bic"):
        raise ValueError(f"criterion must be 'aic' or 'bic', not {criterion!r}")
    score = bic_of if criterion == "bic" else aic_of
    best = None
    for k, state in enumerate(fits, start=1):
        crit = score(state, kernel, n, k)
        if best is None or crit < best.criterion:
            best = Selection(k, state.measure, None, crit, None, state.covariance)
    if best is None:
        raise EmptyPath("no fits to compare")
    return best


def select_order_ic(kernel, dataset, K_max: int, criterion: str = "bic",
                    config: SolverConfig | None = None) -> Selection:
    """Unpenalized EM for ``k = 1..K_max`` (multi-start); order minimizing AIC or BIC."""
    if criterion.lower() not in ("aic", "bic"):
        raise ValueError(f"criterion must be 'aic' or 'bic', not {criterion!r}")
    return select_from_fits(ic_fits(kernel, dataset, K_max, config), kernel, _n_obs(dataset), criterion)


# -- naive all-pairs variant -------------------------------------------------

def fit_naive_gsf(kernel, dataset, K_bound: int, penalty: RPenalty, phi: PhiPenalty, lam: float,
                  config: SolverConfig | None = None, init: MixingMeasure | None = None,
                  covariance=None, fuse_tol: float = PAIR_FUSE_TOL) -> FitState:
    """All-pairs fusion fit at one ``lam``, started from the preliminary estimator unless ``init`` is given."""
    config = config or SolverConfig()
    if init is None:
        prelim = preliminary_fit(kernel, dataset, K_bound, phi, config)
        init, covariance = prelim.measure, prelim.covariance
    return fit_pairwise(kernel, dataset, K_bound, penalty, lam, phi, config, init,
                        covariance=covariance, fuse_tol=fuse_tol)


def fit_naive_path(kernel, dataset, K_bound: int, penalty: RPenalty, phi: PhiPenalty, grid: GridSpec,
                   config: SolverConfig, warm_start: bool = True, preliminary: FitState | None = None,
                   fuse_tol: float = PAIR_FUSE_TOL, pairs: str = "all") -> RegularizationPath:
    prelim = preliminary if preliminary is not None else preliminary_fit(kernel, dataset, K_bound, phi, config)

    def fit_one(lam, init, cov):
        return fit_pairwise(kernel, dataset, K_bound, penalty, lam, phi, config, init,
                            covariance=cov, fuse_tol=fuse_tol, pairs=pairs)

    return _trace_path(kernel, dataset, K_bound, grid.values(), fit_one, prelim, warm_start)


def select_order_naive(kernel, dataset, K_bound: int, penalty: RPenalty, phi: PhiPenalty,
                       grid: GridSpec | None = None, config: SolverConfig | None = None,
                       warm_start: bool = True, preliminary: FitState | None = None,
                       fuse_tol: float = PAIR_FUSE_TOL, pairs: str = "all") -> Selection:
    """BIC-tuned all-pairs variant; same grid and criterion as :func:`select_order_gsf`.

    ``pairs="chain"`` runs the chain penalty through the same quadratic
    approximation, for a comparison where only the penalized pairs differ.
    """
    config = config or SolverConfig()
    grid = grid or default_grid(kernel.kernel_id, penalty.variant, _n_obs(dataset))
    path = fit_naive_path(kernel, dataset, K_bound, penalty, phi, grid, config, warm_start, preliminary,
                          fuse_tol, pairs)
    return _selection_from_path(path, fuse_tol)
