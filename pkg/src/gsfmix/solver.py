"""Modified EM for the doubly penalized mixture likelihood.

Each outer iteration runs

1. an E-step (responsibilities, computed in log space),
2. the closed-form update of the mixing proportions under the log-barrier
   penalty ``-C sum log pi_j``,
3. a proximal-gradient M-step for the atoms. The atoms are expressed as a
   first atom plus consecutive differences along a cluster ordering, the
   folded-concave penalty is linearized at the current differences, and each
   prox step is a group soft-threshold of the differences,
4. optionally, the pooled covariance update (Gaussian kernel).

The plain EM used for the preliminary estimator and the information-criterion
baselines shares the same skeleton with closed-form atom updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from ._fast import (KIND_GAUSSIAN, KIND_MULTINOMIAL, MODE_CHAIN_LQA, MODE_CLOSED_FORM, MODE_FUSED, MODE_PAIRWISE,
                    STATUS_DEGENERATE_COV, STATUS_DIVERGED, VARIANT_ALASSO, VARIANT_MCP, VARIANT_SCAD,
                    em_loop, pgd_fused)
from ._fast import responsibilities as fast_responsibilities
from .core import Dataset, MixingMeasure, effective_order
from .errors import DegenerateCovariance, LineSearchDiverged
from .kernels import shared_covariance_update
from .ordering import ClusterOrdering, consecutive_differences, nn_chain_ordering
from .penalties import PhiPenalty, RPenalty, Variant, adaptive_weights, phi_value, r_deriv, r_value

TILDE_NORM_FLOOR = 1e-6
RHO_CAP = 1e12
PAIR_FUSE_TOL = 1e-3
LINESEARCH_RTOL = 1e-13


@dataclass(frozen=True)
class SolverConfig:
    eps_inner: float = 1e-5
    delta_outer: float = 1e-8
    max_em_iters: int = 2500
    max_pgd_iters: int = 1000
    rho0: float = 1.0
    rho_growth: float = 2.0
    n_starts: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("eps_inner", "delta_outer", "max_em_iters", "max_pgd_iters", "rho0", "n_starts"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.rho_growth > 1:
            raise ValueError("rho_growth must exceed 1")


@dataclass(frozen=True, eq=False)
class FitState:
    measure: MixingMeasure
    covariance: np.ndarray | None
    responsibilities: np.ndarray
    penalized_loglik: float
    loglik: float
    iterations: int
    converged: bool
    order: int
    eta_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: tuple = ()


def _observations(dataset) -> np.ndarray:
    return dataset.observations if isinstance(dataset, Dataset) else np.atleast_2d(np.asarray(dataset, dtype=float))


def _kernel_at(kernel, covariance):
    if covariance is None or not getattr(kernel, "estimates_covariance", False):
        return kernel
    return kernel.with_covariance(covariance)


def _responsibilities(log_dens: np.ndarray, weights: np.ndarray):
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    W, loglik = fast_responsibilities(np.ascontiguousarray(log_dens, dtype=float), log_weights)
    return W, float(loglik)


def e_step(kernel, dataset, measure: MixingMeasure, covariance=None) -> np.ndarray:
    """Posterior component probabilities ``w_ij``; rows sum to one."""
    kern = _kernel_at(kernel, covariance)
    log_dens = kern.log_density_matrix(_observations(dataset), measure.atoms)
    return _responsibilities(log_dens, np.asarray(measure.weights))[0]


def log_likelihood(kernel, dataset, measure: MixingMeasure, covariance=None) -> float:
    kern = _kernel_at(kernel, covariance)
    log_dens = kern.log_density_matrix(_observations(dataset), measure.atoms)
    return float(logsumexp(log_dens + np.log(measure.weights)[None, :], axis=1).sum())


def m_step_pi(responsibilities, phi: PhiPenalty) -> np.ndarray:
    W = np.asarray(responsibilities, dtype=float)
    n, K = W.shape
    return (W.sum(axis=0) + phi.c) / (n + K * phi.c)


def soft_threshold(z, t: float) -> np.ndarray:
    """Group soft-threshold ``(1 - t/||z||)_+ z`` with an exact zero when ``||z|| <= t``."""
    z = np.asarray(z, dtype=float)
    norm = np.linalg.norm(z)
    if norm <= t:
        return np.zeros_like(z)
    return (1.0 - t / norm) * z


def _soft_threshold_rows(Z: np.ndarray, t: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", Z, Z))
    scale = np.zeros_like(norms)
    keep = norms > t
    scale[keep] = 1.0 - t[keep] / norms[keep]
    return Z * scale[:, None]


# -- difference coordinates ------------------------------------------------

def to_eta(atoms: np.ndarray, ordering: ClusterOrdering) -> np.ndarray:
    """Rows: first atom in the ordering, then consecutive differences."""
    ordered = atoms[ordering.perm]
    eta = np.empty_like(ordered)
    eta[0] = ordered[0]
    eta[1:] = np.diff(ordered, axis=0)
    return eta


def from_eta(eta: np.ndarray, ordering: ClusterOrdering) -> np.ndarray:
    atoms = np.empty_like(eta)
    atoms[ordering.perm] = np.cumsum(eta, axis=0)
    return atoms


def eta_gradient(theta_grad: np.ndarray, ordering: ClusterOrdering) -> np.ndarray:
    """Chain rule through the cumulative sums: row ``l`` sums gradients of atoms ``l..K-1`` in order."""
    g = theta_grad[ordering.perm]
    return np.cumsum(g[::-1], axis=0)[::-1]


def surrogate_objective(kernel, stats, eta: np.ndarray, ordering: ClusterOrdering) -> float:
    """Full M-step objective ``-(1/n) sum_ij w_ij log f(y_i; theta_j)`` in difference coordinates."""
    return stats.const + kernel.surrogate_value(stats, from_eta(eta, ordering))


def surrogate_gradient(kernel, stats, eta: np.ndarray, ordering: ClusterOrdering) -> np.ndarray:
    return eta_gradient(kernel.surrogate_grad(stats, from_eta(eta, ordering)), ordering)


def difference_norms(atoms: np.ndarray) -> tuple[ClusterOrdering, np.ndarray]:
    ordering = nn_chain_ordering(atoms)
    diffs = consecutive_differences(atoms, ordering)
    return ordering, np.sqrt(np.einsum("ij,ij->i", diffs, diffs))


def penalty_weights(penalty: RPenalty, norms: np.ndarray, tilde_norms) -> np.ndarray:
    if not penalty.uses_weights or norms.size == 0:
        return np.ones_like(norms)
    if tilde_norms is None:
        raise ValueError("the adaptive lasso needs preliminary-fit difference norms")
    return adaptive_weights(norms, np.maximum(np.asarray(tilde_norms, dtype=float), TILDE_NORM_FLOOR),
                            penalty.beta)


@dataclass
class PGDTrace:
    """Diagnostics of one M-step; ``checks`` holds ``(Q(new), Qbar(new))`` per accepted step."""

    iterations: int = 0
    converged: bool = False
    checks: list = field(default_factory=list)


def m_step_theta_pgd(kernel, dataset, responsibilities, atoms, penalty: RPenalty, lam: float,
                     omegas, config: SolverConfig, stats=None, trace: PGDTrace | None = None) -> np.ndarray:
    """Proximal-gradient update of the atoms for fixed responsibilities.

    ``omegas`` are the adaptive weights of the K-1 differences (ignored by
    SCAD/MCP). The penalty derivatives are frozen at the incoming atoms.
    """
    atoms = np.array(atoms, dtype=float)
    if stats is None:
        stats = kernel.surrogate_stats(_observations(dataset), np.asarray(responsibilities))
    ordering = nn_chain_ordering(atoms)
    eta = to_eta(atoms, ordering)
    K = eta.shape[0]
    norms0 = np.sqrt(np.einsum("ij,ij->i", eta[1:], eta[1:]))
    omegas = np.ones(K - 1) if omegas is None else np.asarray(omegas, dtype=float)
    slopes = np.atleast_1d(r_deriv(penalty, lam, norms0, omegas)) if K > 1 else np.zeros(0)

    kind, precision = _fast_kind(kernel)
    if not np.isfinite(kernel.surrogate_value(stats, atoms)):
        raise LineSearchDiverged("M-step started outside the parameter space")
    checks = np.empty((config.max_pgd_iters if trace is not None else 0, 2))
    eta, iters, converged, status = pgd_fused(
        kind, np.ascontiguousarray(eta), ordering.perm.astype(np.int64), np.ascontiguousarray(slopes, dtype=float),
        np.asarray(stats.weight_sums, dtype=float), np.ascontiguousarray(stats.centers, dtype=float),
        precision, float(stats.n), float(config.rho0), float(config.rho_growth), float(config.eps_inner),
        int(config.max_pgd_iters), RHO_CAP * config.rho0, checks)
    if status == STATUS_DIVERGED:
        raise LineSearchDiverged(f"step size search exceeded rho={RHO_CAP * config.rho0:g}")
    if trace is not None:
        trace.iterations = int(iters)
        trace.converged = bool(converged)
        trace.checks.extend(map(tuple, checks[:iters]))
    return kernel.project_atoms(from_eta(eta, ordering))


def _fast_kind(kernel):
    if kernel.kernel_id == "multinomial":
        return KIND_MULTINOMIAL, np.zeros((1, 1))
    return KIND_GAUSSIAN, np.ascontiguousarray(kernel.precision, dtype=float)


def penalized_objective(loglik: float, weights, atoms, n: int, phi: PhiPenalty,
                        penalty: RPenalty | None, lam: float, tilde_norms=None) -> tuple[float, np.ndarray]:
    """``loglik - phi(pi) - n * sum_j r(||eta_j||; omega_j)`` and the difference norms."""
    _, norms = difference_norms(atoms)
    value = loglik - phi_value(phi, weights)
    if penalty is not None and norms.size:
        omegas = penalty_weights(penalty, norms, tilde_norms)
        value -= n * float(np.sum(r_value(penalty, lam, norms, omegas)))
    return value, norms


def initial_covariance(Y: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Pooled covariance with every observation assigned to its nearest atom.

    Falls back to the sample covariance when the hard assignment leaves no
    within-group spread (e.g. one atom per observation).
    """
    dist = np.sum((Y[:, None, :] - atoms[None, :, :]) ** 2, axis=-1)
    W = np.zeros_like(dist)
    W[np.arange(Y.shape[0]), np.argmin(dist, axis=1)] = 1.0
    try:
        return shared_covariance_update(Y, W, atoms)
    except DegenerateCovariance:
        return shared_covariance_update(Y, np.ones((Y.shape[0], 1)), Y.mean(axis=0, keepdims=True))


_VARIANT_CODES = {Variant.SCAD: VARIANT_SCAD, Variant.MCP: VARIANT_MCP, Variant.ALASSO: VARIANT_ALASSO}


def _run_em(kernel, dataset, init: MixingMeasure, phi: PhiPenalty, config: SolverConfig,
            mode: int, covariance=None, penalty: RPenalty | None = None, lam: float = 0.0,
            tilde_norms=None, record_history: bool = False) -> FitState:
    """Run the compiled EM loop and package its output as a :class:`FitState`."""
    Y = _observations(dataset)
    n = Y.shape[0]
    K = init.K
    atoms = kernel.check_atoms(np.array(init.atoms, dtype=float)).copy()
    weights = np.array(init.weights, dtype=float)
    data = kernel.em_data(Y)
    gaussian = kernel.kernel_id == "gaussian"
    estimate = bool(getattr(kernel, "estimates_covariance", False))
    if gaussian:
        if covariance is not None:
            cov = np.array(covariance, dtype=float)
        elif estimate:
            cov = initial_covariance(Y, atoms)
        else:
            cov = np.array(kernel.covariance, dtype=float)
        log_coef = np.zeros(0)
    else:
        cov = np.zeros((1, 1))
        log_coef = data.log_coef
    if penalty is None:
        variant, a, beta = VARIANT_SCAD, 3.7, 2.0
    else:
        variant, a, beta = _VARIANT_CODES[penalty.variant], float(penalty.a or 0.0), float(penalty.beta)
    tilde = np.ones(max(K - 1, 0))
    if penalty is not None and penalty.uses_weights and mode != MODE_CLOSED_FORM and K > 1:
        if tilde_norms is None:
            raise ValueError("the adaptive lasso needs preliminary-fit difference norms")
        tilde = np.maximum(np.asarray(tilde_norms, dtype=float), TILDE_NORM_FLOOR)
        if tilde.shape != (K - 1,):
            raise ValueError(f"expected {K - 1} preliminary difference norms, got {tilde.size}")
    (atoms, weights, cov, W, loglik, pen_ll, it, converged, status, history) = em_loop(
        KIND_GAUSSIAN if gaussian else KIND_MULTINOMIAL, mode, data.Y, log_coef, data.gram,
        np.ascontiguousarray(atoms - data.shift), weights, cov, estimate,
        float(phi.c), variant, float(lam), a, beta, tilde,
        float(config.eps_inner), float(config.delta_outer), int(config.max_em_iters),
        int(config.max_pgd_iters), float(config.rho0), float(config.rho_growth),
        RHO_CAP * config.rho0, bool(record_history))
    if status == STATUS_DIVERGED:
        raise LineSearchDiverged(f"step size search exceeded rho={RHO_CAP * config.rho0:g}")
    if status == STATUS_DEGENERATE_COV:
        raise DegenerateCovariance("pooled covariance has no spread to floor against")
    atoms = atoms + data.shift
    _, norms = difference_norms(atoms)
    return FitState(
        measure=MixingMeasure(atoms, weights),
        covariance=np.array(cov) if estimate else None,
        responsibilities=W,
        penalized_loglik=float(pen_ll),
        loglik=float(loglik),
        iterations=int(it),
        converged=bool(converged),
        order=1 + int(np.count_nonzero(norms)),
        eta_norms=norms,
        history=tuple(float(h) for h in history),
    )


def fit_gsf(kernel, dataset, K_bound: int, penalty: RPenalty, lam: float, tilde_norms,
            phi: PhiPenalty, config: SolverConfig, init: MixingMeasure, covariance=None,
            record_history: bool = False) -> FitState:
    """Maximize the doubly penalized log-likelihood from ``init`` (which has ``K_bound`` atoms).

    ``tilde_norms`` are the sorted-difference norms of the preliminary estimator,
    used only by the adaptive lasso to rebuild its weights every iteration.
    """
    if init.K != K_bound:
        raise ValueError(f"init has {init.K} atoms, expected K_bound={K_bound}")
    return _run_em(kernel, dataset, init, phi, config, MODE_FUSED, covariance=covariance,
                   penalty=penalty, lam=lam, tilde_norms=tilde_norms, record_history=record_history)


def fit_plain_em(kernel, dataset, K: int, phi: PhiPenalty, config: SolverConfig,
                 init: MixingMeasure, covariance=None, record_history: bool = False) -> FitState:
    """EM for ``l_n(G) - phi(pi)`` with closed-form atom updates."""
    if init.K != K:
        raise ValueError(f"init has {init.K} atoms, expected {K}")

    state = _run_em(kernel, dataset, init, phi, config, MODE_CLOSED_FORM, covariance=covariance,
                    record_history=record_history)
    # plain fits report the number of atoms, not fused classes
    return replace(state, order=K)


def fit_pairwise(kernel, dataset, K_bound: int, penalty: RPenalty, lam: float, phi: PhiPenalty,
                 config: SolverConfig, init: MixingMeasure, covariance=None, fuse_tol: float = PAIR_FUSE_TOL,
                 record_history: bool = False, pairs: str = "all") -> FitState:
    """EM with the fusion penalty on every pair of atoms instead of chain neighbours.

    The penalty is handled by a local quadratic approximation, which gives a
    closed-form M-step for Gaussian location kernels but never produces exact
    zeros, so ``order`` counts classes of atoms closer than ``fuse_tol``.
    ``pairs="chain"`` keeps the approximation but penalizes only neighbours
    along the nearest-neighbour chain, giving a like-for-like chain fit to set
    against the all-pairs one.
    """
    if pairs not in ("all", "chain"):
        raise ValueError(f"pairs must be 'all' or 'chain', got {pairs!r}")
    if init.K != K_bound:
        raise ValueError(f"init has {init.K} atoms, expected K_bound={K_bound}")
    if penalty.uses_weights:
        raise ValueError("all-pairs fusion supports SCAD and MCP only")
    if kernel.kernel_id != "gaussian":
        raise ValueError("all-pairs fusion is implemented for Gaussian kernels only")
    mode = MODE_PAIRWISE if pairs == "all" else MODE_CHAIN_LQA
    state = _run_em(kernel, dataset, init, phi, config, mode, covariance=covariance,
                    penalty=penalty, lam=lam, record_history=record_history)
    return replace(state, order=effective_order(state.measure, fuse_tol))


def _kmeanspp(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((points - points[idx[0]]) ** 2, axis=1)
    for _ in range(K - 1):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[idx]


def initialize(kernel, dataset, K: int, seed=None, n_starts: int = 1) -> list[MixingMeasure]:
    """k-means++ seeded starting measures with uniform weights, deterministic per ``seed``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    Y = _observations(dataset)
    multinomial = kernel.kernel_id == "multinomial"
    points = Y / kernel.trials if multinomial else Y
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_starts):
        if K == 1:
            atoms = points.mean(axis=0, keepdims=True)
            if multinomial:
                atoms = kernel.project_atoms(atoms)
        else:
            atoms = _kmeanspp(points, K, rng)
            if multinomial:
                # additive smoothing keeps seeds inside the open simplex
                atoms = (atoms * kernel.trials + 0.5) / (kernel.trials + 0.5 * kernel.dim)
        out.append(MixingMeasure(atoms, np.full(K, 1.0 / K)))
    return out


def fit_plain_em_multistart(kernel, dataset, K: int, phi: PhiPenalty, config: SolverConfig,
                            seed=None) -> FitState:
    """Best (by penalized log-likelihood) of ``config.n_starts`` plain EM runs."""
    seed = config.seed if seed is None else seed
    best = None
    for init in initialize(kernel, dataset, K, seed, config.n_starts):
        state = fit_plain_em(kernel, dataset, K, phi, config, init)
        if best is None or state.penalized_loglik > best.penalized_loglik:
            best = state
    return best
