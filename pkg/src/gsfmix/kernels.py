"""Parametric kernel families ``f(y; theta)``.

Two families are provided:

* :class:`GaussianLocationKernel` - multivariate normal with mean ``theta`` and a
  covariance shared by all components (known, or re-estimated by EM).
* :class:`MultinomialKernel` - multinomial with ``M`` trials and cell
  probabilities ``theta`` on the open simplex.

Besides pointwise densities, every kernel exposes a *surrogate* interface used by
the M-step: for fixed responsibilities ``W`` the quantity

    -(1/n) * sum_i sum_j W[i, j] * log f(y_i; theta_j)

depends on the data only through a few per-component sums, so it and its
gradient can be evaluated in ``O(K d^2)`` regardless of ``n``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import Dataset, MixingMeasure
from .errors import DegenerateCovariance, InvalidAtom, InvalidObservation

LOG_2PI = np.log(2.0 * np.pi)
SIMPLEX_TOL = 1e-10
SIMPLEX_CLAMP = 1e-8
COV_FLOOR = 1e-8


class Identifiability(str, enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SurrogateStats:
    """Per-component sums defining the M-step objective for fixed responsibilities."""

    n: int
    weight_sums: np.ndarray          # (K,)
    centers: np.ndarray              # (K, d) weighted means (Gaussian) or count totals (multinomial)
    const: float                     # value of the objective that does not depend on theta


@dataclass(frozen=True)
class EMData:
    """Observations prepared for the compiled EM loop.

    ``Y`` is stored shifted by ``shift`` (the sample mean for the Gaussian
    kernel, zero otherwise) and ``gram`` is ``Y.T @ Y`` of the shifted data.
    ``log_coef`` holds the ``(n,)`` log multinomial coefficients.
    """

    Y: np.ndarray
    shift: np.ndarray
    gram: np.ndarray
    log_coef: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.Y.shape[0]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _component_draws(rng: np.random.Generator, measure: MixingMeasure, n: int) -> np.ndarray:
    return rng.choice(measure.K, size=n, p=np.asarray(measure.weights))


class GaussianLocationKernel:
    """Location family ``N(theta, Sigma)`` with a covariance shared across components."""

    kernel_id = "gaussian"

    def __init__(self, dim: int, covariance=None, covariance_mode: str = "known"):
        if covariance_mode not in ("known", "estimated"):
            raise ValueError(f"covariance_mode must be 'known' or 'estimated', not {covariance_mode!r}")
        cov = np.eye(dim) if covariance is None else np.array(covariance, dtype=float).reshape(dim, dim)
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise DegenerateCovariance("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= 0:
            raise DegenerateCovariance(f"covariance is not positive definite (min eigenvalue {eig[0]:g})")
        self.dim = int(dim)
        self.covariance_mode = covariance_mode
        self._set_covariance(cov)

    def _set_covariance(self, cov: np.ndarray):
        self.covariance = cov
        self.covariance.setflags(write=False)
        self._chol = np.linalg.cholesky(cov)
        # rows of Y @ whiten are L^{-1} y
        self._whiten = np.linalg.inv(self._chol).T
        self.precision = self._whiten @ self._whiten.T
        self._logdet = 2.0 * np.log(np.diag(self._chol)).sum()

    def __repr__(self):
        return f"GaussianLocationKernel(dim={self.dim}, covariance_mode={self.covariance_mode!r})"

    @property
    def estimates_covariance(self) -> bool:
        return self.covariance_mode == "estimated"

    @property
    def atom_df(self) -> int:
        return self.dim

    @property
    def covariance_df(self) -> int:
        return self.dim * (self.dim + 1) // 2 if self.estimates_covariance else 0

    def with_covariance(self, covariance) -> "GaussianLocationKernel":
        """Copy of this kernel with another covariance (assumed symmetric positive definite)."""
        new = object.__new__(GaussianLocationKernel)
        new.dim = self.dim
        new.covariance_mode = self.covariance_mode
        new._set_covariance(np.array(covariance, dtype=float))
        return new

    # -- validation --------------------------------------------------------
    def check_atoms(self, atoms) -> np.ndarray:
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        if atoms.shape[-1] != self.dim:
            raise InvalidAtom(f"atom dimension {atoms.shape[-1]} != kernel dimension {self.dim}")
        if not np.all(np.isfinite(atoms)):
            raise InvalidAtom("atoms must be finite")
        return atoms

    def check_observations(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[-1] != self.dim:
            raise InvalidObservation(f"observation dimension {Y.shape[-1]} != kernel dimension {self.dim}")
        if not np.all(np.isfinite(Y)):
            raise InvalidObservation("observations must be finite")
        return Y

    def project_atoms(self, atoms: np.ndarray) -> np.ndarray:
        return atoms

    def project_gradient(self, grad: np.ndarray) -> np.ndarray:
        return grad

    # -- densities ---------------------------------------------------------
    def log_density(self, y, theta) -> float:
        return float(self.log_density_matrix(np.atleast_2d(y), np.atleast_2d(theta))[0, 0])

    def grad_log_density(self, y, theta) -> np.ndarray:
        y = self.check_observations(y)[0]
        theta = self.check_atoms(theta)[0]
        return self.precision @ (y - theta)

    def log_density_matrix(self, Y, atoms, check: bool = True) -> np.ndarray:
        """``(n, K)`` matrix of ``log f(y_i; theta_j)``."""
        if check:
            Y = self.check_observations(Y)
            atoms = self.check_atoms(atoms)
        # Mahalanobis distances in whitened, centred coordinates
        shift = Y.mean(axis=0) if Y.shape[0] else 0.0
        Yw = (Y - shift) @ self._whiten
        Aw = (atoms - shift) @ self._whiten
        maha = np.einsum("il,il->i", Yw, Yw)[:, None] - 2.0 * (Yw @ Aw.T) + np.einsum("kl,kl->k", Aw, Aw)[None, :]
        np.maximum(maha, 0.0, out=maha)
        return -0.5 * (maha + (self._logdet + self.dim * LOG_2PI))

    def sample(self, measure: MixingMeasure, n: int, seed=None) -> Dataset:
        atoms = self.check_atoms(measure.atoms)
        rng = _rng(seed)
        labels = _component_draws(rng, measure, n)
        noise = rng.standard_normal((n, self.dim)) @ self._chol.T
        return Dataset(atoms[labels] + noise)

    def check_strong_identifiability(self, K: int) -> Identifiability:
        if K < 1:
            raise ValueError("K must be >= 1")
        if self.estimates_covariance:
            return Identifiability.UNKNOWN
        return Identifiability.SATISFIED

    # -- M-step surrogate --------------------------------------------------
    def surrogate_stats(self, Y: np.ndarray, W: np.ndarray) -> SurrogateStats:
        n = Y.shape[0]
        wsum = W.sum(axis=0)
        totals = W.T @ Y
        safe = np.where(wsum > 0, wsum, 1.0)
        means = totals / safe[:, None]
        # within-component scatter, the theta-independent part of the objective
        scatter = float(np.sum(self.precision * _weighted_scatter(Y, W, means)))
        const = 0.5 * scatter / n + 0.5 * (self._logdet + self.dim * LOG_2PI)
        return SurrogateStats(n, wsum, means, const)

    def surrogate_value(self, stats: SurrogateStats, atoms: np.ndarray) -> float:
        """Theta-dependent part of the M-step objective (add ``stats.const`` for the full value)."""
        r = atoms - stats.centers
        quad = np.einsum("kj,jl,kl->k", r, self.precision, r)
        return 0.5 * float(stats.weight_sums @ quad) / stats.n

    def surrogate_grad(self, stats: SurrogateStats, atoms: np.ndarray) -> np.ndarray:
        r = atoms - stats.centers
        return (stats.weight_sums[:, None] * r) @ self.precision / stats.n

    def closed_form_atoms(self, Y: np.ndarray, W: np.ndarray, atoms: np.ndarray) -> np.ndarray:
        wsum = W.sum(axis=0)
        new = (W.T @ Y) / np.where(wsum > 0, wsum, 1.0)[:, None]
        return np.where((wsum > 0)[:, None], new, atoms)

    def free_atom_params(self) -> int:
        return self.dim

    # -- repeated E-steps on fixed data --------------------------------------
    def em_data(self, Y) -> EMData:
        Y = np.asarray(Y, dtype=float)
        shift = Y.mean(axis=0) if Y.shape[0] else np.zeros(self.dim)
        Yc = np.ascontiguousarray(Y - shift)
        return EMData(Yc, shift, Yc.T @ Yc)


class MultinomialKernel:
    """Multinomial family with ``trials`` draws over ``categories`` cells."""

    kernel_id = "multinomial"
    covariance_mode = None
    estimates_covariance = False
    covariance = None
    covariance_df = 0

    def __init__(self, trials: int, categories: int):
        if int(trials) != trials or trials < 1:
            raise ValueError("trials must be a positive integer")
        if categories < 2:
            raise ValueError("a multinomial kernel needs at least two categories")
        self.trials = int(trials)
        self.dim = int(categories)

    def __repr__(self):
        return f"MultinomialKernel(trials={self.trials}, categories={self.dim})"

    @property
    def categories(self) -> int:
        return self.dim

    @property
    def atom_df(self) -> int:
        return self.dim - 1

    def with_covariance(self, covariance) -> "MultinomialKernel":
        return self

    def check_atoms(self, atoms) -> np.ndarray:
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        if atoms.shape[-1] != self.dim:
            raise InvalidAtom(f"atom dimension {atoms.shape[-1]} != number of categories {self.dim}")
        if np.any(~np.isfinite(atoms)) or np.any(atoms <= 0):
            raise InvalidAtom("multinomial atoms must lie in the open simplex")
        if np.any(np.abs(atoms.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
            raise InvalidAtom("multinomial atoms must sum to one")
        return atoms

    def check_observations(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[-1] != self.dim:
            raise InvalidObservation(f"observation has {Y.shape[-1]} cells, expected {self.dim}")
        if np.any(Y < 0) or np.any(Y != np.round(Y)):
            raise InvalidObservation("counts must be nonnegative integers")
        if np.any(Y.sum(axis=-1) != self.trials):
            raise InvalidObservation(f"counts must sum to {self.trials}")
        return Y

    def project_atoms(self, atoms: np.ndarray) -> np.ndarray:
        atoms = np.clip(atoms, SIMPLEX_CLAMP, 1.0 - SIMPLEX_CLAMP)
        return atoms / atoms.sum(axis=-1, keepdims=True)

    @staticmethod
    def project_gradient(grad: np.ndarray) -> np.ndarray:
        return grad - grad.mean(axis=-1, keepdims=True)

    def log_coefficients(self, Y: np.ndarray) -> np.ndarray:
        return gammaln(self.trials + 1.0) - gammaln(Y + 1.0).sum(axis=-1)

    def log_density(self, y, theta) -> float:
        return float(self.log_density_matrix(np.atleast_2d(y), np.atleast_2d(theta))[0, 0])

    def grad_log_density(self, y, theta) -> np.ndarray:
        """Gradient of ``log f`` in the sum-zero tangent space of the simplex."""
        y = self.check_observations(y)[0]
        theta = self.check_atoms(theta)[0]
        return self.project_gradient(y / theta)

    def log_density_matrix(self, Y, atoms, check: bool = True) -> np.ndarray:
        if check:
            Y = self.check_observations(Y)
            atoms = self.check_atoms(atoms)
        return self.log_coefficients(Y)[:, None] + Y @ np.log(atoms).T

    def sample(self, measure: MixingMeasure, n: int, seed=None) -> Dataset:
        atoms = self.check_atoms(measure.atoms)
        rng = _rng(seed)
        labels = _component_draws(rng, measure, n)
        if n == 0:
            return Dataset(np.zeros((0, self.dim)), trials=self.trials)
        counts = rng.multinomial(self.trials, atoms[labels])
        return Dataset(counts, trials=self.trials)

    def check_strong_identifiability(self, K: int) -> Identifiability:
        """Sufficient condition ``3K - 1 <= M`` for second-order identifiability."""
        if K < 1:
            raise ValueError("K must be >= 1")
        return Identifiability.SATISFIED if 3 * K - 1 <= self.trials else Identifiability.VIOLATED

    def surrogate_stats(self, Y: np.ndarray, W: np.ndarray) -> SurrogateStats:
        n = Y.shape[0]
        const = -float(self.log_coefficients(Y).sum()) / n
        return SurrogateStats(n, W.sum(axis=0), W.T @ Y, const)

    def surrogate_value(self, stats: SurrogateStats, atoms: np.ndarray) -> float:
        if np.any(atoms <= 0):
            return np.inf
        return -float(np.sum(stats.centers * np.log(atoms))) / stats.n

    def surrogate_grad(self, stats: SurrogateStats, atoms: np.ndarray) -> np.ndarray:
        return self.project_gradient(-stats.centers / atoms / stats.n)

    def closed_form_atoms(self, Y: np.ndarray, W: np.ndarray, atoms: np.ndarray) -> np.ndarray:
        totals = W.T @ Y
        rows = totals.sum(axis=1)
        new = totals / np.where(rows > 0, rows, 1.0)[:, None]
        new = np.where((rows > 0)[:, None], new, atoms)
        return self.project_atoms(new)

    def free_atom_params(self) -> int:
        return self.dim - 1

    # -- repeated E-steps on fixed data --------------------------------------
    def em_data(self, Y) -> EMData:
        Y = np.ascontiguousarray(Y, dtype=float)
        return EMData(Y, np.zeros(self.dim), Y.T @ Y, self.log_coefficients(Y))


def _weighted_scatter(Y: np.ndarray, W: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """``sum_ik W_ik (y_i - a_k)(y_i - a_k)^T`` via matrix products on centred data."""
    if Y.shape[0] == 0:
        return np.zeros((Y.shape[1], Y.shape[1]))
    shift = Y.mean(axis=0)
    Yc = Y - shift
    Ac = atoms - shift
    cross = (Yc.T @ W) @ Ac
    return (Yc * W.sum(axis=1)[:, None]).T @ Yc - cross - cross.T + (Ac * W.sum(axis=0)[:, None]).T @ Ac


def shared_covariance_update(dataset, responsibilities, atoms) -> np.ndarray:
    """Pooled ML covariance ``(1/n) sum_ij w_ij (y_i - theta_j)(y_i - theta_j)^T``.

    Eigenvalues are floored at ``1e-8 * trace / d``. Raises
    :class:`DegenerateCovariance` when the floor would have to lift every
    eigenvalue (the data carry no spread at all).
    """
    Y = dataset.observations if isinstance(dataset, Dataset) else np.atleast_2d(np.asarray(dataset, dtype=float))
    W = np.asarray(responsibilities, dtype=float)
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    n, d = Y.shape
    cov = _weighted_scatter(Y, W, atoms)
    return _floor_covariance(0.5 * (cov + cov.T) / n)


def _floor_covariance(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    floor = COV_FLOOR * np.trace(cov) / d
    low = eigval < floor
    if floor <= 0 or low.sum() > d - 1:
        raise DegenerateCovariance("pooled covariance has no spread to floor against")
    if low.any():
        eigval = np.maximum(eigval, floor)
        cov = (eigvec * eigval) @ eigvec.T
        cov = 0.5 * (cov + cov.T)
    return cov


def make_kernel(kernel_id: str, dim: int, trials: int | None = None, covariance=None,
                covariance_mode: str = "known"):
    if kernel_id == "gaussian":
        return GaussianLocationKernel(dim, covariance, covariance_mode)
    if kernel_id == "multinomial":
        if trials is None:
            raise ValueError("multinomial kernel requires a trial count")
        return MultinomialKernel(trials, dim)
    raise ValueError(f"unknown kernel {kernel_id!r}")
