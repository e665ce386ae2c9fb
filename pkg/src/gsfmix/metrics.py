"""Evaluation utilities: Wasserstein distances, Voronoi cells and selection frequencies."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import linprog

from .core import MixingMeasure
from .errors import DimensionMismatch, GSFError, UnsupportedOrder

MAX_SUPPORT = 64
SUPPORTED_ORDERS = (1, 2)


@dataclass(frozen=True)
class TransportPlan:
    q: np.ndarray
    cost: float


def _cost_matrix(a: MixingMeasure, b: MixingMeasure, r: int) -> np.ndarray:
    diff = np.asarray(a.atoms)[:, None, :] - np.asarray(b.atoms)[None, :, :]
    return np.sqrt(np.einsum("jkl,jkl->jk", diff, diff)) ** r


def optimal_transport(a: MixingMeasure, b: MixingMeasure, r: int = 1) -> TransportPlan:
    """Exact optimal coupling for the cost ``||theta_j - theta'_k||^r``.

    The transportation LP is solved by dual simplex, which returns a vertex of
    the feasible polytope; the cost is then recomputed from the clipped plan.
    """
    if r not in SUPPORTED_ORDERS:
        raise UnsupportedOrder(f"order r={r} is not supported (use 1 or 2)")
    if a.dim != b.dim:
        raise DimensionMismatch(f"atom dimensions differ: {a.dim} vs {b.dim}")
    K, L = a.K, b.K
    if max(K, L) > MAX_SUPPORT:
        raise ValueError(f"at most {MAX_SUPPORT} atoms per measure are supported")
    C = _cost_matrix(a, b, r)
    wa, wb = np.asarray(a.weights), np.asarray(b.weights)
    if K == 1 or L == 1:
        q = np.outer(wa, wb)
    else:
        rows = np.kron(np.eye(K), np.ones(L))
        cols = np.kron(np.ones(K), np.eye(L))
        res = linprog(C.ravel(), A_eq=np.vstack([rows, cols[:-1]]), b_eq=np.concatenate([wa, wb[:-1]]),
                      bounds=(0, None), method="highs-ds",
                      options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
        if res.status != 0:
            raise GSFError(f"transport LP failed: {res.message}")
        q = np.maximum(res.x.reshape(K, L), 0.0)
    return TransportPlan(q, float(np.sum(q * C)))


def wasserstein(a: MixingMeasure, b: MixingMeasure, r: int = 1) -> float:
    """Wasserstein distance ``W_r(a, b)`` between two finite mixing measures."""
    return optimal_transport(a, b, r).cost ** (1.0 / r)


def voronoi_assign(fitted_atoms, true_atoms) -> list[np.ndarray]:
    """Indices of fitted atoms whose nearest true atom is ``k``, for each ``k``.

    Exact ties go to the true atom with the smallest index.
    """
    fitted = np.atleast_2d(np.asarray(fitted_atoms, dtype=float))
    true = np.atleast_2d(np.asarray(true_atoms, dtype=float))
    if fitted.shape[1] != true.shape[1]:
        raise DimensionMismatch(f"atom dimensions differ: {fitted.shape[1]} vs {true.shape[1]}")
    dist = np.linalg.norm(fitted[:, None, :] - true[None, :, :], axis=-1)
    nearest = np.argmin(dist, axis=1)
    return [np.flatnonzero(nearest == k) for k in range(true.shape[0])]


@dataclass(frozen=True)
class MethodSummary:
    method: str
    counts: dict
    total: int
    correct: float


def aggregate_selection(results: Iterable[tuple[str, int]], K0: int) -> dict[str, MethodSummary]:
    """Per-method histogram of selected orders and the proportion equal to ``K0``."""
    results = list(results)
    if not results:
        raise ValueError("no selections to aggregate")
    by_method: dict[str, list[int]] = {}
    for method, order in results:
        by_method.setdefault(method, []).append(int(order))
    out = {}
    for method, orders in by_method.items():
        counts = Counter(orders)
        out[method] = MethodSummary(method, dict(sorted(counts.items())), len(orders),
                                    counts.get(K0, 0) / len(orders))
    return out
