"""Penalties on mixing proportions and on atom differences.

``PhiPenalty`` is the log-barrier ``-c * sum(log pi_j)`` keeping proportions
away from zero. ``RPenalty`` covers the SCAD, MCP and adaptive-lasso penalties
applied to the norms of consecutive atom differences.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveWeight, ZeroTildeNorm


class Variant(str, enum.Enum):
    SCAD = "scad"
    MCP = "mcp"
    ALASSO = "alasso"


DEFAULT_SHAPE = {Variant.SCAD: 3.7, Variant.MCP: 3.0}


@dataclass(frozen=True)
class PhiPenalty:
    c: float = 3.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("phi constant must be nonnegative")


@dataclass(frozen=True)
class RPenalty:
    variant: Variant = Variant.SCAD
    a: float | None = None
    beta: float = 2.0

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        if self.a is None and variant in DEFAULT_SHAPE:
            object.__setattr__(self, "a", DEFAULT_SHAPE[variant])
        if variant is Variant.SCAD and not self.a > 2:
            raise ValueError("SCAD requires a > 2")
        if variant is Variant.MCP and not self.a > 1:
            raise ValueError("MCP requires a > 1")
        if variant is Variant.ALASSO and not self.beta > 1:
            raise ValueError("adaptive lasso requires beta > 1")

    @property
    def uses_weights(self) -> bool:
        return self.variant is Variant.ALASSO


def phi_value(p: PhiPenalty, weights) -> float:
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise NonPositiveWeight("phi penalty is undefined for nonpositive proportions")
    return float(-p.c * np.sum(np.log(weights)))


def r_deriv(p: RPenalty, lam: float, eta, omega=1.0):
    """Right derivative ``r'_lambda(eta; omega)`` for ``eta >= 0`` (vectorized)."""
    eta = np.abs(np.asarray(eta, dtype=float))
    if p.variant is Variant.SCAD:
        out = np.where(eta <= lam, lam, np.maximum(p.a * lam - eta, 0.0) / (p.a - 1.0))
    elif p.variant is Variant.MCP:
        out = np.maximum(lam - eta / p.a, 0.0)
    else:
        out = lam * np.asarray(omega, dtype=float) * np.ones_like(eta)
    return out if out.ndim else float(out)


def r_value(p: RPenalty, lam: float, eta, omega=1.0):
    """Closed-form ``r_lambda(eta; omega)``, the integral of :func:`r_deriv` from 0."""
    eta = np.abs(np.asarray(eta, dtype=float))
    if p.variant is Variant.SCAD:
        a = p.a
        mid = (2.0 * a * lam * eta - eta ** 2 - lam ** 2) / (2.0 * (a - 1.0))
        out = np.where(eta <= lam, lam * eta,
                       np.where(eta <= a * lam, mid, lam ** 2 * (a + 1.0) / 2.0))
    elif p.variant is Variant.MCP:
        a = p.a
        out = np.where(eta <= a * lam, lam * eta - eta ** 2 / (2.0 * a), a * lam ** 2 / 2.0)
    else:
        out = lam * np.asarray(omega, dtype=float) * eta
    return out if out.ndim else float(out)


def adaptive_weights(current_eta_norms, tilde_eta_norms, beta: float) -> np.ndarray:
    """Rank-matched adaptive-lasso weights.

    The ``k``-th largest current difference norm receives the weight built from
    the ``k``-th largest preliminary-fit norm, ``tilde ** -beta``. Ties are
    resolved by original index.
    """
    cur = np.asarray(current_eta_norms, dtype=float)
    tilde = np.asarray(tilde_eta_norms, dtype=float)
    if cur.shape != tilde.shape:
        raise ValueError("norm vectors must have equal length")
    if np.any(tilde <= 0):
        raise ZeroTildeNorm("preliminary fit has coincident consecutive atoms")
    u = np.argsort(-cur, kind="stable")
    v = np.argsort(-tilde, kind="stable")
    psi = np.empty_like(u)
    psi[u] = v
    return tilde[psi] ** (-beta)
