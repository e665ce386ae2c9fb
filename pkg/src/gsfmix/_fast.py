"""Compiled inner loops: nearest-neighbour chains and the proximal-gradient M-step.

The M-step objectives are evaluated from per-component sums:

* Gaussian (``KIND_GAUSSIAN``): ``0.5/n * sum_k w_k (theta_k - m_k)' P (theta_k - m_k)``
* multinomial (``KIND_MULTINOMIAL``): ``-1/n * sum_kl T_kl log theta_kl``

Both match the ``surrogate_value``/``surrogate_grad`` methods of the kernels.
"""

import numpy as np
from numba import njit, objmode

KIND_GAUSSIAN = 0
KIND_MULTINOMIAL = 1

STATUS_OK = 0
STATUS_DIVERGED = 1


@njit(cache=True)
def _chain(dist, start):
    K = dist.shape[0]
    visited = np.zeros(K, dtype=np.bool_)
    chain = np.empty(K, dtype=np.int64)
    chain[0] = start
    visited[start] = True
    cur = start
    length = 0.0
    for k in range(1, K):
        best = -1
        best_d = np.inf
        for j in range(K):
            if not visited[j] and dist[cur, j] < best_d:
                best_d = dist[cur, j]
                best = j
        chain[k] = best
        visited[best] = True
        length += best_d
        cur = best
    return chain, length


@njit(cache=True)
def nn_chain(atoms, tie_rtol):
    K, d = atoms.shape
    if K == 1:
        return np.zeros(1, dtype=np.int64)
    dist = np.empty((K, K))
    m1, m2, dmax = 0, 0, -1.0
    for i in range(K):
        dist[i, i] = 0.0
        for j in range(i + 1, K):
            s = 0.0
            for l in range(d):
                t = atoms[i, l] - atoms[j, l]
                s += t * t
            s = np.sqrt(s)
            dist[i, j] = s
            dist[j, i] = s
            if s > dmax:
                dmax = s
                m1, m2 = i, j
    c1, len1 = _chain(dist, m1)
    c2, len2 = _chain(dist, m2)
    if abs(len1 - len2) <= tie_rtol * max(len1, len2):
        for l in range(d):
            if atoms[m1, l] != atoms[m2, l]:
                return c1 if atoms[m1, l] < atoms[m2, l] else c2
        return c1
    return c1 if len1 < len2 else c2


@njit(cache=True)
def _theta_from_eta(eta, perm, out):
    K, d = eta.shape
    for l in range(d):
        acc = 0.0
        for k in range(K):
            acc += eta[k, l]
            out[perm[k], l] = acc


@njit(cache=True)
def _value(kind, theta, wsum, centers, precision, n):
    K, d = theta.shape
    total = 0.0
    if kind == KIND_GAUSSIAN:
        r = np.empty(d)
        for k in range(K):
            if wsum[k] == 0.0:
                continue
            for l in range(d):
                r[l] = theta[k, l] - centers[k, l]
            q = 0.0
            for a in range(d):
                s = 0.0
                for b in range(d):
                    s += precision[a, b] * r[b]
                q += r[a] * s
            total += wsum[k] * q
        return 0.5 * total / n
    for k in range(K):
        for l in range(d):
            if theta[k, l] <= 0.0:
                return np.inf
            if centers[k, l] != 0.0:
                total -= centers[k, l] * np.log(theta[k, l])
    return total / n


@njit(cache=True)
def _theta_grad(kind, theta, wsum, centers, precision, n, out):
    K, d = theta.shape
    if kind == KIND_GAUSSIAN:
        for k in range(K):
            for a in range(d):
                s = 0.0
                for b in range(d):
                    s += (theta[k, b] - centers[k, b]) * precision[b, a]
                out[k, a] = wsum[k] * s / n
        return
    for k in range(K):
        mean = 0.0
        for l in range(d):
            out[k, l] = -centers[k, l] / theta[k, l] / n
            mean += out[k, l]
        mean /= d
        for l in range(d):
            out[k, l] -= mean


@njit(cache=True)
def pgd_fused(kind, eta, perm, slopes, wsum, centers, precision, n,
              rho0, growth, eps, max_iter, rho_cap, checks):
    """Proximal gradient on difference coordinates; returns (eta, iters, converged, status).

    Row 0 of ``eta`` (the first atom) takes a plain gradient step, rows
    ``1..K-1`` are group soft-thresholded at ``slopes / rho``. ``checks[m]``
    receives ``(Q(new), Qbar(new))`` of every accepted step.
    """
    K, d = eta.shape
    eta = eta.copy()
    theta = np.empty((K, d))
    gtheta = np.empty((K, d))
    grad = np.empty((K, d))
    new = np.empty((K, d))
    _theta_from_eta(eta, perm, theta)
    f_cur = _value(kind, theta, wsum, centers, precision, n)
    rho_prev = rho0
    iters = 0
    converged = False
    for m in range(max_iter):
        _theta_grad(kind, theta, wsum, centers, precision, n, gtheta)
        # reverse cumulative sum along the ordering
        for l in range(d):
            acc = 0.0
            for k in range(K - 1, -1, -1):
                acc += gtheta[perm[k], l]
                grad[k, l] = acc
        rho = max(rho0, rho_prev / growth)
        while True:
            for l in range(d):
                new[0, l] = eta[0, l] - grad[0, l] / rho
            for k in range(1, K):
                nz = 0.0
                for l in range(d):
                    z = eta[k, l] - grad[k, l] / rho
                    new[k, l] = z
                    nz += z * z
                nz = np.sqrt(nz)
                t = slopes[k - 1] / rho
                scale = 0.0 if nz <= t else 1.0 - t / nz
                for l in range(d):
                    new[k, l] *= scale
            lin = 0.0
            sq = 0.0
            for k in range(K):
                for l in range(d):
                    s = new[k, l] - eta[k, l]
                    lin += grad[k, l] * s
                    sq += s * s
            _theta_from_eta(new, perm, theta)
            f_new = _value(kind, theta, wsum, centers, precision, n)
            bound = f_cur + lin + 0.5 * rho * sq
            if f_new <= bound + 1e-13 * (1.0 + abs(f_cur)):
                break
            rho *= growth
            if rho > rho_cap:
                return eta, iters, False, STATUS_DIVERGED
        pen = 0.0
        for k in range(1, K):
            nk = 0.0
            for l in range(d):
                nk += new[k, l] * new[k, l]
            pen += slopes[k - 1] * np.sqrt(nk)
        if m < checks.shape[0]:
            checks[m, 0] = f_new + pen
            checks[m, 1] = bound + pen
        eta[:, :] = new
        f_cur = f_new
        rho_prev = rho
        iters = m + 1
        if np.sqrt(sq) < eps:
            converged = True
            break
    return eta, iters, converged, STATUS_OK


@njit(cache=True)
def lqa_pairwise_atoms(atoms, wsum, centers, precision, n, variant, lam, a, norm_floor, chain_only=False):
    """Closed-form atoms under a local quadratic approximation of the all-pairs penalty.

    With ``chain_only`` only neighbours along the nearest-neighbour chain of the
    current atoms are penalized, which is the chain penalty under the same
    approximation.

    Each ``r(||theta_j - theta_k||)`` is majorized at the current atoms by
    ``kappa_jk ||theta_j - theta_k||^2`` (plus a constant) with
    ``kappa_jk = r'(t) / (2 t)``, ``t = max(||theta_j - theta_k||, norm_floor)``.
    The M-step objective ``0.5/n sum_k w_k (theta_k - m_k)' P (theta_k - m_k) +
    sum_{j<k} kappa_jk ||theta_j - theta_k||^2`` is then a linear system in
    ``vec(theta)`` (row-major, atom by atom).
    """
    K, d = atoms.shape
    kappa = np.zeros((K, K))
    linked = np.ones((K, K), dtype=np.bool_)
    if chain_only:
        linked[:, :] = False
        perm = nn_chain(atoms, 1e-12)
        for k in range(1, K):
            linked[perm[k - 1], perm[k]] = True
            linked[perm[k], perm[k - 1]] = True
    for j in range(K):
        for k in range(j + 1, K):
            if not linked[j, k]:
                continue
            s = 0.0
            for l in range(d):
                t = atoms[j, l] - atoms[k, l]
                s += t * t
            t = max(np.sqrt(s), norm_floor)
            kap = r_deriv_scalar(variant, lam, a, t, 1.0) / (2.0 * t)
            kappa[j, k] = kap
            kappa[k, j] = kap
    A = np.zeros((K * d, K * d))
    rhs = np.zeros(K * d)
    for k in range(K):
        w = wsum[k] / n
        target = centers[k]
        if wsum[k] <= 0.0:
            # empty component: a tiny anchor at its current value keeps the system regular
            w = 1e-12
            target = atoms[k]
        for a_ in range(d):
            acc = 0.0
            for b in range(d):
                A[k * d + a_, k * d + b] += w * precision[a_, b]
                acc += w * precision[a_, b] * target[b]
            rhs[k * d + a_] = acc
        for j in range(K):
            if j == k or kappa[j, k] == 0.0:
                continue
            for l in range(d):
                A[k * d + l, k * d + l] += 2.0 * kappa[j, k]
                A[k * d + l, j * d + l] -= 2.0 * kappa[j, k]
    x = np.linalg.solve(A, rhs)
    out = np.empty((K, d))
    for k in range(K):
        for l in range(d):
            out[k, l] = x[k * d + l]
    return out


@njit(cache=True)
def _vexp(X):
    # numpy's SIMD exp is several times faster than the scalar libm call numba emits
    with objmode(E="float64[:,:]"):
        E = np.exp(X)
    return E


@njit(cache=True)
def responsibilities(log_dens, log_weights):
    """Row-normalized ``exp(log_dens + log_weights)`` and the total log-likelihood."""
    W, total, _, _ = responsibilities_with_sums(log_dens, log_weights, np.zeros((log_dens.shape[0], 0)))
    return W, total


@njit(cache=True)
def responsibilities_with_sums(log_dens, log_weights, Y):
    """:func:`responsibilities` plus column sums ``W.sum(0)`` and ``W.T @ Y`` in one pass."""
    n, K = log_dens.shape
    d = Y.shape[1]
    X = np.empty((n, K))
    tops = np.empty(n)
    for i in range(n):
        top = -np.inf
        for k in range(K):
            v = log_dens[i, k] + log_weights[k]
            X[i, k] = v
            if v > top:
                top = v
        tops[i] = top
        for k in range(K):
            X[i, k] -= top
    W = _vexp(X)
    wsum = np.zeros(K)
    wy = np.zeros((K, d))
    total = 0.0
    for i in range(n):
        s = 0.0
        for k in range(K):
            s += W[i, k]
        for k in range(K):
            w = W[i, k] / s
            W[i, k] = w
            wsum[k] += w
            for l in range(d):
                wy[k, l] += w * Y[i, l]
        total += tops[i] + np.log(s)
    return W, total, wsum, wy


# -- penalties -------------------------------------------------------------

VARIANT_SCAD = 0
VARIANT_MCP = 1
VARIANT_ALASSO = 2

MODE_CLOSED_FORM = 0
MODE_FUSED = 1
MODE_PAIRWISE = 2
MODE_CHAIN_LQA = 3

STATUS_DEGENERATE_COV = 2

LOG_2PI = np.log(2.0 * np.pi)
SIMPLEX_CLAMP = 1e-8
COV_FLOOR = 1e-8
LQA_NORM_FLOOR = 1e-8


@njit(cache=True)
def r_deriv_scalar(variant, lam, a, eta, omega):
    if variant == VARIANT_SCAD:
        if eta <= lam:
            return lam
        return max(a * lam - eta, 0.0) / (a - 1.0)
    if variant == VARIANT_MCP:
        return max(lam - eta / a, 0.0)
    return lam * omega


@njit(cache=True)
def r_value_scalar(variant, lam, a, eta, omega):
    if variant == VARIANT_SCAD:
        if eta <= lam:
            return lam * eta
        if eta <= a * lam:
            return (2.0 * a * lam * eta - eta * eta - lam * lam) / (2.0 * (a - 1.0))
        return lam * lam * (a + 1.0) / 2.0
    if variant == VARIANT_MCP:
        if eta <= a * lam:
            return lam * eta - eta * eta / (2.0 * a)
        return a * lam * lam / 2.0
    return lam * omega * eta


@njit(cache=True)
def rank_matched_weights(norms, tilde, beta):
    """``tilde[psi] ** -beta`` with ``psi`` matching descending ranks (stable sorts)."""
    u = np.argsort(-norms, kind="mergesort")
    v = np.argsort(-tilde, kind="mergesort")
    out = np.empty(norms.size)
    for r in range(norms.size):
        out[u[r]] = tilde[v[r]] ** (-beta)
    return out


@njit(cache=True)
def _chain_norms(atoms, perm):
    K, d = atoms.shape
    norms = np.empty(K - 1)
    for k in range(K - 1):
        s = 0.0
        for l in range(d):
            t = atoms[perm[k + 1], l] - atoms[perm[k], l]
            s += t * t
        norms[k] = np.sqrt(s)
    return norms


@njit(cache=True)
def _omegas(variant, norms, tilde, beta):
    if variant == VARIANT_ALASSO and norms.size > 0:
        return rank_matched_weights(norms, tilde, beta)
    return np.ones(norms.size)


@njit(cache=True)
def _penalty_total(mode, variant, lam, a, beta, tilde, atoms):
    K, d = atoms.shape
    total = 0.0
    if (mode == MODE_FUSED or mode == MODE_CHAIN_LQA) and K > 1:
        perm = nn_chain(atoms, 1e-12)
        norms = _chain_norms(atoms, perm)
        om = _omegas(variant, norms, tilde, beta)
        for k in range(K - 1):
            total += r_value_scalar(variant, lam, a, norms[k], om[k])
    elif mode == MODE_PAIRWISE:
        for j in range(K):
            for k in range(j + 1, K):
                s = 0.0
                for l in range(d):
                    t = atoms[j, l] - atoms[k, l]
                    s += t * t
                total += r_value_scalar(variant, lam, a, np.sqrt(s), 1.0)
    return total


# -- full EM ---------------------------------------------------------------

@njit(cache=True)
def _gaussian_log_dens(Y, atoms, cov):
    n, d = Y.shape
    K = atoms.shape[0]
    L = np.linalg.cholesky(cov)
    whiten = np.linalg.inv(L).T
    logdet = 0.0
    for l in range(d):
        logdet += 2.0 * np.log(L[l, l])
    Yw = Y @ whiten
    Aw = atoms @ whiten
    c = -0.5 * (logdet + d * LOG_2PI)
    out = np.empty((n, K))
    for i in range(n):
        for k in range(K):
            s = 0.0
            for l in range(d):
                t = Yw[i, l] - Aw[k, l]
                s += t * t
            out[i, k] = c - 0.5 * s
    return out, whiten @ whiten.T


@njit(cache=True)
def _multinomial_log_dens(Y, log_coef, atoms):
    n, d = Y.shape
    K = atoms.shape[0]
    la = np.log(atoms)
    out = np.empty((n, K))
    for i in range(n):
        for k in range(K):
            s = log_coef[i]
            for l in range(d):
                if Y[i, l] != 0.0:
                    s += Y[i, l] * la[k, l]
            out[i, k] = s
    return out


@njit(cache=True)
def _project_simplex_rows(atoms):
    K, d = atoms.shape
    for k in range(K):
        s = 0.0
        for l in range(d):
            v = min(max(atoms[k, l], SIMPLEX_CLAMP), 1.0 - SIMPLEX_CLAMP)
            atoms[k, l] = v
            s += v
        for l in range(d):
            atoms[k, l] /= s


@njit(cache=True)
def floor_covariance(cov):
    """Symmetric eigenvalue floor at ``COV_FLOOR * trace / d``; ``ok`` is False if no spread."""
    d = cov.shape[0]
    trace = 0.0
    for l in range(d):
        trace += cov[l, l]
    floor = COV_FLOOR * trace / d
    vals, vecs = np.linalg.eigh(cov)
    low = 0
    for l in range(d):
        if vals[l] < floor:
            low += 1
    if floor <= 0.0 or low > d - 1:
        return cov, False
    if low == 0:
        return cov, True
    for l in range(d):
        vals[l] = max(vals[l], floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T), True


@njit(cache=True)
def em_loop(kind, mode, Y, log_coef, gram, atoms0, weights0, cov0, estimate_cov,
            phi_c, variant, lam, a, beta, tilde,
            eps, delta, max_em, max_pgd, rho0, growth, rho_cap, record_history):
    """Modified EM from ``(atoms0, weights0, cov0)``.

    ``mode`` selects the atom update (closed form, fused PGD along the chain
    ordering, or the all-pairs quadratic approximation; the last is Gaussian only). Gaussian data must be centred and
    ``gram = Y.T @ Y``. Returns ``(atoms, weights, cov, W, loglik, penalized,
    iterations, converged, status, history)``.
    """
    n, d = Y.shape
    K = atoms0.shape[0]
    atoms = atoms0.copy()
    weights = weights0.copy()
    cov = cov0.copy()
    history = np.empty(max_em + 1 if record_history else 0)
    no_checks = np.empty((0, 2))
    precision = np.zeros((1, 1))
    converged = False
    status = STATUS_OK
    it = 0
    while True:
        if kind == KIND_GAUSSIAN:
            log_dens, precision = _gaussian_log_dens(Y, atoms, cov)
        else:
            log_dens = _multinomial_log_dens(Y, log_coef, atoms)
        W, loglik, wsum, wy = responsibilities_with_sums(log_dens, np.log(weights), Y)
        if record_history:
            pen = 0.0
            if phi_c > 0.0:
                for k in range(K):
                    pen -= phi_c * np.log(weights[k])
            pen += n * _penalty_total(mode, variant, lam, a, beta, tilde, atoms)
            history[it] = loglik - pen
        if converged or it >= max_em:
            break
        it += 1
        new_weights = (wsum + phi_c) / (n + K * phi_c)
        if kind == KIND_GAUSSIAN:
            centers = np.zeros((K, d))
            for k in range(K):
                if wsum[k] > 0.0:
                    for l in range(d):
                        centers[k, l] = wy[k, l] / wsum[k]
                else:
                    for l in range(d):
                        centers[k, l] = atoms[k, l]
        else:
            centers = wy
        if mode == MODE_CLOSED_FORM:
            if kind == KIND_GAUSSIAN:
                new_atoms = centers.copy()
            else:
                new_atoms = atoms.copy()
                for k in range(K):
                    s = 0.0
                    for l in range(d):
                        s += wy[k, l]
                    if s > 0.0:
                        for l in range(d):
                            new_atoms[k, l] = wy[k, l] / s
                _project_simplex_rows(new_atoms)
        elif mode == MODE_FUSED:
            perm = nn_chain(atoms, 1e-12)
            eta = np.empty((K, d))
            for l in range(d):
                eta[0, l] = atoms[perm[0], l]
                for k in range(1, K):
                    eta[k, l] = atoms[perm[k], l] - atoms[perm[k - 1], l]
            norms = _chain_norms(atoms, perm)
            om = _omegas(variant, norms, tilde, beta)
            slopes = np.empty(K - 1)
            for k in range(K - 1):
                slopes[k] = r_deriv_scalar(variant, lam, a, norms[k], om[k])
            eta, _, _, st = pgd_fused(kind, eta, perm, slopes, wsum, centers, precision, float(n),
                                      rho0, growth, eps, max_pgd, rho_cap, no_checks)
            if st != STATUS_OK:
                status = st
                break
            new_atoms = np.empty((K, d))
            _theta_from_eta(eta, perm, new_atoms)
            if kind == KIND_MULTINOMIAL:
                _project_simplex_rows(new_atoms)
        else:
            new_atoms = lqa_pairwise_atoms(atoms, wsum, centers, precision, float(n),
                                           variant, lam, a, LQA_NORM_FLOOR, mode == MODE_CHAIN_LQA)
        if estimate_cov:
            cross = wy.T @ new_atoms
            scaled = new_atoms.copy()
            for k in range(K):
                for l in range(d):
                    scaled[k, l] *= wsum[k]
            c = (gram - cross - cross.T + scaled.T @ new_atoms) / n
            cov, ok = floor_covariance(0.5 * (c + c.T))
            if not ok:
                status = STATUS_DEGENERATE_COV
                break
        change = 0.0
        for k in range(K):
            for l in range(d):
                t = new_atoms[k, l] - atoms[k, l]
                change += t * t
        for k in range(K - 1):
            t = new_weights[k] - weights[k]
            change += t * t
        atoms = new_atoms
        weights = new_weights
        converged = np.sqrt(change) < delta
    penalized = loglik
    if phi_c > 0.0:
        for k in range(K):
            penalized += phi_c * np.log(weights[k])
    penalized -= n * _penalty_total(mode, variant, lam, a, beta, tilde, atoms)
    return atoms, weights, cov, W, loglik, penalized, it, converged, status, history[:it + 1] if record_history else history
