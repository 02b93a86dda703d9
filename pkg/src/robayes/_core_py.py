"""Pure-numpy kernels: cyclic Jacobi eigendecomposition and the mean filter loop.

Mirrors the compiled extension in `_core.pyx` (same sweep order, same update
formulas) so the two backends are interchangeable up to float roundoff.
"""

import numpy as np


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi for a symmetric matrix.

    Returns (eigenvalues, eigvec_rows, off_residual, converged) with
    eigenvalues descending and `a == eigvec_rows.T @ diag(w) @ eigvec_rows`.
    Convergence: off-diagonal Frobenius mass <= tol * ||a||_F.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    thresh = tol * max(scale, np.finfo(np.float64).tiny)
    if n == 1:
        return a[np.newaxis, 0, 0].copy().ravel(), v, 0.0, True
    off = _offdiag_norm(a)
    converged = off <= thresh
    for _ in range(max_sweeps):
        if converged:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-30 * scale:
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        off = _offdiag_norm(a)
        converged = off <= thresh
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order].T.copy(), off, bool(converged)


def _offdiag_norm(a):
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


FILTER_OK = 0
FILTER_BUDGET = 1
FILTER_MAXITER = 2


def mean_filter(x, alpha0, mass_budget, max_iter, tol=1e-12, max_sweeps=100):
    """Iterative soft filter for robust mean estimation.

    Downweights points by squared projection on the top eigendirection of the
    weighted covariance until its top eigenvalue is <= 1 + alpha0, removed
    mass exceeds mass_budget, or max_iter iterations elapse.

    Returns (weights, iterations, top_eigenvalue, status).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    a = np.ones(n)
    top = 0.0
    for it in range(max_iter + 1):
        total = a.sum()
        if total <= 0.0:
            return a, it, top, FILTER_BUDGET
        mu = (a @ x) / total
        centered = x - mu
        cov = (centered.T * a) @ centered / n
        w, vecs, _, _ = jacobi_eigh(cov, tol, max_sweeps)
        top = w[0]
        if top <= 1.0 + alpha0:
            return a, it, top, FILTER_OK
        proj = (centered @ vecs[0]) ** 2
        active = a > 0.0
        tau_max = proj[active].max()
        if tau_max <= 0.0:
            return a, it, top, FILTER_OK
        a = a * (1.0 - proj / tau_max)
        np.clip(a, 0.0, 1.0, out=a)
        if n - a.sum() > mass_budget:
            return a, it + 1, top, FILTER_BUDGET
    return a, max_iter + 1, top, FILTER_MAXITER
