# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: cyclic Jacobi eigendecomposition and the mean filter loop.

Twin of `_core_py.py`; identical sweep order and update formulas.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def jacobi_eigh(a_in, double tol=1e-12, int max_sweeps=100):
    a = np.array(a_in, dtype=np.float64, copy=True, order="C")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] amat = a
    cdef int n = amat.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] v = np.eye(n)
    cdef double scale = np.linalg.norm(a)
    cdef double tiny = np.finfo(np.float64).tiny
    cdef double thresh = tol * (scale if scale > tiny else tiny)
    cdef double off, apq, tau, t, c, s, app, aqq, aip, aiq, vip, viq
    cdef int p, q, i, sweep
    cdef bint converged

    if n == 1:
        return np.array([amat[0, 0]]), v, 0.0, True

    off = _offdiag(amat, n)
    converged = off <= thresh
    for sweep in range(max_sweeps):
        if converged:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = amat[p, q]
                if fabs(apq) <= 1e-30 * scale:
                    amat[p, q] = 0.0
                    amat[q, p] = 0.0
                    continue
                tau = (amat[q, q] - amat[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                app = amat[p, p]
                aqq = amat[q, q]
                for i in range(n):
                    aip = amat[i, p]
                    aiq = amat[i, q]
                    amat[i, p] = c * aip - s * aiq
                    amat[i, q] = s * aip + c * aiq
                for i in range(n):
                    aip = amat[p, i]
                    aiq = amat[q, i]
                    amat[p, i] = c * aip - s * aiq
                    amat[q, i] = s * aip + c * aiq
                amat[p, p] = app - t * apq
                amat[q, q] = aqq + t * apq
                amat[p, q] = 0.0
                amat[q, p] = 0.0
                for i in range(n):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = s * vip + c * viq
        off = _offdiag(amat, n)
        converged = off <= thresh

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], np.ascontiguousarray(v[:, order].T), off, bool(converged)


cdef double _offdiag(cnp.float64_t[:, :] a, int n):
    cdef double acc = 0.0
    cdef int i, j
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += a[i, j] * a[i, j]
    return sqrt(acc)


FILTER_OK = 0
FILTER_BUDGET = 1
FILTER_MAXITER = 2


def mean_filter(x_in, double alpha0, double mass_budget, int max_iter,
                double tol=1e-12, int max_sweeps=100):
    x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xmat = x
    cdef int n = xmat.shape[0]
    cdef int d = xmat.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = np.ones(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu = np.zeros(d)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cov = np.zeros((d, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] proj = np.zeros(n)
    cdef double total, top, tau_max, pr, ai, removed
    cdef int it, i, j, k
    cdef object vecs

    top = 0.0
    for it in range(max_iter + 1):
        total = 0.0
        for i in range(n):
            total += a[i]
        if total <= 0.0:
            return a, it, top, FILTER_BUDGET
        for j in range(d):
            mu[j] = 0.0
        for i in range(n):
            ai = a[i]
            if ai > 0.0:
                for j in range(d):
                    mu[j] += ai * xmat[i, j]
        for j in range(d):
            mu[j] /= total
        for j in range(d):
            for k in range(d):
                cov[j, k] = 0.0
        for i in range(n):
            ai = a[i]
            if ai > 0.0:
                for j in range(d):
                    for k in range(j, d):
                        cov[j, k] += ai * (xmat[i, j] - mu[j]) * (xmat[i, k] - mu[k])
        for j in range(d):
            for k in range(j, d):
                cov[j, k] /= n
                cov[k, j] = cov[j, k]
        w, vecs, _, _ = jacobi_eigh(cov, tol, max_sweeps)
        top = w[0]
        if top <= 1.0 + alpha0:
            return a, it, top, FILTER_OK
        vtop = np.ascontiguousarray(vecs[0])
        cdef_proj(xmat, mu, vtop, proj, n, d)
        tau_max = 0.0
        for i in range(n):
            if a[i] > 0.0 and proj[i] > tau_max:
                tau_max = proj[i]
        if tau_max <= 0.0:
            return a, it, top, FILTER_OK
        removed = 0.0
        for i in range(n):
            pr = a[i] * (1.0 - proj[i] / tau_max)
            if pr < 0.0:
                pr = 0.0
            elif pr > 1.0:
                pr = 1.0
            a[i] = pr
            removed += 1.0 - pr
        if removed > mass_budget:
            return a, it + 1, top, FILTER_BUDGET
    return a, max_iter + 1, top, FILTER_MAXITER


cdef void cdef_proj(cnp.float64_t[:, :] x, cnp.float64_t[:] mu,
                    cnp.float64_t[:] v, cnp.float64_t[:] out, int n, int d):
    cdef int i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += (x[i, j] - mu[j]) * v[j]
        out[i] = acc * acc
