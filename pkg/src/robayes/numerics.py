"""Deterministic numeric kernels shared by every module.

Symmetric eigendecomposition (cyclic Jacobi), seeded Gaussian sampling,
orthonormal Hermite polynomials, and a Gauss-Hermite quadrature rule for
expectations under the standard normal measure.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import kernels

MAX_HERMITE_DEGREE = 64


class EigenConvergenceError(RuntimeError):
    """Jacobi sweeps did not reduce the off-diagonal mass below tolerance."""

    def __init__(self, residual, sweeps):
        super().__init__(
            f"eigendecomposition did not converge after {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


@dataclass(frozen=True)
class SymMatrix:
    """Dense symmetric real matrix."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        scale = max(np.abs(m).max(), 1.0)
        if np.abs(m - m.T).max() > 1e-12 * scale:
            raise ValueError("matrix is not symmetric to 1e-12 relative tolerance")
        object.__setattr__(self, "entries", 0.5 * (m + m.T))

    @property
    def dim(self):
        return self.entries.shape[0]


def _as_matrix(m):
    if isinstance(m, SymMatrix):
        return m.entries
    return SymMatrix(np.asarray(m, dtype=np.float64)).entries


@dataclass(frozen=True)
class RngStream:
    """Seeded random stream; (seed, stream) fully determines all draws.

    Distinct stream ids behave as independent streams. Never share one
    stream across concurrent tasks; derive children with `child`.
    """

    seed: int
    stream: int = 0

    def generator(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, k):
        mixed = (self.stream * 0x9E3779B97F4A7C15 + k + 1) % (1 << 63)
        return RngStream(self.seed, mixed)


def sym_eig(m, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi.

    Returns (w, v) with eigenvalues w sorted descending and eigenvectors as
    the rows of v, so that `m == v.T @ diag(w) @ v`.
    """
    mat = _as_matrix(m)
    w, v, residual, converged = kernels.jacobi_eigh(mat, tol, max_sweeps)
    if not converged:
        raise EigenConvergenceError(residual, max_sweeps)
    return w, v


def gauss_vector(rng: RngStream, mean, cov_sqrt):
    """Draw mean + cov_sqrt @ g with g standard normal from the stream."""
    mean = np.asarray(mean, dtype=np.float64)
    root = cov_sqrt.entries if isinstance(cov_sqrt, SymMatrix) else np.asarray(cov_sqrt)
    if root.shape[1] != mean.shape[0] or root.shape[0] != mean.shape[0]:
        raise ValueError(f"dimension mismatch: mean {mean.shape}, cov_sqrt {root.shape}")
    g = rng.generator().standard_normal(mean.shape[0])
    return mean + root @ g


def hermite_value(j, x):
    """Orthonormal probabilist Hermite polynomial h_j(x), E[h_j(N(0,1))^2] = 1.

    Three-term recurrence: h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1).
    Accepts scalar or array x; j <= 64.
    """
    if j < 0 or j > MAX_HERMITE_DEGREE:
        raise ValueError(f"degree {j} outside [0, {MAX_HERMITE_DEGREE}]")
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.ones_like(x)
    if j == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x.copy()
    for k in range(1, j):
        h, h_prev = (x * h - np.sqrt(k) * h_prev) / np.sqrt(k + 1.0), h
    return h if h.ndim else float(h)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for expectations under N(0,1); weights sum to 1."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int


def _hermite_column(order, x):
    """Values h_0(x)..h_{order-1}(x) stacked along axis 0."""
    out = np.empty((order, x.shape[0]))
    out[0] = 1.0
    if order > 1:
        out[1] = x
    for k in range(1, order - 1):
        out[k + 1] = (x * out[k] - np.sqrt(k) * out[k - 1]) / np.sqrt(k + 1.0)
    return out


@functools.lru_cache(maxsize=8)
def gauss_hermite_rule(order=160):
    """Gauss-Hermite rule for N(0,1) built by Golub-Welsch on the Jacobi
    matrix, with Newton-polished nodes and Christoffel weights.

    Exact for polynomials of degree <= 2*order - 1.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    jac = np.zeros((order, order))
    off = np.sqrt(np.arange(1, order, dtype=np.float64))
    jac[np.arange(order - 1), np.arange(1, order)] = off
    jac[np.arange(1, order), np.arange(order - 1)] = off
    w, _ = sym_eig(jac)
    nodes = np.sort(w)
    # polish roots of h_order; h_order'(x) = sqrt(order) * h_{order-1}(x)
    for _ in range(3):
        vals = _hermite_column(order + 1, nodes)
        nodes = nodes - vals[order] / (np.sqrt(order) * vals[order - 1])
    vals = _hermite_column(order, nodes)
    weights = 1.0 / np.sum(vals**2, axis=0)
    weights /= weights.sum()
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


def quad_expect(f, rule=None):
    """Approximate E_{X ~ N(0,1)} f(X) as sum_i w_i f(node_i)."""
    if rule is None:
        rule = gauss_hermite_rule()
    vals = np.asarray(f(rule.nodes), dtype=np.float64)
    if vals.shape != rule.nodes.shape:
        vals = np.array([f(x) for x in rule.nodes], dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("integrand is not finite on the quadrature nodes")
    return float(rule.weights @ vals)
