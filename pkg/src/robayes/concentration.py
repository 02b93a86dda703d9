"""Concentration-bound calculators with exact/heuristic evaluators and
Monte Carlo validators.

Frozen constants: CHI = 4 (short-flat budgets, shared with the regression
programs) and C_SUBSET_SUM = 3, both fixed by a pre-build calibration run
with headroom.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import RngStream, sym_eig

CHI = 4.0
C_SUBSET_SUM = 3.0
DEFAULT_EXACT_BUDGET = 2_000_000


@dataclass(frozen=True)
class BoundReport:
    """Outcome of validating a theoretical bound by simulation."""

    theoretical: float
    empirical_quantile: float
    trials: int
    passed: bool


@dataclass(frozen=True)
class ShortFlatDecomposition:
    """Split y = z1 + z2 with z1 sparse (large entries) and z2 flat.

    z1 carries the ceil(eta * n) largest-magnitude entries (ties broken by
    lowest index); supports are disjoint and reconstruct y exactly.
    """

    support: np.ndarray
    z1_values: np.ndarray
    z2: np.ndarray
    eta: float
    norm_z1_sq: float
    norm_z2_inf_sq: float

    @property
    def n(self):
        return self.z2.shape[0]

    def z1_dense(self):
        z1 = np.zeros_like(self.z2)
        z1[self.support] = self.z1_values
        return z1

    def reconstruct(self):
        return self.z1_dense() + self.z2


def order_stat_bound(eta, d, beta):
    """High-probability bound on the (ceil(eta*d))-th largest squared
    coordinate of a standard Gaussian vector."""
    if not (0 < eta < 1 and 0 < beta <= 1):
        raise ValueError("eta and beta must lie in (0, 1]")
    return 2.0 * math.log(math.e / eta) + (2.0 / (eta * d)) * math.log(1.0 / beta)


def subset_sum_bound(eta, d, beta):
    """High-probability bound on the largest sum of eta*d squared Gaussian
    coordinates."""
    if not (0 <= eta < 1 and 0 < beta <= 1):
        raise ValueError("eta in [0,1) and beta in (0,1] required")
    return C_SUBSET_SUM * (eta * d * math.log(math.e / max(eta, 1e-300)) + math.log(1.0 / beta))


def top_k_subset_sum(v, k):
    """Exact max over |S| = k of sum_{i in S} v_i^2 (a sorting identity)."""
    sq = np.asarray(v, dtype=np.float64) ** 2
    if k <= 0:
        return 0.0
    return float(np.sort(sq)[::-1][:k].sum())


def covariance_deviation(x):
    """Operator-norm deviation of the column empirical covariance from the
    identity: ||(1/n) X X^T - I||_op."""
    x = np.asarray(x, dtype=np.float64)
    d, n = x.shape
    m = x @ x.T / n - np.eye(d)
    w, _ = sym_eig(m)
    return float(max(abs(w[0]), abs(w[-1])))


def sparse_spectral_norm(x, k, exact_budget=DEFAULT_EXACT_BUDGET, restarts=16, seed=0):
    """Max operator norm over all submatrices of at most k columns.

    Exact enumeration when comb(n, k) <= exact_budget, otherwise alternating
    local search (top singular direction <-> best-k columns) with restarts.
    Returns (value, subset, exact).
    """
    x = np.asarray(x, dtype=np.float64)
    d, n = x.shape
    if not 1 <= k <= n:
        raise ValueError("k must lie in [1, n]")
    if k == n:
        s = np.linalg.svd(x, compute_uv=False)
        return float(s[0]), np.arange(n), True
    if math.comb(n, k) <= exact_budget:
        best_val, best_sub = -1.0, None
        for sub in itertools.combinations(range(n), k):
            sub = np.asarray(sub)
            s = np.linalg.svd(x[:, sub], compute_uv=False)[0]
            if s > best_val:
                best_val, best_sub = float(s), sub
        return best_val, best_sub, True

    gen = RngStream(seed).generator()
    norms = np.linalg.norm(x, axis=0)
    best_val, best_sub = -1.0, None
    for r in range(restarts):
        if r == 0:
            sub = np.sort(np.argsort(-norms, kind="stable")[:k])
        else:
            sub = np.sort(gen.choice(n, size=k, replace=False))
        val = -1.0
        for _ in range(50):
            u, s, _ = np.linalg.svd(x[:, sub], full_matrices=False)
            val = float(s[0])
            proj = np.abs(u[:, 0] @ x)
            new_sub = np.sort(np.argsort(-proj, kind="stable")[:k])
            if np.array_equal(new_sub, sub):
                break
            sub = new_sub
        if val > best_val:
            best_val, best_sub = val, sub
    return best_val, best_sub, False


def short_flat_decompose(y, eta) -> ShortFlatDecomposition:
    """Partition y into the ceil(eta*n) largest-magnitude entries (z1) and
    the rest (z2), ties broken by lowest index."""
    if not 0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    k = min(int(np.ceil(eta * n)), n)
    order = np.argsort(-np.abs(y), kind="stable")
    support = np.sort(order[:k])
    z2 = y.copy()
    z1_values = y[support].copy()
    z2[support] = 0.0
    return ShortFlatDecomposition(
        support=support,
        z1_values=z1_values,
        z2=z2,
        eta=eta,
        norm_z1_sq=float(np.sum(z1_values**2)),
        norm_z2_inf_sq=float(np.max(np.abs(z2)) ** 2) if n > k else 0.0,
    )


def short_flat_budgets(eta, n, beta, chi=CHI):
    """The (||z1||^2, ||z2||_inf^2) budgets a clean Gaussian vector meets
    with probability 1 - beta."""
    short = chi * eta * n * math.log(1.0 / eta) + chi * math.log(1.0 / beta)
    flat = chi * math.log(1.0 / eta) + chi * math.log(1.0 / beta) / (eta * n)
    return short, flat


def _quantile_report(values, theoretical, level):
    values = np.asarray(values, dtype=np.float64)
    q = float(np.quantile(values, level))
    return BoundReport(
        theoretical=float(theoretical),
        empirical_quantile=q,
        trials=len(values),
        passed=bool(q <= theoretical),
    )


def validate_order_stat(eta, d, beta, trials, rng: RngStream, level: Optional[float] = None):
    """Monte Carlo check: the (ceil(eta*d))-th largest squared coordinate
    stays below order_stat_bound at quantile `level` (default 1 - beta)."""
    k = int(np.ceil(eta * d))
    gen = rng.generator()
    vals = np.sort(gen.standard_normal((trials, d)) ** 2, axis=1)[:, d - k]
    return _quantile_report(vals, order_stat_bound(eta, d, beta), level or (1 - beta))


def validate_subset_sum(eta, d, beta, trials, rng: RngStream, level: Optional[float] = None):
    k = max(int(np.ceil(eta * d)), 1)
    gen = rng.generator()
    sq = np.sort(gen.standard_normal((trials, d)) ** 2, axis=1)
    vals = sq[:, d - k :].sum(axis=1)
    return _quantile_report(vals, subset_sum_bound(eta, d, beta), level or (1 - beta))


def validate_covariance(d, n, trials, rng: RngStream, factor=3.0, level=0.95):
    """Empirical check that ||(1/n)XX^T - I||_op <= factor * sqrt(d/n)."""
    vals = []
    for i in range(trials):
        x = rng.child(i).generator().standard_normal((d, n))
        vals.append(covariance_deviation(x))
    return _quantile_report(vals, factor * math.sqrt(d / n), level)


def validate_short_flat(eta, n, beta, trials, rng: RngStream, chi=CHI, level=0.95):
    """Empirical check of both short-flat budgets on standard Gaussian vectors."""
    short_budget, flat_budget = short_flat_budgets(eta, n, beta, chi)
    ratios = []
    for i in range(trials):
        y = rng.child(i).generator().standard_normal(n)
        dec = short_flat_decompose(y, eta)
        ratios.append(max(dec.norm_z1_sq / short_budget, dec.norm_z2_inf_sq / flat_budget))
    return _quantile_report(ratios, 1.0, level)


def validate_sparse_spectral(d, n, k, trials, rng: RngStream):
    """Heuristic search never exceeds, and usually matches, exact enumeration."""
    matches = 0
    for i in range(trials):
        x = rng.child(i).generator().standard_normal((d, n))
        exact_val, _, exact = sparse_spectral_norm(x, k)
        assert exact
        heur_val, _, _ = sparse_spectral_norm(x, k, exact_budget=0, seed=i)
        if heur_val > exact_val + 1e-9:
            raise AssertionError("heuristic exceeded the exhaustive oracle")
        if abs(heur_val - exact_val) <= 1e-9:
            matches += 1
    return matches
