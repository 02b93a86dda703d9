"""Robust estimation of the empirical mean of the uncorrupted samples from
an eta-contaminated dataset.

Two estimators: a feasibility search over small replacement sets guarded by
subset-resilience constraints (statistical), and iterative soft filtering
whose final weights form a checkable moment certificate (efficient).

Frozen constants (pre-build calibration, then fixed):
  C_STAT = 6, C_EFF = 8   error-bound constants used by acceptance checks
  FEASIBILITY_C = 2.5     subset-deviation threshold in the search
  ALPHA_COEFF = 4         certificate targets for (alpha0, alpha1, alpha2)
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import kernels
from .model import ContaminatedDataset, MeanDataset
from .numerics import RngStream, sym_eig

C_STAT = 6.0
C_EFF = 8.0
FEASIBILITY_C = 2.5
ALPHA_COEFF = 4.0
DEFAULT_BETA = 0.05
DEFAULT_SEARCH_BUDGET = 200_000


class FilterBudgetError(RuntimeError):
    """The filter removed more than its 3 eta n mass budget."""


def _xlog(eta):
    return 0.0 if eta <= 0 else eta * math.sqrt(math.log(1.0 / eta))


def _xloglin(eta):
    return 0.0 if eta <= 0 else eta * math.log(1.0 / eta)


def stat_rate(eta, d, n, beta=DEFAULT_BETA, c=C_STAT):
    """Error target of the search estimator."""
    return c * (_xlog(eta) + math.sqrt(eta) * math.sqrt((d + math.log(1 / beta)) / n))


def eff_rate(eta, d, n, beta=DEFAULT_BETA, c=C_EFF):
    """Error target of the filter estimator."""
    return c * (_xlog(eta) + math.sqrt(eta * math.sqrt((d + math.log(1 / beta)) / n)))


@dataclass(frozen=True)
class ResilienceReport:
    eta: float
    worst_subset: np.ndarray
    worst_deviation: float
    exact: bool


@dataclass(frozen=True)
class WeightCertificate:
    """Per-sample weights with declared first/second-moment deviation bounds."""

    weights: np.ndarray
    alpha0: float
    alpha1: float
    alpha2: float
    candidate_mean: np.ndarray
    eta: float

    @property
    def mass(self):
        return float(self.weights.mean())

    def restricted(self, mask):
        """Zero the weights on masked (replaced) rows; used when certifying
        against the clean twin of a contaminated dataset."""
        w = self.weights.copy()
        w[np.asarray(mask, dtype=bool)] = 0.0
        return replace(self, weights=w)


@dataclass(frozen=True)
class CertificationResult:
    passed: bool
    alpha0: float
    alpha1: float
    alpha2: float
    mass: float


@functools.lru_cache(maxsize=64)
def _combo_index(n, s):
    return np.array(list(itertools.combinations(range(n), s)), dtype=np.intp)


def _subset_deviation(dev, subset):
    return float(np.linalg.norm(dev[np.asarray(subset)].mean(axis=0)))


def _greedy_worst_subset(dev, k, extra_starts=4, seed=1):
    """Alternating maximization of ||mean_S dev|| over |S| <= k.

    Directions and subsets alternate until a fixed point; starts are the
    largest-norm deviation, the top eigendirection of the deviation second
    moment, and a few seeded random directions. Ties break by lowest index.
    """
    n, d = dev.shape
    norms = np.linalg.norm(dev, axis=1)
    starts = [dev[int(np.argmax(norms))]]
    second = dev.T @ dev / n
    w, v = sym_eig(second)
    starts.append(v[0])
    gen = RngStream(seed).generator()
    for _ in range(extra_starts):
        starts.append(gen.standard_normal(d))
    best_val, best_sub = -1.0, np.array([int(np.argmax(norms))])
    for u0 in starts:
        nrm = np.linalg.norm(u0)
        if nrm == 0:
            continue
        u = u0 / nrm
        for s in range(1, k + 1):
            cur = None
            for _ in range(60):
                proj = dev @ u
                sub = np.sort(np.argsort(-proj, kind="stable")[:s])
                if cur is not None and np.array_equal(sub, cur):
                    break
                cur = sub
                center = dev[sub].mean(axis=0)
                nrm = np.linalg.norm(center)
                if nrm == 0:
                    break
                u = center / nrm
            if cur is None:
                continue
            val = _subset_deviation(dev, cur)
            if val > best_val + 1e-15:
                best_val, best_sub = val, cur
    return best_val, best_sub


def worst_deviation_by_size(data: MeanDataset, k_max, extra_starts=4, seed=1, iters=30):
    """Greedy lower bound on the worst subset deviation for every subset size
    up to k_max, from one alternating sweep (all sizes share each direction)."""
    dev = data.samples - data.mean()
    n, d = dev.shape
    k_max = min(k_max, n)
    best = np.zeros(k_max)
    norms = np.linalg.norm(dev, axis=1)
    second = dev.T @ dev / n
    _, v = sym_eig(second)
    starts = [dev[int(np.argmax(norms))], v[0]]
    gen = RngStream(seed).generator()
    for _ in range(extra_starts):
        starts.append(gen.standard_normal(d))
    sizes = np.arange(1, n + 1)[:, None]
    for u0 in starts:
        nrm = np.linalg.norm(u0)
        if nrm == 0:
            continue
        u = u0 / nrm
        prev = -1
        for _ in range(iters):
            proj = dev @ u
            order = np.argsort(-proj, kind="stable")
            means = np.cumsum(dev[order], axis=0) / sizes
            vals = np.linalg.norm(means, axis=1)[:k_max]
            np.maximum(best, vals, out=best)
            s_star = int(np.argmax(vals))
            center = means[s_star]
            nrm = np.linalg.norm(center)
            if nrm == 0 or s_star == prev:
                break
            prev = s_star
            u = center / nrm
    return best


def resilience(data: MeanDataset, eta, exact_budget=DEFAULT_SEARCH_BUDGET) -> ResilienceReport:
    """Worst normalized deviation of any subset of at most ceil(2 eta n)
    samples from the full mean.

    Exact enumeration over all subset sizes when affordable, otherwise the
    alternating greedy lower bound flagged exact=False.
    """
    if not 0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    n = data.n
    k = min(max(int(np.ceil(2 * eta * n)), 1), n)
    dev = data.samples - data.mean()
    if math.comb(n, k) <= exact_budget:
        best_val, best_sub = -1.0, None
        for s in range(1, k + 1):
            idx = _combo_index(n, s)
            sums = dev[idx].mean(axis=1)
            vals = np.linalg.norm(sums, axis=1)
            j = int(np.argmax(vals))
            if vals[j] > best_val:
                best_val, best_sub = float(vals[j]), idx[j]
        return ResilienceReport(eta, np.asarray(best_sub), best_val, exact=True)
    val, sub = _greedy_worst_subset(dev, k)
    return ResilienceReport(eta, sub, val, exact=False)


def feasibility_threshold(s, n, d, beta):
    """Per-size subset-deviation threshold: a clean Gaussian dataset meets it
    simultaneously for every subset size s (union bound over sizes)."""
    return FEASIBILITY_C * math.sqrt(
        (d + math.log(1.0 / beta)) / s + math.log(math.e * n / s)
    )


def _feasibility_thresholds(k, n, d, beta):
    s = np.arange(1, k + 1, dtype=np.float64)
    return FEASIBILITY_C * np.sqrt((d + math.log(1.0 / beta)) / s + np.log(math.e * n / s))


def _worst_by_size_exact(dev, k):
    n = dev.shape[0]
    out = np.zeros(k)
    for s in range(1, k + 1):
        idx = _combo_index(n, s)
        out[s - 1] = float(np.linalg.norm(dev[idx].mean(axis=1), axis=1).max())
    return out


def _deviation_curve(data: MeanDataset, k, budget):
    dev = data.samples - data.mean()
    if math.comb(data.n, k) <= budget:
        return _worst_by_size_exact(dev, k)
    return worst_deviation_by_size(data, k)


def robust_mean_statistical(
    obs: ContaminatedDataset,
    eta,
    beta=DEFAULT_BETA,
    budget=DEFAULT_SEARCH_BUDGET,
) -> Optional[np.ndarray]:
    """Feasibility search: replace at most floor(eta n) points so that every
    small subset of the result stays close to its mean; return that mean.

    Returns None (the bottom outcome) when no feasible reconstruction is
    found within budget.
    """
    if eta >= 1.0 / 3.0:
        raise ValueError("the search estimator requires eta < 1/3")
    data = obs.observed
    n, d = data.n, data.dim
    if eta == 0 or int(np.floor(eta * n)) == 0:
        return data.mean()
    r = int(np.floor(eta * n))
    k = min(max(int(np.ceil(2 * eta * n)), 1), n)
    thresholds = _feasibility_thresholds(k, n, d, beta)

    def candidate_mean_if_feasible(drop):
        y = data.samples.copy()
        keep_mean = np.delete(y, drop, axis=0).mean(axis=0) if len(drop) else y.mean(axis=0)
        if len(drop):
            y[np.asarray(drop)] = keep_mean
        curve = _deviation_curve(MeanDataset(y), k, budget)
        if np.all(curve <= thresholds):
            return y.mean(axis=0)
        return None

    if math.comb(n, r) <= budget:
        for size in range(r + 1):
            for drop in itertools.combinations(range(n), size):
                out = candidate_mean_if_feasible(list(drop))
                if out is not None:
                    return out
        return None

    # greedy fallback: repeatedly drop the largest remaining deviation
    drop = []
    for _ in range(r + 1):
        out = candidate_mean_if_feasible(drop)
        if out is not None:
            return out
        if len(drop) == r:
            break
        y = data.samples.copy()
        if drop:
            y[np.asarray(drop)] = np.delete(data.samples, drop, axis=0).mean(axis=0)
        dev = np.linalg.norm(y - y.mean(axis=0), axis=1)
        if drop:
            dev[np.asarray(drop, dtype=int)] = -1.0
        drop.append(int(np.argmax(dev)))
    return None


def filter_targets(eta, d, n, beta=DEFAULT_BETA):
    """Declared certificate bounds (alpha0, alpha1, alpha2) for the filter."""
    base = math.sqrt((d + math.log(1.0 / beta)) / n)
    alpha0 = ALPHA_COEFF * (base + _xloglin(eta))
    alpha1 = ALPHA_COEFF * (math.sqrt(max(eta, 0.0)) * base + _xlog(eta))
    return alpha0, alpha1, alpha0


def robust_mean_filter(obs: ContaminatedDataset, eta, beta=DEFAULT_BETA):
    """Iterative soft filtering; returns (estimate, certificate).

    Downweights by squared projection on the top eigendirection of the
    weighted covariance until its top eigenvalue is at most 1 + alpha0.
    Raises FilterBudgetError when more than 3 eta n mass is removed.
    """
    if eta >= 1.0 / 6.0 + 1e-12:
        raise ValueError("the filter estimator requires eta < 1/6")
    data = obs.observed
    x = data.samples
    n, d = data.n, data.dim
    alpha0, alpha1, alpha2 = filter_targets(eta, d, n, beta)
    budget = 3.0 * eta * n
    a, _, _, status = kernels.mean_filter(x, alpha0, budget, max_iter=n + 64)
    if status == kernels.FILTER_BUDGET:
        raise FilterBudgetError(
            f"adversarial budget exceeded: filter tried to remove more than {budget:.2f} mass"
        )
    total = a.sum()
    estimate = (a @ x) / total
    cert = WeightCertificate(
        weights=a,
        alpha0=alpha0,
        alpha1=alpha1,
        alpha2=alpha2,
        candidate_mean=estimate,
        eta=eta,
    )
    return estimate, cert


def certify_weights(
    data: MeanDataset,
    cert: WeightCertificate,
    directions=256,
    rng: RngStream = RngStream(0),
) -> CertificationResult:
    """Evaluate the weighted first/second-moment deviations of `data` under
    the certificate weights, over the top eigendirection of the weighted
    covariance plus random unit directions; fail if any observed deviation
    exceeds the declared bounds or the weight mass is below 1 - 2 eta."""
    a = cert.weights
    if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
        raise ValueError("weights must lie in [0, 1]")
    x = data.samples
    n, d = data.n, data.dim
    mass = float(a.mean())

    centered_c = x - cert.candidate_mean
    cov = (centered_c.T * a) @ centered_c / n
    w, v = sym_eig(cov)
    alpha0_obs = max(0.0, float(w[0]) - 1.0)

    dirs = [v[0]]
    gen = rng.generator()
    for _ in range(directions):
        g = gen.standard_normal(d)
        dirs.append(g / np.linalg.norm(g))
    dirs = np.asarray(dirs)

    centered = x - data.mean()
    proj = centered @ dirs.T  # n x (directions + 1)
    first = np.abs((a @ proj) / n)
    second = np.abs((a @ (proj**2)) / n - 1.0)
    alpha1_obs = float(first.max())
    alpha2_obs = float(second.max())

    passed = (
        mass >= 1.0 - 2.0 * cert.eta - 1e-12
        and alpha0_obs <= cert.alpha0 + 1e-12
        and alpha1_obs <= cert.alpha1 + 1e-12
        and alpha2_obs <= cert.alpha2 + 1e-12
    )
    return CertificationResult(
        passed=passed, alpha0=alpha0_obs, alpha1=alpha1_obs, alpha2=alpha2_obs, mass=mass
    )


def certificate_error_bound(cert: WeightCertificate, c1=8.0, c2=8.0, c3=8.0):
    """Error bound implied by a passing certificate:
    alpha1 + sqrt(c1 eta (alpha0 + alpha2) + c2 eta alpha1^2 + c3 eta^2 (alpha0 + alpha2))."""
    eta = cert.eta
    a0, a1, a2 = cert.alpha0, cert.alpha1, cert.alpha2
    return a1 + math.sqrt(c1 * eta * (a0 + a2) + c2 * eta * a1**2 + c3 * eta**2 * (a0 + a2))
