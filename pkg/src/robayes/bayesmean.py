"""End-to-end private Bayesian mean estimation: anisotropic bucketing,
per-bucket isotropic mechanisms, posterior-mean assembly, the frequentist
wrapper, and the streaming estimator.

Buckets are labelled by the dyadic scale sigma_i^2 = 2^{-i} ||L^2||_op (the
lower edge of bucket i); the per-bucket estimator operates at the upper edge
2 sigma_i^2 so that rescaled clean data has coordinate variances at most 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import MeanDataset, PriorSpec, shrinkage
from .numerics import RngStream, SymMatrix, sym_eig
from .privacy import DEFAULT_MAX_CELLS, RateFunction, private_empirical_mean


@dataclass(frozen=True)
class BucketPlan:
    """Dyadic eigenvalue partition of a PSD matrix, with cached rotation."""

    m: int
    buckets: tuple  # tuple of (index array, sigma2)
    tail: np.ndarray
    eigenvalues: np.ndarray  # of the bucketed matrix, descending
    rotation: np.ndarray  # rows are eigenvectors
    epsilon_split: Optional[float] = None


def bucket_plan(lambda2, m, epsilon=None) -> BucketPlan:
    """Partition the eigenvalues of lambda2 into m dyadic buckets; bucket i
    holds eigenvalues in (2^{-i} top, 2^{-(i-1)} top]; the rest go to tail."""
    if m < 1:
        raise ValueError("m must be >= 1")
    mat = lambda2 if isinstance(lambda2, SymMatrix) else SymMatrix(lambda2)
    w, v = sym_eig(mat)
    top = max(float(w[0]), 0.0)
    split = None if epsilon is None else epsilon / (m + 1)
    if top <= 0.0:
        return BucketPlan(
            m=m,
            buckets=(),
            tail=np.arange(mat.dim),
            eigenvalues=w,
            rotation=v,
            epsilon_split=split,
        )
    buckets = []
    assigned = np.zeros(mat.dim, dtype=bool)
    for i in range(1, m + 1):
        lo, hi = 2.0 ** (-i) * top, 2.0 ** (-(i - 1)) * top
        idx = np.where((w > lo) & (w <= hi * (1 + 1e-12)))[0]
        if idx.size:
            buckets.append((idx, lo))
            assigned[idx] = True
    tail = np.where(~assigned)[0]
    return BucketPlan(
        m=m,
        buckets=tuple(buckets),
        tail=tail,
        eigenvalues=w,
        rotation=v,
        epsilon_split=split,
    )


def default_bucket_count(n, d, epsilon, alpha_target):
    """ceil(log2(n d eps / alpha_target)) clipped to [1, 40]."""
    raw = math.ceil(math.log2(max(n * d * epsilon / max(alpha_target, 1e-12), 2.0)))
    return min(max(raw, 1), 40)


def _gaussian_norm_bound(variances, level_log):
    """1 - exp(-level_log) bound on the norm of a centered Gaussian with the
    given coordinate variances."""
    v = np.asarray(variances, dtype=np.float64)
    s1, s2, vmax = v.sum(), (v**2).sum(), v.max() if v.size else 0.0
    return math.sqrt(s1 + 2.0 * math.sqrt(s2 * level_log) + 2.0 * vmax * level_log)


def _run_buckets(rotated, plan: BucketPlan, radii, epsilon_split, beta_split, mode, rng, max_cells):
    """Run the isotropic mechanism per bucket on rescaled coordinates and
    reassemble in the rotated basis; tail coordinates map to zero."""
    n, d = rotated.shape
    out = np.zeros(d)
    for b, (idx, sigma2) in enumerate(plan.buckets):
        if mode != "exact" and idx.size > 6:
            raise ValueError(
                f"bucket {b + 1} has dimension {idx.size}; the score grid supports d <= 6"
            )
        scale = math.sqrt(2.0 * sigma2)  # upper bucket edge
        block = rotated[:, idx] / scale
        if mode == "exact":
            est = block.mean(axis=0)
        else:
            est = private_empirical_mean(
                MeanDataset(block),
                epsilon=epsilon_split,
                beta=beta_split,
                radius=radii[b] / scale,
                mode=mode,
                rng=rng.child(b),
                max_cells=max_cells,
            )
        out[idx] = est * scale
    return out


def private_posterior_mean(
    obs: MeanDataset,
    prior: PriorSpec,
    epsilon,
    beta,
    mode="eff",
    rng: RngStream = RngStream(0),
    m: Optional[int] = None,
    max_cells=DEFAULT_MAX_CELLS,
):
    """Rotate into the shrinkage eigenbasis, bucket by eigenvalue, run the
    per-bucket isotropic mechanism at budget epsilon/(M+1), zero the tail,
    and reassemble an estimate of the posterior mean.

    mode "exact" skips privacy and uses exact per-bucket means (testing and
    the non-private limit)."""
    if prior.kind == "improper":
        raise ValueError("use frequentist_private_mean for the improper prior")
    n, d = obs.n, obs.dim
    lam = shrinkage(prior, n)
    lam2 = SymMatrix(lam.lambda_.entries @ lam.lambda_.entries)
    if m is None:
        rate = RateFunction("mean-eff" if mode != "stat" else "mean-stat", d, n, beta)
        m = default_bucket_count(n, d, epsilon, rate.alpha(1.0 / n))
    plan = bucket_plan(lam2, m, epsilon)
    beta_split = beta / (plan.m + 1)

    # prior eigenvalues in the shared eigenbasis, from the shrinkage relation
    w2 = np.clip(plan.eigenvalues, 0.0, None)
    w_lam = np.sqrt(w2)
    if prior.kind == "isotropic":
        prior_eigs = np.full(d, prior.sigma2)
    else:
        pw, _ = sym_eig(prior.cov)
        # eigenvalues sorted the same way as lambda2 (shared eigenvectors)
        prior_eigs = np.sort(np.clip(pw, 0.0, None))[::-1]

    level = math.log((plan.m + 1) / beta)
    radii = []
    for idx, _ in plan.buckets:
        variances = w2[idx] * (prior_eigs[idx] + 1.0 / n)
        radii.append(1.2 * _gaussian_norm_bound(variances, level))

    rotated = obs.samples @ plan.rotation.T  # coordinates in the eigenbasis
    rotated = rotated * w_lam[None, :]  # shrinkage applied per coordinate
    out = _run_buckets(
        rotated, plan, radii, epsilon / (plan.m + 1), beta_split, mode, rng, max_cells
    )
    return plan.rotation.T @ out


def frequentist_private_mean(
    obs: MeanDataset,
    lam,
    radius,
    epsilon,
    beta,
    mode="eff",
    rng: RngStream = RngStream(0),
    m: Optional[int] = None,
    max_cells=DEFAULT_MAX_CELLS,
):
    """Private empirical-mean estimate for N(mu, L^2) data with known L and
    the public promise ||x-bar|| <= radius."""
    lam = lam if isinstance(lam, SymMatrix) else SymMatrix(lam)
    n, d = obs.n, obs.dim
    lam2 = SymMatrix(lam.entries @ lam.entries)
    if m is None:
        rate = RateFunction("mean-eff" if mode != "stat" else "mean-stat", d, n, beta)
        m = default_bucket_count(n, d, epsilon, max(rate.alpha(1.0 / n), 1e-9))
    plan = bucket_plan(lam2, m, epsilon)
    beta_split = beta / (plan.m + 1)
    w2 = np.clip(plan.eigenvalues, 0.0, None)
    level = math.log((plan.m + 1) / max(beta, 1e-12))
    radii = []
    for idx, _ in plan.buckets:
        spread = _gaussian_norm_bound(w2[idx] / n, level)
        radii.append(radius + 1.2 * spread)
    rotated = obs.samples @ plan.rotation.T
    out = _run_buckets(
        rotated, plan, radii, epsilon / (plan.m + 1), beta_split, mode, rng, max_cells
    )
    return plan.rotation.T @ out


@dataclass(frozen=True)
class StreamState:
    """Running private posterior state; precision is exactly n * t."""

    t: int
    mu: np.ndarray
    batch_size: int

    @property
    def precision(self):
        return self.batch_size * self.t

    @staticmethod
    def initial(dim, batch_size):
        return StreamState(t=0, mu=np.zeros(dim), batch_size=batch_size)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Per-batch budgets eps_i = eps / (i log2 k); total <= 2 eps."""

    epsilon: float
    k: int

    @property
    def epsilons(self):
        if self.k == 1:
            return [self.epsilon]
        log_k = math.log2(self.k)
        return [self.epsilon / (i * log_k) for i in range(1, self.k + 1)]

    @property
    def total(self):
        return sum(self.epsilons)

    def check_composition(self):
        if self.k == 1:
            return True
        bound = self.epsilon * (1.0 + math.log(self.k)) / math.log2(self.k)
        return self.total <= bound + 1e-12 and bound <= 2.0 * self.epsilon + 1e-12


def error_recursion(per_batch_error, k):
    """E_{t+1} = (t/(1+t)) E_t + C/(1+t); stays at most C for every t."""
    errs = []
    e = 0.0
    for t in range(k):
        e = (t / (1.0 + t)) * e + per_batch_error / (1.0 + t)
        errs.append(e)
    return np.asarray(errs)


def stream_update(
    state: StreamState,
    batch: MeanDataset,
    epsilon_i,
    mode="eff",
    rng: RngStream = RngStream(0),
    radius=4.0,
    beta=0.05,
    max_cells=DEFAULT_MAX_CELLS,
):
    """One pan-private posterior update: the new state is the running average
    of per-batch (privately estimated) means, with precision n(t+1)."""
    if batch.n != state.batch_size:
        raise ValueError(f"batch size {batch.n} != configured {state.batch_size}")
    if mode == "exact":
        batch_est = batch.mean()
    else:
        batch_est = private_empirical_mean(
            batch,
            epsilon=epsilon_i,
            beta=beta,
            radius=radius,
            mode=mode,
            rng=rng,
            max_cells=max_cells,
        )
    t = state.t
    mu = (t / (1.0 + t)) * state.mu + batch_est / (1.0 + t)
    return StreamState(t=t + 1, mu=mu, batch_size=state.batch_size)


def run_stream(
    batches,
    epsilon,
    mode="eff",
    rng: RngStream = RngStream(0),
    radius=4.0,
    beta=0.05,
    sink=None,
):
    """Drive the streaming estimator over the batches under the epsilon
    schedule; optionally write one JSON line per batch to `sink`."""
    batches = list(batches)
    schedule = EpsilonSchedule(epsilon, len(batches))
    state = StreamState.initial(batches[0].dim, batches[0].n)
    states = []
    for i, (batch, eps_i) in enumerate(zip(batches, schedule.epsilons)):
        state = stream_update(
            state, batch, eps_i, mode=mode, rng=rng.child(i), radius=radius, beta=beta
        )
        states.append(state)
        if sink is not None:
            sink.write(
                json.dumps({"t": state.t, "estimate": state.mu.tolist(), "epsilon_i": eps_i})
                + "\n"
            )
    return states
