"""Robust and private Bayesian linear regression.

Each constraint system is realized as alternating trimming: fit on the kept
set, check the certificates (covariance deviation and short-flat
decompositions), drop the worst ceil(eta n / 4) violators of the binding
certificate, refit; total drop budget 3 eta n. Dropped points contribute
nothing to X y sums (zero-imputation) while denominators keep the full n.

lambda = 1/(n sigma^2) throughout. Frozen constants: CHI = 4 shared with the
concentration module; the two-stage resilience constant is 3.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .concentration import CHI, ShortFlatDecomposition, short_flat_decompose
from .model import ContaminatedDataset, RegressionDataset, ols
from .numerics import RngStream, sym_eig

TWO_STAGE_C = 3.0
MAX_TRIM_ROUNDS = 64


class TrimBudgetError(RuntimeError):
    """Trimming would exceed the 3 eta n drop budget."""


class CompletionInfeasibleError(RuntimeError):
    """No replacement within budget achieves the requested resilience."""


@dataclass(frozen=True)
class RegressionEstimate:
    w_hat: np.ndarray
    stage: str
    kept_mask: np.ndarray
    cov_deviation: float
    residual_cert: Optional[ShortFlatDecomposition] = None
    shift_cert: Optional[ShortFlatDecomposition] = None

    @property
    def kept_count(self):
        return int(self.kept_mask.sum())

    def to_json(self):
        payload = {
            "stage": self.stage,
            "w_hat": self.w_hat.tolist(),
            "kept_mask": self.kept_mask.astype(int).tolist(),
            "cov_deviation": self.cov_deviation,
        }
        if self.residual_cert is not None:
            payload["residual_norm_z1_sq"] = self.residual_cert.norm_z1_sq
            payload["residual_norm_z2_inf_sq"] = self.residual_cert.norm_z2_inf_sq
        if self.shift_cert is not None:
            payload["shift_norm_z1_sq"] = self.shift_cert.norm_z1_sq
            payload["shift_norm_z2_inf_sq"] = self.shift_cert.norm_z2_inf_sq
        return json.dumps(payload)


def _observed(obs):
    return obs.observed if isinstance(obs, ContaminatedDataset) else obs


def _cov_deviation_masked(x, kept):
    m = int(kept.sum())
    if m == 0:
        return float("inf")
    xk = x[:, kept]
    mat = xk @ xk.T / m - np.eye(x.shape[0])
    w, _ = sym_eig(mat)
    return float(max(abs(w[0]), abs(w[-1])))


def _leverage(x, kept):
    xk = x[:, kept]
    gram = xk @ xk.T
    try:
        sol = np.linalg.solve(gram, xk)
    except np.linalg.LinAlgError:
        sol = np.linalg.pinv(gram) @ xk
    return np.einsum("ij,ij->j", xk, sol)


def _drop(kept, candidates_local, scores, count):
    """Drop up to `count` kept points, largest score first, lowest index ties."""
    order = np.argsort(-scores, kind="stable")[:count]
    idx = candidates_local[order]
    kept = kept.copy()
    kept[idx] = False
    return kept


def residual_budgets(eta, n, beta):
    """(||z1||^2, ||z2||_inf^2) budgets for a short-flat residual split."""
    short = CHI * (eta * n * math.log(1.0 / eta) + math.log(1.0 / beta))
    flat = CHI * (math.log(1.0 / eta) + math.log(1.0 / beta) / (eta * n))
    return short, flat


def shift_budgets(eta, n):
    """Budgets for the decomposition of X^T (w - w_ref)."""
    return CHI * eta * n * math.log(1.0 / eta), CHI * math.log(1.0 / eta)


def cov_bound(d, n, beta):
    return CHI * math.sqrt((d + math.log(1.0 / beta)) / n)


def _short_flat_ok(vec, kept, eta, short_budget, flat_budget):
    """Short-flat certificate on the kept entries (zeros elsewhere)."""
    masked = np.where(kept, vec, 0.0)
    dec = short_flat_decompose(masked, eta)
    ok = dec.norm_z1_sq <= short_budget and dec.norm_z2_inf_sq <= flat_budget
    return dec, ok


def _trim_loop(obs, eta, beta, fit, certs):
    """Generic alternating trimming.

    fit(kept) -> state; certs(state, kept) -> list of
    (name, ok, candidate_scores_over_kept). Drops the worst violators of the
    first failing certificate each round.
    """
    data = _observed(obs)
    n = data.n
    kept = np.ones(n, dtype=bool)
    if eta == 0:
        return fit(kept), kept
    budget = int(math.floor(3 * eta * n))
    per_round = max(1, int(math.ceil(eta * n / 4.0)))
    for _ in range(MAX_TRIM_ROUNDS):
        state = fit(kept)
        failing = None
        for name, ok, scores in certs(state, kept):
            if not ok:
                failing = scores
                break
        if failing is None:
            return state, kept
        drop_now = min(per_round, budget - (n - int(kept.sum())))
        if drop_now <= 0:
            raise TrimBudgetError("trimming exceeded the 3 eta n budget")
        kept = _drop(kept, np.where(kept)[0], failing, drop_now)
    raise TrimBudgetError("trimming did not converge within the round limit")


def critical_posterior_estimate(obs, sigma2, eta, beta) -> RegressionEstimate:
    """Single-program estimator for the sigma^2 = Theta(1/n) regime:
    trim until the kept covariates have near-identity covariance and the kept
    responses admit a short-flat split, then return X y / (1/sigma^2 + n)."""
    data = _observed(obs)
    n, d = data.n, data.dim
    if not (0.1 / n <= sigma2 <= 10.0 / n):
        raise ValueError("critical regime requires sigma2 within [0.1/n, 10/n]")
    if eta >= 1.0 / 6.0 + 1e-12:
        raise ValueError("requires eta < 1/6")
    x, y = data.design, data.responses
    cb = cov_bound(d, n, beta)
    short_b, flat_b = residual_budgets(max(eta, 1.0 / n), n, beta)

    def fit(kept):
        return kept

    def certs(state, kept):
        out = []
        dev = _cov_deviation_masked(x, kept)
        lev = _leverage(x, kept) if dev > cb else None
        out.append(("cov", dev <= cb, lev))
        dec, ok = _short_flat_ok(y, kept, max(eta, 1.0 / n), short_b, flat_b)
        out.append(("resp", ok, np.abs(y[kept])))
        return out

    _, kept = _trim_loop(obs, eta, beta, fit, certs)
    w = (x[:, kept] @ y[kept]) / (1.0 / sigma2 + n)
    dec, _ = _short_flat_ok(y, kept, max(eta, 1.0 / n), short_b, flat_b)
    return RegressionEstimate(
        w_hat=w,
        stage="critical",
        kept_mask=kept,
        cov_deviation=_cov_deviation_masked(x, kept),
        residual_cert=dec,
    )


def _ols_on(data, kept):
    sub = RegressionDataset(data.design[:, kept], data.responses[kept])
    return ols(sub)


def rough_regression(obs, eta, beta) -> RegressionEstimate:
    """Alternating trimmed least squares under the residual short-flat
    certificate; constant-error initialization for the weak-prior pipeline."""
    data = _observed(obs)
    n, d = data.n, data.dim
    if eta >= 1.0 / 6.0 + 1e-12:
        raise ValueError("requires eta < 1/6")
    if eta > 0 and n < (d + math.log(1.0 / beta)) / eta:
        raise ValueError("requires n >= (d + log(1/beta)) / eta")
    x, y = data.design, data.responses
    cb = cov_bound(d, n, beta)
    e = max(eta, 1.0 / n)
    short_b, flat_b = residual_budgets(e, n, beta)

    def fit(kept):
        return _ols_on(data, kept)

    def certs(w, kept):
        resid = y - x.T @ w
        out = []
        dev = _cov_deviation_masked(x, kept)
        lev = _leverage(x, kept) if dev > cb else None
        out.append(("cov", dev <= cb, lev))
        masked = np.where(kept, resid, 0.0)
        total_ok = float(masked @ masked) <= 2.0 * n
        dec, sf_ok = _short_flat_ok(resid, kept, e, short_b, flat_b)
        out.append(("resid", sf_ok and total_ok, np.abs(resid[kept])))
        return out

    w, kept = _trim_loop(obs, eta, beta, fit, certs)
    resid = y - x.T @ w
    dec, _ = _short_flat_ok(resid, kept, e, short_b, flat_b)
    return RegressionEstimate(
        w_hat=w,
        stage="rough",
        kept_mask=kept,
        cov_deviation=_cov_deviation_masked(x, kept),
        residual_cert=dec,
    )


def _refinement_fit_and_certs(data, w_ref, eta, beta, fit):
    """Shared certificate set for the refinement stages: covariance, the
    residual split at the fitted w, and the split of X^T (w - w_ref)."""
    n, d = data.n, data.dim
    x, y = data.design, data.responses
    cb = cov_bound(d, n, beta)
    e = max(eta, 1.0 / n)
    short_b, flat_b = residual_budgets(e, n, beta)
    shift_short, shift_flat = shift_budgets(e, n)
    # the beta slack enters the shift budgets through the residual ones
    shift_short += CHI * math.log(1.0 / beta)
    shift_flat += CHI * math.log(1.0 / beta) / (e * n)

    def certs(w, kept):
        out = []
        dev = _cov_deviation_masked(x, kept)
        lev = _leverage(x, kept) if dev > cb else None
        out.append(("cov", dev <= cb, lev))
        resid = y - x.T @ w
        dec_r, ok_r = _short_flat_ok(resid, kept, e, short_b, flat_b)
        out.append(("resid", ok_r, np.abs(resid[kept])))
        shift = x.T @ (w - w_ref)
        dec_b, ok_b = _short_flat_ok(shift, kept, e, shift_short, shift_flat)
        out.append(("shift", ok_b, np.abs(shift[kept])))
        return out

    return certs, (e, short_b, flat_b, shift_short, shift_flat)


def refine_regression(obs, w_init, eta, beta) -> RegressionEstimate:
    """First refinement: residualize at w_init, fit the least-squares anchor
    w = w_init + X (y - X^T w_init) / n on the kept set under the residual
    and shift certificates. At eta = 0 this reproduces OLS exactly when
    w_init is the OLS solution (normal equations)."""
    data = _observed(obs)
    n = data.n
    if eta >= 1.0 / 6.0 + 1e-12:
        raise ValueError("requires eta < 1/6")
    x, y = data.design, data.responses
    w_init = np.asarray(w_init, dtype=np.float64)
    resid0 = y - x.T @ w_init

    def fit(kept):
        return w_init + (x[:, kept] @ resid0[kept]) / n

    certs, params = _refinement_fit_and_certs(data, w_init, eta, beta, fit)
    w, kept = _trim_loop(obs, eta, beta, fit, certs)
    e, short_b, flat_b, _, _ = params
    resid_dec, _ = _short_flat_ok(y - x.T @ w, kept, e, short_b, flat_b)
    shift_dec, _ = _short_flat_ok(x.T @ (w - w_init), kept, e, short_b, flat_b)
    return RegressionEstimate(
        w_hat=w,
        stage="refined",
        kept_mask=kept,
        cov_deviation=_cov_deviation_masked(x, kept),
        residual_cert=resid_dec,
        shift_cert=shift_dec,
    )


def posterior_refine(obs, w1, sigma2, eta, beta) -> RegressionEstimate:
    """Final stage: w2 = X (y - X^T w1) / (n + 1/sigma^2) on the kept set,
    returned as (1 + 1/(n sigma^2))^{-1} w1 + w2."""
    data = _observed(obs)
    n = data.n
    if eta >= 1.0 / 6.0 + 1e-12:
        raise ValueError("requires eta < 1/6")
    x, y = data.design, data.responses
    w1 = np.asarray(w1, dtype=np.float64)

    def fit(kept):
        return w1

    certs, params = _refinement_fit_and_certs(data, w1, eta, beta, fit)
    _, kept = _trim_loop(obs, eta, beta, fit, certs)
    w2 = (x[:, kept] @ (y[kept] - x[:, kept].T @ w1)) / (n + 1.0 / sigma2)
    w_out = w1 / (1.0 + 1.0 / (n * sigma2)) + w2
    e, short_b, flat_b, _, _ = params
    resid_dec, _ = _short_flat_ok(y - x.T @ w1, kept, e, short_b, flat_b)
    return RegressionEstimate(
        w_hat=w_out,
        stage="posterior",
        kept_mask=kept,
        cov_deviation=_cov_deviation_masked(x, kept),
        residual_cert=resid_dec,
    )


def weak_prior_pipeline(obs, sigma2, eta, beta) -> RegressionEstimate:
    """rough -> refine -> posterior refinement, all on the same dataset."""
    rough = rough_regression(obs, eta, beta)
    refined = refine_regression(obs, rough.w_hat, eta, beta)
    return posterior_refine(obs, refined.w_hat, sigma2, eta, beta)


def posterior_identity(u, a_matrix, g, lam):
    """u + (A + lam I)^{-1} (g - lam u); equals the posterior mean for
    A = (1/n) X X^T, g = (1/n) X (y - X^T u), lam = 1/(n sigma^2)."""
    u = np.asarray(u, dtype=np.float64)
    a = np.asarray(a_matrix, dtype=np.float64)
    d = a.shape[0]
    return u + np.linalg.solve(a + lam * np.eye(d), np.asarray(g) - lam * u)


def small_set_sum_norm(vs, k, iters=40, extra_starts=4, seed=3, exact_budget=100_000):
    """Maximum of ||sum_{i in S} v_i|| / n over |S| <= k (uncentered
    small-set resilience); exact enumeration when affordable, else greedy."""
    vs = np.asarray(vs, dtype=np.float64)
    n, d = vs.shape
    k = min(k, n)
    if sum(math.comb(n, s) for s in range(1, k + 1)) <= exact_budget:
        import itertools

        best_val, best_sub = 0.0, np.array([], dtype=int)
        for s in range(1, k + 1):
            for sub in itertools.combinations(range(n), s):
                val = float(np.linalg.norm(vs[list(sub)].sum(axis=0))) / n
                if val > best_val:
                    best_val, best_sub = val, np.asarray(sub)
        return best_val, best_sub
    norms = np.linalg.norm(vs, axis=1)
    starts = [vs[int(np.argmax(norms))]]
    second = vs.T @ vs / n
    _, v = sym_eig(second)
    starts.append(v[0])
    starts.append(-v[0])
    gen = RngStream(seed).generator()
    for _ in range(extra_starts):
        starts.append(gen.standard_normal(d))
    best_val, best_sub = 0.0, np.array([], dtype=int)
    for u0 in starts:
        nrm = np.linalg.norm(u0)
        if nrm == 0:
            continue
        u = u0 / nrm
        prev = None
        for _ in range(iters):
            proj = vs @ u
            order = np.argsort(-proj, kind="stable")
            sums = np.cumsum(vs[order[:k]], axis=0)
            vals = np.linalg.norm(sums, axis=1) / n
            s_star = int(np.argmax(vals))
            sub = np.sort(order[: s_star + 1])
            if vals[s_star] > best_val + 1e-15:
                best_val, best_sub = float(vals[s_star]), sub
            if prev is not None and np.array_equal(sub, prev):
                break
            prev = sub
            total = vs[sub].sum(axis=0)
            nrm = np.linalg.norm(total)
            if nrm == 0:
                break
            u = total / nrm
    return best_val, best_sub


def completion_mean(vs, eta, tau, max_rounds=None):
    """Replace at most floor(eta n) vectors so that the small-set resilience
    at level 2 eta drops to tau; return the mean of the replaced sequence.

    Replacements take the norm-trimmed mean value. When the clean sequence is
    also tau-resilient, the output is within 2 tau of the clean mean.
    """
    mean, _ = _completion_with_mask(vs, eta, tau, max_rounds)
    return mean


def _completion_with_mask(vs, eta, tau, max_rounds=None):
    if tau <= 0:
        raise ValueError("tau must be positive")
    vs = np.asarray(vs, dtype=np.float64).copy()
    n = vs.shape[0]
    k2 = min(max(int(np.ceil(2 * eta * n)), 1), n)
    budget = int(np.floor(eta * n))
    replaced = np.zeros(n, dtype=bool)
    rounds = max_rounds if max_rounds is not None else budget + 1
    trim = int(np.ceil(eta * n))
    for _ in range(rounds):
        val, sub = small_set_sum_norm(vs, k2)
        if val <= tau:
            return vs.mean(axis=0), replaced
        if int(replaced.sum()) >= budget:
            raise CompletionInfeasibleError(
                f"resilience {val:.4f} > tau {tau:.4f} after exhausting the budget"
            )
        # replace the single worst contributor, then re-search
        norms = np.linalg.norm(vs, axis=1)
        trim_cut = np.argsort(-norms, kind="stable")[:trim]
        trimmed_mask = np.ones(n, dtype=bool)
        trimmed_mask[trim_cut] = False
        trimmed_mean = vs[trimmed_mask].mean(axis=0)
        direction = vs[sub].sum(axis=0)
        direction = direction / max(np.linalg.norm(direction), 1e-300)
        worst = int(sub[int(np.argmax(vs[sub] @ direction))])
        vs[worst] = trimmed_mean
        replaced[worst] = True
    raise CompletionInfeasibleError("replacement loop did not converge")


def two_stage_resilience_tau(eta, n, d, beta, delta0=None):
    """Resilience level for the residual vectors, from the rough-stage error
    delta0; both constants frozen at 3."""
    if delta0 is None:
        delta0 = TWO_STAGE_C * (math.sqrt((d + math.log(3.0 / beta)) / n) + eta)
    loge = math.log(math.e / eta)
    return 2.0 * eta * delta0 + TWO_STAGE_C * (1.0 + delta0) * (
        math.sqrt(eta * loge) * math.sqrt((d + math.log(3.0 / beta)) / n) + eta * loge
    )


def two_stage_posterior(obs, sigma2, eta, beta) -> RegressionEstimate:
    """Completion-by-replacement estimator: a rough-then-refined fit, then a
    robust mean of the residual vectors x_i r_i, assembled through the
    posterior identity with A approximated by the identity."""
    data = _observed(obs)
    n, d = data.n, data.dim
    x, y = data.design, data.responses
    if eta == 0:
        w_post = np.linalg.solve(x @ x.T + np.eye(d) / sigma2, x @ y)
        return RegressionEstimate(
            w_hat=w_post,
            stage="two-stage",
            kept_mask=np.ones(n, dtype=bool),
            cov_deviation=_cov_deviation_masked(x, np.ones(n, dtype=bool)),
        )
    rough = rough_regression(obs, eta, beta / 3.0)
    refined = refine_regression(obs, rough.w_hat, eta, beta / 3.0)
    w_tilde = refined.w_hat
    resid = y - x.T @ w_tilde
    vs = x.T * resid[:, None]  # v_i = x_i r_i; their mean is (1/n) X r
    tau = two_stage_resilience_tau(eta, n, d, beta)
    g_hat, replaced = _completion_with_mask(vs, eta, tau)
    lam = 1.0 / (n * sigma2)
    w_out = w_tilde + (g_hat - lam * w_tilde) / (1.0 + lam)
    return RegressionEstimate(
        w_hat=w_out,
        stage="two-stage",
        kept_mask=~replaced,
        cov_deviation=_cov_deviation_masked(x, np.ones(n, dtype=bool)),
    )


def verify_certificates(est: RegressionEstimate, obs) -> bool:
    """Recompute the declared certificates against the kept data."""
    data = _observed(obs)
    x = data.design
    dev = _cov_deviation_masked(x, est.kept_mask)
    if abs(dev - est.cov_deviation) > 1e-10:
        return False
    for cert in (est.residual_cert, est.shift_cert):
        if cert is None:
            continue
        z1 = cert.z1_dense()
        if abs(float(np.sum(z1**2)) - cert.norm_z1_sq) > 1e-10:
            return False
        flat = float(np.max(np.abs(cert.z2)) ** 2) if cert.z2.size else 0.0
        if abs(flat - cert.norm_z2_inf_sq) > 1e-10:
            return False
    return True


class RegressionEstimatorHandle:
    """Score-side handle (data, eta) -> w_hat or None for private release."""

    def __init__(self, mode, sigma2, beta=0.05):
        if mode not in ("critical", "weak", "inefficient"):
            raise ValueError("mode must be critical, weak, or inefficient")
        self.mode = mode
        self.sigma2 = sigma2
        self.beta = beta

    def __call__(self, data, eta):
        try:
            if self.mode == "critical":
                return critical_posterior_estimate(data, self.sigma2, eta, self.beta).w_hat
            if self.mode == "weak":
                if eta == 0:
                    return posterior_refine(
                        data, _ols_on(_observed(data), np.ones(_observed(data).n, bool)),
                        self.sigma2, 0.0, self.beta,
                    ).w_hat
                return weak_prior_pipeline(data, self.sigma2, eta, self.beta).w_hat
            return two_stage_posterior(data, self.sigma2, eta, self.beta).w_hat
        except (TrimBudgetError, CompletionInfeasibleError, ValueError, np.linalg.LinAlgError):
            return None


def private_regression(
    obs,
    sigma2,
    epsilon,
    beta,
    mode="critical",
    rng: RngStream = RngStream(0),
    radius=None,
    max_cells=None,
):
    """Grid exponential mechanism over the regression robust-distance score."""
    from .privacy import (
        DEFAULT_MAX_CELLS,
        RateFunction,
        build_score_field,
        default_t_cap,
        exp_mechanism_grid,
    )

    data = _observed(obs)
    n, d = data.n, data.dim
    if d > 6:
        raise ValueError("the score grid supports d <= 6")
    if radius is None:
        radius = 2.0 * math.sqrt(sigma2) * math.sqrt(d)
    kind = "reg-critical" if mode == "critical" else "reg-weak"
    rate = RateFunction(kind, d=d, n=n, beta=beta)
    cell = rate.alpha(1.0 / n) / (2.0 * math.sqrt(d))
    estimator = RegressionEstimatorHandle(mode, sigma2, beta)
    field = build_score_field(
        data,
        estimator,
        rate,
        radius=2.0 * radius,
        cell=cell,
        t_cap=default_t_cap(n, "eff"),
        max_cells=max_cells or DEFAULT_MAX_CELLS,
    )
    return exp_mechanism_grid(field, epsilon, rng)
