"""Hardness-instance generators, estimation-to-distinguishing reductions,
and numeric evaluators for the low-degree advantage machinery.

Instances carry their hidden direction for evaluation only; distinguishers
accept raw datasets and refuse instance objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import MeanDataset, RegressionDataset
from .numerics import RngStream, gauss_hermite_rule, hermite_value

MAX_ADVANTAGE_DEGREE = 24
OVERLAP_MOMENT_CONSTANT = 2.0
DEFAULT_SIGNAL_K = 20.0


@dataclass(frozen=True)
class MixtureInstance:
    """Null (pure Gaussian) or planted (centered two-component mixture) data.

    hidden_v and outlier_mask are evaluation-only; distinguishers never see
    them."""

    which: str
    eta: float
    delta: float
    samples: MeanDataset
    hidden_v: Optional[np.ndarray] = None
    outlier_mask: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MlrInstance:
    """Null or planted mixture-of-linear-regressions data.

    s = sqrt(1 + K^2 alpha^2) is the response marginal scale under both laws;
    a = -K alpha / (eta s^2) tilts the outlier branch so E[x y | u] = 0.
    """

    which: str
    eta: float
    alpha: float
    signal_k: float
    s: float
    a: float
    samples: RegressionDataset
    hidden_u: Optional[np.ndarray] = None
    b_draws: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LdlrQuery:
    """Inputs for the degree-D advantage evaluator."""

    n: int
    d: int
    degree: int
    mode: str  # "mean" | "regression"
    eta: float
    delta: float = 0.0  # mean mode
    alpha: float = 0.0  # regression mode
    signal_k: float = DEFAULT_SIGNAL_K  # regression mode

    def __post_init__(self):
        if self.degree < 0 or self.degree > MAX_ADVANTAGE_DEGREE:
            raise ValueError(f"degree must lie in [0, {MAX_ADVANTAGE_DEGREE}]")
        if self.mode not in ("mean", "regression"):
            raise ValueError("mode must be 'mean' or 'regression'")
        if self.n < 0 or self.d < 1 or self.eta <= 0:
            raise ValueError("invalid query parameters")


def _unit_sphere(d, gen):
    v = gen.standard_normal(d)
    return v / np.linalg.norm(v)


def gen_mixture(eta, delta, n, d, which, rng: RngStream) -> MixtureInstance:
    """Null: N(0, I). Planted: hidden unit v, then each sample is drawn from
    N((1-eta) delta v, I) with probability eta and N(-eta delta v, I) else,
    so the mixture mean is exactly zero."""
    if not 0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    gen = rng.generator()
    if which == "null":
        samples = gen.standard_normal((n, d))
        return MixtureInstance("null", eta, delta, MeanDataset(samples))
    if which != "planted":
        raise ValueError("which must be 'null' or 'planted'")
    v = _unit_sphere(d, gen)
    outlier = gen.random(n) < eta
    centers = np.where(outlier[:, None], (1 - eta) * delta * v, -eta * delta * v)
    samples = centers + gen.standard_normal((n, d))
    return MixtureInstance(
        "planted", eta, delta, MeanDataset(samples), hidden_v=v, outlier_mask=outlier
    )


def gen_mlr(eta, alpha, n, d, which, rng: RngStream, signal_k=DEFAULT_SIGNAL_K) -> MlrInstance:
    """Null: x independent of y ~ N(0, s^2). Planted: y_i = K alpha <g_i, u> + z_i
    with an eta-fraction of covariates tilted by a y_i u."""
    if not 0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    if alpha**2 > eta + 1e-12:
        raise ValueError("requires alpha^2 <= eta")
    s = math.sqrt(1.0 + signal_k**2 * alpha**2)
    a = -signal_k * alpha / (eta * s**2)
    gen = rng.generator()
    if which == "null":
        x = gen.standard_normal((d, n))
        y = s * gen.standard_normal(n)
        return MlrInstance("null", eta, alpha, signal_k, s, a, RegressionDataset(x, y))
    if which != "planted":
        raise ValueError("which must be 'null' or 'planted'")
    u = _unit_sphere(d, gen)
    g = gen.standard_normal((d, n))
    z = gen.standard_normal(n)
    y = signal_k * alpha * (u @ g) + z
    b = gen.random(n) < eta
    x = g + np.where(b[None, :], a * y[None, :] * u[:, None], 0.0)
    data = RegressionDataset(x, y, w_star=signal_k * alpha * u)
    return MlrInstance("planted", eta, alpha, signal_k, s, a, data, hidden_u=u, b_draws=b)


def _phi(y, scale):
    return np.exp(-0.5 * (y / scale) ** 2) / (scale * math.sqrt(2 * math.pi))


def r0_density(y, eta, s):
    """Replacement density (phi_s - (1-eta) phi_1) / eta; the eta-mixture of
    r0 with N(0,1) reconstructs N(0, s^2) exactly."""
    if 1.0 - 1.0 / s > eta + 1e-12:
        raise ValueError("nonnegativity requires 1 - 1/s <= eta")
    return (_phi(y, s) - (1.0 - eta) * _phi(y, 1.0)) / eta


def r0_sample(eta, s, rng: RngStream):
    """Rejection sampling from r0 with proposal N(0, s^2)."""
    if 1.0 - 1.0 / s > eta + 1e-12:
        raise ValueError("nonnegativity requires 1 - 1/s <= eta")
    if eta >= 1.0:
        return float(s * rng.generator().standard_normal())
    gen = rng.generator()
    for _ in range(100_000):
        y = s * gen.standard_normal()
        # accept with probability eta * r0(y) / phi_s(y)
        accept = 1.0 - (1.0 - eta) * _phi(y, 1.0) / _phi(y, s)
        if gen.random() < accept:
            return float(y)
    raise RuntimeError("rejection sampler failed to accept")


def verdict_jsonl_line(trial, truth, verdict):
    """One verdict-log record; instances themselves serialize through the
    dataset CSV formats."""
    import json

    return json.dumps({"trial": int(trial), "truth": truth, "verdict": verdict})


def _require_dataset(samples, kind):
    if isinstance(samples, (MixtureInstance, MlrInstance)):
        raise TypeError(
            "distinguishers take raw datasets; hidden-direction instances are "
            "evaluation-only"
        )
    if not isinstance(samples, kind):
        raise TypeError(f"expected {kind.__name__}, got {type(samples).__name__}")


def mean_distinguisher(samples: MeanDataset, estimator, alpha):
    """Guess null iff the robust estimate is within alpha of the sample mean."""
    _require_dataset(samples, MeanDataset)
    est = estimator(samples)
    if est is None:
        return "planted"
    dist = np.linalg.norm(np.asarray(est) - samples.mean())
    return "null" if dist <= alpha else "planted"


def regression_distinguisher(samples: RegressionDataset, estimator, alpha, sigma2):
    """Guess planted iff the robust estimate sits >= 2 alpha from the
    simplified posterior statistic (n + 1/sigma2)^{-1} X y."""
    _require_dataset(samples, RegressionDataset)
    w_obs = samples.design @ samples.responses / (samples.n + 1.0 / sigma2)
    est = estimator(samples)
    if est is None:
        return "planted"
    dist = np.linalg.norm(np.asarray(est) - w_obs)
    return "planted" if dist >= 2 * alpha else "null"


def hermite_moment_mixture(eta, delta, j):
    """Exact j-th orthonormal Hermite coefficient of the centered univariate
    mixture (1-eta) N(-eta delta, 1) + eta N((1-eta) delta, 1)."""
    if j < 0 or j > 32:
        raise ValueError("j must lie in [0, 32]")
    root_fact = math.sqrt(math.factorial(j))
    return ((1.0 - eta) * (-eta * delta) ** j + eta * ((1.0 - eta) * delta) ** j) / root_fact


def psi_response_factor(y, k, theta, eta):
    """The degree-k response factor of the planted one-sample likelihood
    ratio: theta^k ((1-eta) h_k(y) + eta h_k((1 - 1/eta) y))."""
    y = np.asarray(y, dtype=np.float64)
    return theta**k * ((1.0 - eta) * hermite_value(k, y) + eta * hermite_value(k, (1.0 - 1.0 / eta) * y))


def psi_norm_detail(k, theta, eta, order=160):
    """Squared L2(N(0,1)) norm of the degree-k response factor.

    Quadrature is exact for these polynomial integrands; if it overflows the
    Mehler-bound surrogate is returned with surrogate=True.
    """
    if k < 0 or k > MAX_ADVANTAGE_DEGREE:
        raise ValueError(f"k must lie in [0, {MAX_ADVANTAGE_DEGREE}]")
    if not 0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    rule = gauss_hermite_rule(order)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = psi_response_factor(rule.nodes, k, theta, eta) ** 2
        total = float(rule.weights @ vals)
    if np.isfinite(total):
        return total, False
    c = abs(1.0 - 1.0 / eta)
    surrogate = 2.0 * theta ** (2 * k) * ((1.0 - eta) ** 2 + 2.0 * eta**2 * (4.0 * c**2) ** k)
    return surrogate, True


def psi_norm(k, theta, eta, order=160):
    return psi_norm_detail(k, theta, eta, order)[0]


def advantage_bound(query: LdlrQuery):
    """Upper bound on the squared degree-D advantage via the truncated
    master sum over hidden-degree compositions.

    Overlap moments of two random unit vectors are bounded by (C m / d)^{m/2}
    with C = 2. Compositions are truncated at total hidden degree
    K = floor(D / 2). Returns (bound, meta); meta records the truncation and
    the omitted poly(D) caveat.
    """
    cap = query.degree // 2
    meta = {
        "total_degree_cap": cap,
        "caveat": "poly(D) factor from the advantage analysis is omitted",
        "surrogate_terms": [],
    }
    if cap < 2 or query.n == 0:
        return 1.0, meta

    coeffs = {}
    for k in range(2, cap + 1):
        if query.mode == "mean":
            coeffs[k] = hermite_moment_mixture(query.eta, query.delta, k) ** 2
        else:
            s = math.sqrt(1.0 + query.signal_k**2 * query.alpha**2)
            theta = query.signal_k * query.alpha / s
            val, surrogate = psi_norm_detail(k, theta, query.eta)
            coeffs[k] = val
            if surrogate:
                meta["surrogate_terms"].append(k)

    total = 1.0
    conv = {0: 1.0}  # conv[m]: sum over compositions of m into ell parts
    for ell in range(1, cap // 2 + 1):
        nxt = {}
        for m_prev, weight in conv.items():
            for k, a_k in coeffs.items():
                m = m_prev + k
                if m <= cap:
                    nxt[m] = nxt.get(m, 0.0) + weight * a_k
        conv = nxt
        if not conv:
            break
        for m, weight in conv.items():
            overlap = (OVERLAP_MOMENT_CONSTANT * m / query.d) ** (m / 2.0)
            total += math.comb(query.n, ell) * weight * overlap
    return total, meta
