"""Robustness-to-privacy layer: an integer robust-distance score over a
bounded parameter ball, a grid exponential mechanism, and empirical
differential-privacy audits.

The score of a candidate point is the smallest corruption budget T at which
the supplied robust estimator, run with budget T/n, lands within alpha(T/n)
of the candidate. Distances are taken as running minima along the estimate
trajectory, which makes the score monotone in T by construction. Scores
saturate at n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import ContaminatedDataset, MeanDataset
from .numerics import RngStream
from .robustmean import (
    C_EFF,
    C_STAT,
    FilterBudgetError,
    robust_mean_filter,
    robust_mean_statistical,
)

C_REG = 6.0
DEFAULT_MAX_CELLS = 400_000


class GridBudgetError(RuntimeError):
    def __init__(self, required, budget):
        super().__init__(
            f"score grid would need {required} cells, over the budget of {budget}; "
            "reduce the radius or coarsen the pitch"
        )
        self.required = required
        self.budget = budget


@dataclass(frozen=True)
class RateFunction:
    """Robust-estimation error rate alpha(eta), nondecreasing on (0, 1/3]."""

    kind: str  # mean-stat | mean-eff | reg-critical | reg-weak
    d: int
    n: int
    beta: float
    constant: Optional[float] = None

    def _c(self):
        if self.constant is not None:
            return self.constant
        return {"mean-stat": C_STAT, "mean-eff": C_EFF, "reg-critical": C_REG, "reg-weak": C_REG}[
            self.kind
        ]

    def alpha(self, eta):
        eta = min(max(float(eta), 0.0), 1.0 / 3.0)
        if eta == 0.0:
            return 0.0
        c = self._c()
        base = math.sqrt((self.d + math.log(1.0 / self.beta)) / self.n)
        loge = math.log(1.0 / eta)
        if self.kind == "mean-stat":
            return c * (eta * math.sqrt(loge) + math.sqrt(eta) * base)
        if self.kind == "mean-eff":
            return c * (eta * math.sqrt(loge) + math.sqrt(eta * base))
        if self.kind in ("reg-critical", "reg-weak"):
            return c * math.sqrt(eta**2 * loge**2 + eta * loge * base)
        raise ValueError(f"unknown rate kind {self.kind!r}")


@dataclass(frozen=True)
class ScoreField:
    """Integer robust-distance scores tabulated over a grid in a ball."""

    center: np.ndarray
    radius: float
    cell: float
    indices: np.ndarray  # (m, d) integer lattice points, lexicographic order
    scores: np.ndarray  # (m,) ints in [0, n]
    n: int

    @property
    def num_cells(self):
        return self.indices.shape[0]

    def cell_centers(self):
        return self.center + self.cell * self.indices

    def save(self, path):
        with open(path, "w") as f:
            for idx, s in zip(self.indices, self.scores):
                f.write(",".join(str(int(v)) for v in idx) + f",{int(s)}\n")

    @staticmethod
    def load(path, center, radius, cell, n):
        idx, scores = [], []
        with open(path) as f:
            for line in f:
                parts = line.strip().split(",")
                idx.append([int(v) for v in parts[:-1]])
                scores.append(int(parts[-1]))
        return ScoreField(
            center=np.asarray(center, dtype=np.float64),
            radius=radius,
            cell=cell,
            indices=np.asarray(idx, dtype=np.int64),
            scores=np.asarray(scores, dtype=np.int64),
            n=n,
        )


def ball_lattice(dim, radius, cell, max_cells=DEFAULT_MAX_CELLS):
    """Integer lattice points z with ||cell * z|| <= radius, lexicographic."""
    k = int(math.floor(radius / cell))
    per_axis = 2 * k + 1
    if per_axis**dim > 8 * max_cells:
        raise GridBudgetError(per_axis**dim, max_cells)
    axes = [np.arange(-k, k + 1)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    keep = np.linalg.norm(pts * cell, axis=1) <= radius + 1e-12
    pts = pts[keep]
    if pts.shape[0] > max_cells:
        raise GridBudgetError(pts.shape[0], max_cells)
    return pts


class EstimateTrajectory:
    """Robust estimates est(T) for integer corruption budgets T = 0..t_cap.

    estimator(data, eta) returns a vector or None (infeasible); failed
    budgets contribute nothing to the running-minimum distance. Estimators
    may provide `trajectory_rows(data, t_cap)` to batch the computation.
    """

    def __init__(self, data: MeanDataset, estimator, t_cap):
        self.t_cap = t_cap
        n = data.n
        if hasattr(estimator, "trajectory_rows"):
            self.estimates = np.asarray(estimator.trajectory_rows(data, t_cap))
        else:
            rows = []
            for t in range(t_cap + 1):
                est = estimator(data, t / n)
                rows.append(np.full(data.dim, np.inf) if est is None else np.asarray(est))
            self.estimates = np.asarray(rows)

    def constant_estimate(self):
        """The single estimate when it does not vary with T, else None."""
        first = self.estimates[0]
        if np.isfinite(first).all() and np.all(self.estimates == first):
            return first
        return None

    def prefix_min_distances(self, points):
        """Running minimum over T of ||est(T) - point||, shape (t_cap+1, m)."""
        pts = np.atleast_2d(points)
        diffs = self.estimates[:, None, :] - pts[None, :, :]
        with np.errstate(invalid="ignore"):
            dists = np.linalg.norm(diffs, axis=2)
        dists[~np.isfinite(dists)] = np.inf
        return np.minimum.accumulate(dists, axis=0)


def _alpha_table(rate: RateFunction, n):
    return np.array([rate.alpha(t / n) for t in range(n + 1)])


def _scores_from_distances(dmin, alphas, n, t_cap):
    """First integer T with running-min distance <= alpha(T/n); n if none."""
    m = dmin.shape[1]
    hits = dmin <= alphas[: t_cap + 1, None]
    any_early = hits.any(axis=0)
    first = np.where(any_early, hits.argmax(axis=0), n)
    late = np.full(m, n, dtype=np.int64)
    tail = alphas[t_cap + 1 :]
    if tail.size:
        pos = np.searchsorted(tail, dmin[t_cap], side="left")
        reachable = pos < tail.size
        late[reachable] = t_cap + 1 + pos[reachable]
    return np.minimum(first, late).astype(np.int64)


def _scores_for_constant(estimate, points, alphas, n):
    """Scores when the estimate trajectory is a single point: the first T
    with ||estimate - point|| <= alpha(T/n)."""
    dists = np.linalg.norm(np.atleast_2d(points) - estimate, axis=1)
    pos = np.searchsorted(alphas, dists, side="left")
    return np.minimum(pos, n).astype(np.int64)


def default_t_cap(n, mode):
    if mode == "stat":
        return max(1, int(math.ceil(n / 3.0)) - 1)
    return max(1, int(math.ceil(n / 6.0)) - 1)


class FilterMeanHandle:
    """Score-side handle for the filter estimator."""

    def __init__(self, beta=0.05):
        self.beta = beta

    def __call__(self, data: MeanDataset, eta):
        obs = ContaminatedDataset(observed=data, mask=np.zeros(data.n, dtype=bool), eta=eta)
        try:
            est, _ = robust_mean_filter(obs, eta, beta=self.beta)
            return est
        except FilterBudgetError:
            return None


class StatMeanHandle:
    """Score-side handle for the search estimator, with a batched trajectory:
    one greedy per-size deviation curve decides feasibility of the untouched
    dataset at every budget at once."""

    def __init__(self, beta=0.05, budget=200_000):
        self.beta = beta
        self.budget = budget

    def __call__(self, data: MeanDataset, eta):
        if eta == 0.0:
            return data.mean()
        obs = ContaminatedDataset(observed=data, mask=np.zeros(data.n, dtype=bool), eta=eta)
        return robust_mean_statistical(obs, eta, beta=self.beta, budget=self.budget)

    def trajectory_rows(self, data: MeanDataset, t_cap):
        from .robustmean import feasibility_threshold, worst_deviation_by_size

        n, d = data.n, data.dim
        k_max = min(n, 2 * t_cap)
        curve = worst_deviation_by_size(data, k_max=k_max)
        ok = [curve[s - 1] <= feasibility_threshold(s, n, d, self.beta) for s in range(1, k_max + 1)]
        first_bad = next((s for s, good in enumerate(ok, start=1) if not good), None)
        xbar = data.mean()
        rows = [xbar]
        for t in range(1, t_cap + 1):
            s = min(int(np.ceil(2 * (t / n) * n)), n)
            if first_bad is None or s < first_bad:
                rows.append(xbar)
            else:
                est = self(data, t / n)
                rows.append(np.full(d, np.inf) if est is None else np.asarray(est))
        return np.asarray(rows)


def mean_estimator_handle(mode, beta=0.05, budget=200_000) -> Callable:
    """Estimator handle (data, eta) -> estimate or None for the score."""
    if mode == "stat":
        return StatMeanHandle(beta=beta, budget=budget)
    return FilterMeanHandle(beta=beta)


def robust_distance_score(theta, obs, estimator, rate: RateFunction, t_grid=None):
    """Smallest budget T at which theta is within alpha(T/n) of the running
    estimate trajectory; n on saturation."""
    data = obs.observed if isinstance(obs, ContaminatedDataset) else obs
    n = data.n
    t_cap = max(t_grid) if t_grid is not None else default_t_cap(n, "eff")
    traj = EstimateTrajectory(data, estimator, t_cap)
    alphas = _alpha_table(rate, n)
    const = traj.constant_estimate()
    if const is not None:
        return int(_scores_for_constant(const, np.asarray(theta)[None, :], alphas, n)[0])
    dmin = traj.prefix_min_distances(np.asarray(theta)[None, :])
    return int(_scores_from_distances(dmin, alphas, n, t_cap)[0])


def build_score_field(
    data: MeanDataset,
    estimator,
    rate: RateFunction,
    radius,
    cell,
    center=None,
    t_cap=None,
    max_cells=DEFAULT_MAX_CELLS,
) -> ScoreField:
    """Tabulate the robust-distance score over the grid covering the ball."""
    d = data.dim
    center = np.zeros(d) if center is None else np.asarray(center, dtype=np.float64)
    t_cap = default_t_cap(data.n, "eff") if t_cap is None else t_cap
    indices = ball_lattice(d, radius, cell, max_cells)
    traj = EstimateTrajectory(data, estimator, t_cap)
    alphas = _alpha_table(rate, data.n)
    const = traj.constant_estimate()
    if const is not None:
        scores = _scores_for_constant(const, center + cell * indices, alphas, data.n)
    else:
        scores = np.empty(indices.shape[0], dtype=np.int64)
        chunk = max(1, 20_000_000 // (t_cap + 1))  # bound the distance-matrix memory
        for lo in range(0, indices.shape[0], chunk):
            centers = center + cell * indices[lo : lo + chunk]
            dmin = traj.prefix_min_distances(centers)
            scores[lo : lo + chunk] = _scores_from_distances(dmin, alphas, data.n, t_cap)
    return ScoreField(
        center=center, radius=radius, cell=cell, indices=indices, scores=scores, n=data.n
    )


def mechanism_probabilities(field: ScoreField, epsilon):
    s = field.scores.astype(np.float64)
    w = np.exp(-0.5 * epsilon * (s - s.min()))
    return w / w.sum()


def exp_mechanism_grid(field: ScoreField, epsilon, rng: RngStream):
    """Sample a grid cell with probability proportional to exp(-eps*score/2)
    by cumulative-sum inversion over the lexicographic cell order."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if field.num_cells == 0:
        raise ValueError("score field is empty")
    p = mechanism_probabilities(field, epsilon)
    u = rng.generator().random()
    j = int(np.searchsorted(np.cumsum(p), u, side="right"))
    j = min(j, field.num_cells - 1)
    return field.center + field.cell * field.indices[j]


def private_empirical_mean(
    obs: MeanDataset,
    epsilon,
    beta,
    radius,
    mode="eff",
    rng: RngStream = RngStream(0),
    max_cells=DEFAULT_MAX_CELLS,
):
    """Grid exponential mechanism over the robust-distance score.

    Promise: the empirical mean lies within `radius` of the origin. Grid
    pitch is alpha(1/n) / (2 sqrt(d)); the ball has radius 2 * `radius`.
    """
    data = obs.observed if isinstance(obs, ContaminatedDataset) else obs
    if data.dim > 6:
        raise ValueError("the score grid supports d <= 6")
    kind = "mean-stat" if mode == "stat" else "mean-eff"
    rate = RateFunction(kind=kind, d=data.dim, n=data.n, beta=beta)
    cell = rate.alpha(1.0 / data.n) / (2.0 * math.sqrt(data.dim))
    estimator = mean_estimator_handle(mode, beta=beta)
    t_cap = default_t_cap(data.n, mode)
    field = build_score_field(
        data, estimator, rate, radius=2.0 * radius, cell=cell, t_cap=t_cap, max_cells=max_cells
    )
    return exp_mechanism_grid(field, epsilon, rng)


@dataclass(frozen=True)
class SensitivityAudit:
    max_change: int
    per_pair: np.ndarray


def sensitivity_audit(score_builder, pairs, rng: RngStream, n=500, d=2, swaps=1):
    """Max per-cell score change across random adjacent dataset pairs.

    Pairs are Gaussian datasets differing in `swaps` resampled rows.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    changes = np.zeros(pairs, dtype=np.int64)
    for i in range(pairs):
        gen = rng.child(i).generator()
        x = gen.standard_normal((n, d))
        field_a = score_builder(MeanDataset(x))
        y = x.copy()
        rows = gen.choice(n, size=swaps, replace=False)
        y[rows] = gen.standard_normal((swaps, d))
        field_b = score_builder(MeanDataset(y))
        changes[i] = int(np.abs(field_a.scores - field_b.scores).max())
    return SensitivityAudit(max_change=int(changes.max()), per_pair=changes)


@dataclass(frozen=True)
class DpRatioReport:
    passed: bool
    worst_excess_z: float
    cells_checked: int
    bound: float


def dp_ratio_audit(
    field_a: ScoreField,
    field_b: ScoreField,
    epsilon,
    draws,
    rng: RngStream,
    delta_sensitivity=1,
    min_count=50,
):
    """Empirical per-cell probability-ratio check between adjacent fields.

    Draws multinomial samples from both mechanisms and verifies
    |log(p_a / p_b)| <= epsilon * delta within 3 binomial standard errors
    on every cell with enough mass.
    """
    if not np.array_equal(field_a.indices, field_b.indices):
        raise ValueError("fields must share a lattice")
    gen = rng.generator()
    pa = mechanism_probabilities(field_a, epsilon)
    pb = mechanism_probabilities(field_b, epsilon)
    ca = gen.multinomial(draws, pa).astype(np.float64)
    cb = gen.multinomial(draws, pb).astype(np.float64)
    mask = (ca >= min_count) & (cb >= min_count)
    bound = epsilon * delta_sensitivity
    if not mask.any():
        return DpRatioReport(passed=True, worst_excess_z=0.0, cells_checked=0, bound=bound)
    log_ratio = np.log(ca[mask] / cb[mask])
    se = np.sqrt(1.0 / ca[mask] + 1.0 / cb[mask])
    excess = (np.abs(log_ratio) - bound) / se
    worst = float(excess.max())
    return DpRatioReport(
        passed=bool(worst <= 3.0),
        worst_excess_z=worst,
        cells_checked=int(mask.sum()),
        bound=bound,
    )
