"""Data model: Gaussian-prior mean estimation, Gaussian-design regression,
closed-form posterior/OLS formulas, and the contamination adversaries.

All types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import RngStream, SymMatrix, sym_eig


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, rank, dim):
        super().__init__(f"design has rank {rank} < {dim}; least squares is undefined")
        self.rank = rank
        self.dim = dim


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior on the unknown parameter.

    kind is one of "isotropic" (variance sigma2 * I), "general" (covariance
    Sigma), or "improper" (uniform over R^d, the infinite-variance limit).
    """

    kind: str
    dim: int
    sigma2: Optional[float] = None
    cov: Optional[SymMatrix] = None

    @staticmethod
    def isotropic(sigma2, dim):
        if sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        return PriorSpec(kind="isotropic", dim=dim, sigma2=float(sigma2))

    @staticmethod
    def general(cov):
        cov = cov if isinstance(cov, SymMatrix) else SymMatrix(cov)
        w, _ = sym_eig(cov)
        if w[-1] < -1e-10 * max(1.0, w[0]):
            raise ValueError("prior covariance must be positive semidefinite")
        return PriorSpec(kind="general", dim=cov.dim, cov=cov)

    @staticmethod
    def improper(dim):
        return PriorSpec(kind="improper", dim=dim)


@dataclass(frozen=True)
class MeanDataset:
    """n samples in R^d, one per row."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError(f"expected an n x d sample matrix, got shape {s.shape}")
        object.__setattr__(self, "samples", s)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def mean(self):
        return self.samples.mean(axis=0)


@dataclass(frozen=True)
class RegressionDataset:
    """Design matrix X (d x n, columns are covariates) and responses y."""

    design: np.ndarray
    responses: np.ndarray
    w_star: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.design, dtype=np.float64)
        y = np.asarray(self.responses, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[1] != y.shape[0]:
            raise ValueError(
                f"inconsistent dims: design {x.shape}, responses {y.shape}"
            )
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "responses", y)
        if self.w_star is not None:
            w = np.asarray(self.w_star, dtype=np.float64)
            if w.shape != (x.shape[0],):
                raise ValueError("w_star dimension does not match the design")
            object.__setattr__(self, "w_star", w)

    @property
    def n(self):
        return self.design.shape[1]

    @property
    def dim(self):
        return self.design.shape[0]


@dataclass(frozen=True)
class ContaminatedDataset:
    """Observed data, optional clean twin for evaluation, and the corruption mask."""

    observed: object
    mask: np.ndarray
    eta: float
    clean: object = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        n = self.observed.n
        if mask.shape != (n,):
            raise ValueError("mask length must equal the sample count")
        if not 0 <= self.eta < 0.5:
            raise ValueError("eta must lie in [0, 1/2)")
        if mask.sum() > int(np.ceil(self.eta * n)):
            raise ValueError("mask marks more rows than the corruption budget allows")
        object.__setattr__(self, "mask", mask)
        if self.clean is not None:
            keep = ~mask
            if isinstance(self.observed, MeanDataset):
                same = np.array_equal(self.observed.samples[keep], self.clean.samples[keep])
            else:
                same = np.array_equal(
                    self.observed.design[:, keep], self.clean.design[:, keep]
                ) and np.array_equal(self.observed.responses[keep], self.clean.responses[keep])
            if not same:
                raise ValueError("observed data differs from clean data off the mask")


@dataclass(frozen=True)
class ShrinkageMatrix:
    """The posterior map: posterior mean = lambda_ @ empirical mean."""

    lambda_: SymMatrix
    n: int

    def apply(self, vec):
        return self.lambda_.entries @ np.asarray(vec, dtype=np.float64)


def shrinkage(prior: PriorSpec, n: int) -> ShrinkageMatrix:
    """Posterior map with eigenvalues lam/(lam + 1/n) per prior eigenvalue lam.

    Kernel directions of the prior map to eigenvalue 0; the improper prior
    maps to the identity.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = prior.dim
    if prior.kind == "improper":
        lam = np.eye(d)
    elif prior.kind == "isotropic":
        lam = (prior.sigma2 / (prior.sigma2 + 1.0 / n)) * np.eye(d)
    else:
        w, v = sym_eig(prior.cov)
        w = np.clip(w, 0.0, None)
        shrunk = w / (w + 1.0 / n)
        lam = v.T @ (shrunk[:, None] * v)
    return ShrinkageMatrix(lambda_=SymMatrix(lam), n=n)


def posterior_mean_mean_model(dataset: MeanDataset, prior: PriorSpec):
    """Posterior mean of the unknown mean: shrinkage applied to x-bar."""
    return shrinkage(prior, dataset.n).apply(dataset.mean())


def posterior_mean_regression(data: RegressionDataset, sigma2: float):
    """Posterior mean of the regressor: (I/sigma2 + X X^T)^{-1} X y."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    x, y = data.design, data.responses
    a = x @ x.T + np.eye(data.dim) / sigma2
    return np.linalg.solve(a, x @ y)


def ols(data: RegressionDataset):
    """Ordinary least squares (X X^T)^{-1} X y."""
    x, y = data.design, data.responses
    gram = x @ x.T
    w, _ = sym_eig(gram)
    rank = int(np.sum(w > 1e-10 * max(w[0], 1.0)))
    if rank < data.dim:
        raise RankDeficientError(rank, data.dim)
    return np.linalg.solve(gram, x @ y)


def sample_mean_instance(prior: PriorSpec, n: int, rng: RngStream):
    """Draw mu from the prior, then n i.i.d. N(mu, I) samples."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if prior.kind == "improper":
        raise ValueError("cannot sample the parameter from an improper prior")
    gen = rng.generator()
    d = prior.dim
    if prior.kind == "isotropic":
        mu = np.sqrt(prior.sigma2) * gen.standard_normal(d)
    else:
        w, v = sym_eig(prior.cov)
        root = v.T @ (np.sqrt(np.clip(w, 0.0, None))[:, None] * v)
        mu = root @ gen.standard_normal(d)
    samples = mu + gen.standard_normal((n, d))
    return mu, MeanDataset(samples)


def sample_regression_instance(sigma2: float, n: int, d: int, rng: RngStream):
    """Draw w ~ N(0, sigma2 I), X with i.i.d. N(0, I_d) columns, y = X^T w + noise."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    gen = rng.generator()
    w = np.sqrt(sigma2) * gen.standard_normal(d)
    x = gen.standard_normal((d, n))
    y = x.T @ w + gen.standard_normal(n)
    return w, RegressionDataset(design=x, responses=y, w_star=w)


@dataclass(frozen=True)
class AdversarySpec:
    """One of the four contamination adversaries.

    shift: replaced mean-model rows become clean-mean + delta * v; for
        regression data the replaced responses become clean-response-mean
        + delta.
    mixture_plant: replaced mean-model rows are drawn from
        N((1 - eta) * delta * v, I), the planted outlier component.
    response_replace: regression responses on replaced rows are resampled
        from the replacement density with null marginal scale s (covariates
        untouched).
    gross: replaced rows (and responses) are set to a fixed far point.
    """

    kind: str
    delta: float = 0.0
    direction: Optional[np.ndarray] = None
    scale_s: Optional[float] = None
    point: Optional[np.ndarray] = None
    point_value: float = 1e3

    @staticmethod
    def shift(delta, direction=None):
        d = None if direction is None else np.asarray(direction, dtype=np.float64)
        return AdversarySpec(kind="shift", delta=float(delta), direction=d)

    @staticmethod
    def mixture_plant(delta, direction=None):
        d = None if direction is None else np.asarray(direction, dtype=np.float64)
        return AdversarySpec(kind="mixture-plant", delta=float(delta), direction=d)

    @staticmethod
    def response_replace(scale_s=None):
        return AdversarySpec(kind="response-replace", scale_s=scale_s)

    @staticmethod
    def gross(point=None, value=1e3):
        p = None if point is None else np.asarray(point, dtype=np.float64)
        return AdversarySpec(kind="gross", point=p, point_value=float(value))


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    return v / norm


def corrupt(clean, adversary: AdversarySpec, eta: float, rng: RngStream):
    """Replace exactly floor(eta * n) rows per the adversary; mask records them.

    Unmasked rows are copied bit-exactly from the clean data.
    """
    if not 0 <= eta < 0.5:
        raise ValueError("eta must lie in [0, 1/2)")
    n = clean.n
    k = int(np.floor(eta * n))
    gen = rng.generator()
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        return ContaminatedDataset(observed=clean, mask=mask, eta=eta, clean=clean)
    idx = np.sort(gen.choice(n, size=k, replace=False))
    mask[idx] = True

    if isinstance(clean, MeanDataset):
        samples = clean.samples.copy()
        d = clean.dim
        if adversary.kind == "shift":
            v = _unit(adversary.direction) if adversary.direction is not None else _unit(gen.standard_normal(d))
            samples[idx] = clean.mean() + adversary.delta * v
        elif adversary.kind == "mixture-plant":
            v = _unit(adversary.direction) if adversary.direction is not None else _unit(gen.standard_normal(d))
            center = (1.0 - eta) * adversary.delta * v
            samples[idx] = center + gen.standard_normal((k, d))
        elif adversary.kind == "gross":
            point = adversary.point if adversary.point is not None else np.full(d, adversary.point_value)
            samples[idx] = point
        else:
            raise ValueError(f"adversary {adversary.kind!r} is not defined for mean data")
        observed = MeanDataset(samples)
    elif isinstance(clean, RegressionDataset):
        x = clean.design.copy()
        y = clean.responses.copy()
        if adversary.kind == "shift":
            y[idx] = clean.responses.mean() + adversary.delta
        elif adversary.kind == "response-replace":
            from .hardness import r0_sample

            s = adversary.scale_s if adversary.scale_s is not None else 1.0 / (1.0 - eta / 2.0)
            y[idx] = np.array([r0_sample(eta, s, rng.child(1000 + j)) for j in range(k)])
        elif adversary.kind == "gross":
            val = adversary.point_value
            x[:, idx] = val
            y[idx] = val
        else:
            raise ValueError(f"adversary {adversary.kind!r} is not defined for regression data")
        observed = RegressionDataset(design=x, responses=y, w_star=clean.w_star)
    else:
        raise TypeError(f"unsupported dataset type {type(clean).__name__}")

    return ContaminatedDataset(observed=observed, mask=mask, eta=eta, clean=clean)


def save_mean_csv(path, dataset: MeanDataset, mask=None):
    """`dim,n` header line, then one sample per line; optional trailing 0/1 mask column."""
    with open(path, "w") as f:
        f.write(f"{dataset.dim},{dataset.n}\n")
        for i in range(dataset.n):
            row = ",".join(repr(float(v)) for v in dataset.samples[i])
            if mask is not None:
                row += f",{int(bool(mask[i]))}"
            f.write(row + "\n")


def load_mean_csv(path):
    with open(path) as f:
        d, n = (int(t) for t in f.readline().split(","))
        rows, mask = [], []
        for _ in range(n):
            parts = f.readline().split(",")
            rows.append([float(t) for t in parts[:d]])
            if len(parts) > d:
                mask.append(bool(int(parts[d])))
    samples = np.asarray(rows)
    return MeanDataset(samples), (np.asarray(mask) if mask else None)


def save_regression_csv(path, data: RegressionDataset, mask=None):
    """`d,n` header line, then per line: the d covariates, the response, optional mask."""
    with open(path, "w") as f:
        f.write(f"{data.dim},{data.n}\n")
        for i in range(data.n):
            row = ",".join(repr(float(v)) for v in data.design[:, i])
            row += f",{float(data.responses[i])!r}"
            if mask is not None:
                row += f",{int(bool(mask[i]))}"
            f.write(row + "\n")


def load_regression_csv(path):
    with open(path) as f:
        d, n = (int(t) for t in f.readline().split(","))
        xs, ys, mask = [], [], []
        for _ in range(n):
            parts = f.readline().split(",")
            xs.append([float(t) for t in parts[:d]])
            ys.append(float(parts[d]))
            if len(parts) > d + 1:
                mask.append(bool(int(parts[d + 1])))
    x = np.asarray(xs).T
    data = RegressionDataset(design=x, responses=np.asarray(ys))
    return data, (np.asarray(mask) if mask else None)
