"""Reproducible experiment harness: instance generation, estimator sweeps,
rate-fit reports, DP audits, and CSV/JSON emission.

CSV data rows use the fixed column order
    task,n,d,eta,epsilon,beta,trial,seed,error,runtime_ms
and are byte-identical across reruns of the same config (runtime_ms is 0.0
unless measure_runtime is set, since wall-clock times are not reproducible).
The JSON summary embeds the full config, per-configuration error quantiles,
the theoretical rate, and log-log fitted exponents.

Config files are flat key = value text with optional [section] headers
(sections are cosmetic; keys merge into one namespace). Lists are
comma-separated. Recognized keys: task, trials, seed, out, mode, batches,
measure_runtime, and the grid axes n, d, eta, epsilon, beta, sigma2.
Command-line flags override file values.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bayesmean import EpsilonSchedule, StreamState, private_posterior_mean, stream_update
from .bayesreg import (
    CompletionInfeasibleError,
    TrimBudgetError,
    critical_posterior_estimate,
    private_regression,
    weak_prior_pipeline,
)
from .hardness import gen_mixture, mean_distinguisher
from .model import (
    AdversarySpec,
    ContaminatedDataset,
    MeanDataset,
    PriorSpec,
    corrupt,
    posterior_mean_regression,
    sample_mean_instance,
    sample_regression_instance,
)
from .numerics import RngStream
from .privacy import (
    RateFunction,
    build_score_field,
    mean_estimator_handle,
    sensitivity_audit,
)
from .robustmean import FilterBudgetError, robust_mean_filter

CSV_COLUMNS = "task,n,d,eta,epsilon,beta,trial,seed,error,runtime_ms"
TASKS = ("mean", "regression", "stream", "hardness", "audit")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    n: tuple = (500,)
    d: tuple = (2,)
    eta: tuple = (0.0,)
    epsilon: tuple = (2.0,)
    beta: tuple = (0.05,)
    sigma2: tuple = (10.0,)
    trials: int = 10
    seed: int = 0
    mode: str = "eff"
    batches: int = 8
    out: Optional[str] = None
    measure_runtime: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for axis in ("n", "d", "eta", "epsilon", "beta", "sigma2"):
            vals = getattr(self, axis)
            if any(v < 0 for v in vals):
                raise ValueError(f"{axis} values must be nonnegative")

    def grid(self):
        return list(itertools.product(self.n, self.d, self.eta, self.epsilon, self.beta, self.sigma2))

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class RateReport:
    rows: list = field(default_factory=list)  # one dict per configuration
    fit: Optional[dict] = None
    infeasible: int = 0

    def to_dict(self):
        return {"rows": self.rows, "fit": self.fit, "infeasible": self.infeasible}


def _coerce(value):
    value = value.strip()
    if "," in value:
        return tuple(_coerce(v) for v in value.split(",") if v.strip())
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def parse_config_file(path):
    """Flat key = value text with optional [section] headers."""
    values = {}
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            if "=" not in line:
                raise ValueError(f"cannot parse config line: {raw!r}")
            key, val = line.split("=", 1)
            values[key.strip()] = _coerce(val)
    return values


def config_from_values(values):
    tupled = {}
    for key, val in values.items():
        if key in ("n", "d", "eta", "epsilon", "beta", "sigma2") and not isinstance(val, tuple):
            val = (val,)
        tupled[key] = val
    return ExperimentConfig(**tupled)


def _mean_trial(n, d, eta, epsilon, beta, sigma2, mode, rng):
    prior = PriorSpec.isotropic(sigma2, d)
    mu, clean = sample_mean_instance(prior, n, rng.child(1))
    if eta > 0:
        obs = corrupt(clean, AdversarySpec.shift(6.0), eta, rng.child(2))
        data = obs.observed
    else:
        data = clean
    out = private_posterior_mean(data, prior, epsilon, beta, mode=mode, rng=rng.child(3))
    return float(np.linalg.norm(out - mu))


def _regression_trial(n, d, eta, epsilon, beta, sigma2, mode, rng):
    w, clean = sample_regression_instance(sigma2, n, d, rng.child(1))
    if eta > 0:
        obs = corrupt(clean, AdversarySpec.response_replace(), eta, rng.child(2))
    else:
        obs = ContaminatedDataset(observed=clean, mask=np.zeros(n, bool), eta=0.0, clean=clean)
    post = posterior_mean_regression(clean, sigma2)
    if math.isfinite(epsilon):
        reg_mode = "critical" if sigma2 <= 10.0 / n else "weak"
        out = private_regression(obs.observed, sigma2, epsilon, beta, mode=reg_mode, rng=rng.child(3))
    elif sigma2 <= 10.0 / n:
        out = critical_posterior_estimate(obs, sigma2, eta, beta).w_hat
    else:
        out = weak_prior_pipeline(obs, sigma2, eta, beta).w_hat
    return float(np.linalg.norm(out - post))


def _stream_trial(n, d, eta, epsilon, beta, sigma2, mode, rng, batches):
    mu = rng.child(1).generator().standard_normal(d) * math.sqrt(sigma2)
    schedule = EpsilonSchedule(epsilon, batches)
    state = StreamState.initial(d, n)
    worst = 0.0
    for t, eps_i in enumerate(schedule.epsilons):
        batch = MeanDataset(mu + rng.child(10 + t).generator().standard_normal((n, d)))
        state = stream_update(
            state, batch, eps_i, mode=mode, rng=rng.child(100 + t), radius=2.0 * math.sqrt(sigma2) + 2.0, beta=beta
        )
        worst = max(worst, float(np.linalg.norm(state.mu - mu)))
    return worst


def _hardness_trial(n, d, eta, epsilon, beta, sigma2, mode, rng, trial):
    alpha = 0.1
    delta = 21.0 * alpha / eta
    which = "planted" if trial % 2 else "null"
    inst = gen_mixture(eta, delta, n, d, which, rng.child(1))

    def estimator(data):
        obs = ContaminatedDataset(observed=data, mask=np.zeros(data.n, bool), eta=eta)
        try:
            est, _ = robust_mean_filter(obs, eta, beta=beta)
            return est
        except FilterBudgetError:
            return None

    verdict = mean_distinguisher(inst.samples, estimator, alpha)
    return 0.0 if verdict == which else 1.0


def _audit_trial(n, d, eta, epsilon, beta, sigma2, mode, rng):
    rate = RateFunction("mean-eff" if mode != "stat" else "mean-stat", d, n, beta)
    cell = rate.alpha(1.0 / n) / (2.0 * math.sqrt(d))
    estimator = mean_estimator_handle(mode, beta=beta)

    def builder(data):
        return build_score_field(data, estimator, rate, radius=2.0, cell=cell)

    audit = sensitivity_audit(builder, pairs=1, rng=rng, n=n, d=d)
    return float(audit.max_change)


def theoretical_rate(task, n, d, eta, epsilon, beta, sigma2, batches=8):
    """Headline rate used for the observed/theory ratio columns."""
    stat = math.sqrt(d / n)
    priv_stat = (d + math.log(1.0 / beta)) / (epsilon * n) if math.isfinite(epsilon) else 0.0
    priv_comp = (
        (d + math.log(1.0 / beta)) ** 0.75 / (n**0.75 * math.sqrt(epsilon))
        if math.isfinite(epsilon)
        else 0.0
    )
    if task == "mean":
        return stat + priv_comp + priv_stat
    if task == "regression":
        robust = eta * math.sqrt(max(math.log(1.0 / eta), 1.0)) if eta > 0 else 0.0
        return robust + priv_comp + priv_stat + (d + math.log(1.0 / beta)) / n
    if task == "stream":
        return math.sqrt(d / n) + priv_stat * batches
    if task == "hardness":
        return 0.5  # error rate of a coin flip
    if task == "audit":
        return 1.0  # sensitivity target
    raise ValueError(task)


def run(config: ExperimentConfig) -> RateReport:
    """Execute the configured sweep; write CSV rows and a JSON summary when
    config.out is set. Deterministic given the seed."""
    rows = []
    report = RateReport()
    for cfg_index, (n, d, eta, epsilon, beta, sigma2) in enumerate(config.grid()):
        errors = []
        for trial in range(config.trials):
            stream = cfg_index * 1_000_003 + trial
            rng = RngStream(config.seed, stream)
            t0 = time.perf_counter()
            try:
                if config.task == "mean":
                    err = _mean_trial(n, d, eta, epsilon, beta, sigma2, config.mode, rng)
                elif config.task == "regression":
                    err = _regression_trial(n, d, eta, epsilon, beta, sigma2, config.mode, rng)
                elif config.task == "stream":
                    err = _stream_trial(
                        n, d, eta, epsilon, beta, sigma2, config.mode, rng, config.batches
                    )
                elif config.task == "hardness":
                    err = _hardness_trial(n, d, eta, epsilon, beta, sigma2, config.mode, rng, trial)
                else:
                    err = _audit_trial(n, d, eta, epsilon, beta, sigma2, config.mode, rng)
            except (TrimBudgetError, CompletionInfeasibleError, FilterBudgetError):
                err = float("inf")
                report.infeasible += 1
            runtime_ms = (time.perf_counter() - t0) * 1000.0 if config.measure_runtime else 0.0
            errors.append(err)
            rows.append(
                {
                    "task": config.task,
                    "n": n,
                    "d": d,
                    "eta": eta,
                    "epsilon": epsilon,
                    "beta": beta,
                    "trial": trial,
                    "seed": config.seed,
                    "error": err,
                    "runtime_ms": runtime_ms,
                }
            )
        finite = [e for e in errors if math.isfinite(e)]
        theory = theoretical_rate(config.task, n, d, eta, epsilon, beta, sigma2, config.batches)
        quantiles = (
            {q: float(np.quantile(finite, q / 100)) for q in (50, 90, 95)}
            if finite
            else {50: float("inf"), 90: float("inf"), 95: float("inf")}
        )
        report.rows.append(
            {
                "n": n,
                "d": d,
                "eta": eta,
                "epsilon": epsilon,
                "beta": beta,
                "sigma2": sigma2,
                "quantiles": quantiles,
                "theory": theory,
                "ratio": quantiles[50] / theory if theory > 0 else float("inf"),
            }
        )
    if len({row["n"] for row in report.rows}) >= 3:
        report.fit = rate_fit(report.rows)
    if config.out:
        write_outputs(config, rows, report)
    return report


def rate_fit(rows):
    """Ordinary least squares of log median error on log n."""
    pts = [(row["n"], row["quantiles"][50]) for row in rows if math.isfinite(row["quantiles"][50])]
    ns = sorted({p[0] for p in pts})
    if len(ns) < 3:
        raise ValueError("rate fit needs at least 3 distinct n values")
    by_n = {n: np.median([e for m, e in pts if m == n]) for n in ns}
    x = np.log(np.array(ns, dtype=np.float64))
    y = np.log(np.array([by_n[n] for n in ns]))
    x_c = x - x.mean()
    slope = float((x_c @ y) / (x_c @ x_c))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = max(len(ns) - 2, 1)
    stderr = float(np.sqrt((resid @ resid) / dof / (x_c @ x_c)))
    return {"exponent": slope, "stderr": stderr, "intercept": intercept}


def write_outputs(config: ExperimentConfig, rows, report: RateReport):
    csv_path = str(config.out) + ".csv"
    json_path = str(config.out) + ".json"
    with open(csv_path, "w") as f:
        f.write(CSV_COLUMNS + "\n")
        for row in rows:
            f.write(
                f"{row['task']},{row['n']},{row['d']},{row['eta']!r},{row['epsilon']!r},"
                f"{row['beta']!r},{row['trial']},{row['seed']},{row['error']!r},"
                f"{row['runtime_ms']!r}\n"
            )
    with open(json_path, "w") as f:
        json.dump({"config": config.to_dict(), "report": report.to_dict()}, f, indent=2)
        f.write("\n")
