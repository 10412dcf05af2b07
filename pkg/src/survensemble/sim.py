"""Weibull simulation designs with calibrated exponential censoring and a replicate runner."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ._random import default_threads, derive_seed, substream
from .bart import BartConfig, BartPriors, fit_bart_survival
from .cox import fit_cox
from .curves import CurveBatch
from .data import ConvergenceError, SurvDataset, SurvivalDataError
from .rsf import RsfConfig, fit_forest

__all__ = [
    "SimDesign",
    "SimResult",
    "PROFILES",
    "gen_covariates",
    "weibull_params",
    "sample_event_time",
    "true_survival",
    "calibrate_censoring",
    "calibrate_censoring_times",
    "simulate_replicate",
    "run_study",
]

log = logging.getLogger(__name__)

N_COVARIATES = 9
PERCENTILES = (25, 50, 75)
CALIBRATION_DRAWS = 100_000
DEFAULT_MODELS = ("cox", "rsf_logrank", "rsf_score", "bart")

PROFILES = {
    "fast": {"rsf_trees": 250, "bart_burn": 1000, "bart_keep": 2000},
    "full": {"rsf_trees": 1000, "bart_burn": 5000, "bart_keep": 10000},
}


@dataclass(frozen=True)
class SimDesign:
    kind: str = "PH"
    n: int = 300
    censor_target: float = 0.20
    reps: int = 100
    split: float = 2 / 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.upper())
        if self.kind not in ("PH", "NPH"):
            raise SurvivalDataError(f"unknown design kind {self.kind!r} (expected PH or NPH)")
        if not 0 < self.censor_target < 1:
            raise SurvivalDataError("censor_target must lie in (0, 1)")
        if self.n < 10:
            raise SurvivalDataError("n must be >= 10")
        if self.reps < 1:
            raise SurvivalDataError("reps must be >= 1")
        if not 0 < self.split < 1:
            raise SurvivalDataError("split must lie in (0, 1)")

    @property
    def p(self) -> int:
        return N_COVARIATES


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n x 9`` matrix of independent Bernoulli(0.5) covariates."""
    if n < 1:
        raise SurvivalDataError("n must be >= 1")
    return rng.integers(0, 2, size=(n, N_COVARIATES)).astype(float)


def weibull_params(x, kind: str):
    """Weibull shape and scale for covariate rows ``x`` under design ``kind``."""
    x = np.asarray(x, dtype=float)
    s6 = x[..., :6].sum(axis=-1)
    x7 = x[..., 6]
    kind = kind.upper()
    if kind == "PH":
        return np.full_like(x7, 2.0), np.exp(3.0 + 0.1 * s6 + x7)
    if kind == "NPH":
        return 0.7 + 1.3 * x7, 20.0 + 5.0 * (s6 + 10.0 * x7)
    raise SurvivalDataError(f"unknown design kind {kind!r}")


def sample_event_time(alpha, lam, rng: np.random.Generator) -> np.ndarray:
    """Inverse-transform Weibull draws, ``S(t) = exp(-(t / lam) ** alpha)``."""
    alpha, lam = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(lam, float))
    u = rng.random(alpha.shape)
    return lam * (-np.log(u)) ** (1.0 / alpha)


def true_survival(x, t, kind: str):
    """Exact design survival; ``x`` rows broadcast against times ``t``."""
    alpha, lam = weibull_params(x, kind)
    t = np.asarray(t, dtype=float)
    if np.ndim(alpha) and np.ndim(t):
        alpha, lam = alpha[:, None], lam[:, None]
    return np.exp(-((t / lam) ** alpha))


def calibrate_censoring_times(T, target: float, tol: float = 1e-6) -> float:
    """Exponential censoring rate r with mean P(C < T) = target over the draws ``T``.

    Uses the conditional probability ``1 - exp(-r T)`` instead of drawing C,
    which removes the censoring-draw noise from the bisection.
    """
    T = np.asarray(T, dtype=float)

    def frac(r):
        return float(np.mean(-np.expm1(-r * T)))

    lo, hi = 0.0, 1.0 / float(np.median(T))
    for _ in range(200):
        if frac(hi) >= target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise SurvivalDataError("censoring bisection failed to bracket the target")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if frac(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_censoring(design: SimDesign, n_draws: int = CALIBRATION_DRAWS) -> float:
    """Censoring rate inducing ``design.censor_target`` censoring, from one large draw of T."""
    rng = substream(design.seed, "calibrate", design.kind)
    alpha, lam = weibull_params(gen_covariates(n_draws, rng), design.kind)
    return calibrate_censoring_times(sample_event_time(alpha, lam, rng), design.censor_target)


@dataclass(frozen=True, eq=False)
class Replicate:
    data: SurvDataset
    true_time: np.ndarray
    train: np.ndarray
    test: np.ndarray
    times: np.ndarray

    @property
    def censoring(self) -> float:
        return float(1.0 - self.data.event.mean())


def simulate_replicate(design: SimDesign, rate: float, rep: int) -> Replicate:
    """One generated dataset with its 2:1 split and percentile evaluation times."""
    rng = substream(design.seed, "rep", rep)
    X = gen_covariates(design.n, rng)
    T = sample_event_time(*weibull_params(X, design.kind), rng)
    C = rng.exponential(1.0 / rate, design.n)
    data = SurvDataset(np.minimum(T, C), (T <= C).astype(int), X)
    perm = rng.permutation(design.n)
    n_train = int(round(design.split * design.n))
    times = np.percentile(T, PERCENTILES)
    return Replicate(data, T, np.sort(perm[:n_train]), np.sort(perm[n_train:]), times)


# model adapters: (train data, test covariates, times, seed, profile) -> (n_test, len(times))
Predictor = Callable[[SurvDataset, np.ndarray, np.ndarray, int, dict], np.ndarray]


def _cox(train, X, times, seed, prof):
    model = fit_cox(train)
    h0 = np.asarray(model.baseline_chf(times), dtype=float)
    return np.exp(-np.outer(np.exp(model.linear_predictor(X)), h0))


def _rsf(rule):
    def predict(train, X, times, seed, prof):
        forest = fit_forest(train, RsfConfig(n_trees=prof["rsf_trees"], split_rule=rule, seed=seed), n_jobs=1)
        batch = CurveBatch(forest.grid, forest.survival_matrix(X))
        return np.column_stack([batch.at(t) for t in times])

    return predict


def _bart(train, X, times, seed, prof):
    cfg = BartConfig(priors=BartPriors(), n_burn=prof["bart_burn"], n_keep=prof["bart_keep"], seed=seed)
    return fit_bart_survival(train, cfg).survival_mean(X, times)


BUILTIN_MODELS: dict[str, Predictor] = {
    "cox": _cox,
    "rsf_logrank": _rsf("log_rank"),
    "rsf_score": _rsf("log_rank_score"),
    "bart": _bart,
}


@dataclass
class SimResult:
    design: SimDesign
    profile: str
    censoring_rate: float
    records: list[dict] = field(default_factory=list)
    censoring: list[float] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def cells(self, model: str, percentile: int, key: str = "rmse") -> np.ndarray:
        return np.array([r[key] for r in self.records if r["model"] == model and r["percentile"] == percentile])

    def median(self, model: str, percentile: int, key: str = "rmse") -> float:
        v = self.cells(model, percentile, key)
        return float(np.median(v)) if v.size else float("nan")

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(r["model"] for r in self.records))

    def summary(self) -> dict:
        out = {}
        for m in self.models:
            out[m] = {}
            for pct in PERCENTILES:
                cell = {}
                for key in ("bias", "rmse"):
                    v = self.cells(m, pct, key)
                    q1, med, q3 = np.percentile(v, [25, 50, 75])
                    cell[key] = {"median": float(med), "q1": float(q1), "q3": float(q3), "n": int(v.size)}
                out[m][str(pct)] = cell
        return {
            "design": asdict(self.design),
            "profile": self.profile,
            "censoring_rate": self.censoring_rate,
            "achieved_censoring": self.censoring,
            "failures": self.failures,
            "models": out,
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "model", "percentile", "bias", "rmse"])
            for r in self.records:
                w.writerow([r["replicate"], r["model"], r["percentile"], repr(r["bias"]), repr(r["rmse"])])

    def write_json(self, path: str | Path, extra: Mapping | None = None) -> None:
        doc = self.summary()
        doc.update(extra or {})
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def _run_replicate(design, rate, rep, models, profile):
    sim = simulate_replicate(design, rate, rep)
    train = sim.data.subset(sim.train)
    X_test = np.asarray(sim.data.X)[sim.test]
    truth = true_survival(X_test, sim.times, design.kind)
    records, failures = [], []
    for name, predict in models.items():
        seed = derive_seed(design.seed, "fit", rep, name)
        try:
            pred = np.asarray(predict(train, X_test, sim.times, seed, profile), dtype=float)
            if pred.shape != truth.shape or not np.all(np.isfinite(pred)):
                raise SurvivalDataError(f"prediction of shape {pred.shape} for truth {truth.shape}")
        except (ConvergenceError, SurvivalDataError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("replicate %d, model %s failed: %s", rep, name, exc)
            failures.append({"replicate": rep, "model": name, "error": str(exc)})
            continue
        err = pred - truth
        for k, pct in enumerate(PERCENTILES):
            records.append({
                "replicate": rep, "model": name, "percentile": pct,
                "bias": float(err[:, k].mean()), "rmse": float(np.sqrt(np.mean(err[:, k] ** 2))),
            })
    return records, failures, sim.censoring


def run_study(
    design: SimDesign,
    models: Sequence[str] | Mapping[str, Predictor] = DEFAULT_MODELS,
    profile: str = "fast",
    rate: float | None = None,
    n_jobs: int | None = None,
) -> SimResult:
    """Fit every model on every replicate and score it against the true survival.

    ``models`` names built-in models or maps names to custom predictors. A
    failed fit is recorded in ``failures`` and skipped. Results do not depend
    on ``n_jobs``.
    """
    if profile not in PROFILES:
        raise SurvivalDataError(f"unknown profile {profile!r}")
    if not isinstance(models, Mapping):
        unknown = [m for m in models if m not in BUILTIN_MODELS]
        if unknown:
            raise SurvivalDataError(f"unknown model(s) {unknown}; choose from {sorted(BUILTIN_MODELS)}")
        models = {m: BUILTIN_MODELS[m] for m in models}
    rate = calibrate_censoring(design) if rate is None else rate
    prof = PROFILES[profile]
    n_jobs = default_threads() if n_jobs is None else n_jobs

    def one(rep):
        return _run_replicate(design, rate, rep, models, prof)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            outs = list(pool.map(one, range(design.reps)))
    else:
        outs = [one(rep) for rep in range(design.reps)]
    result = SimResult(design, profile, rate)
    for records, failures, cens in outs:
        result.records.extend(records)
        result.failures.extend(failures)
        result.censoring.append(cens)
    return result
