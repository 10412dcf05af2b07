"""Cox proportional hazards regression with Breslow ties and baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .curves import CumHazardCurve, SurvivalCurve, TimeGrid, risk_table
from .data import (
    ConvergenceError,
    Covariate,
    SurvDataset,
    SurvivalDataError,
    check_covariates,
    encode,
)

__all__ = [
    "CoxModel",
    "StepwiseResult",
    "fit_cox",
    "predict_cox_survival",
    "backward_stepwise_aic",
    "log_partial_likelihood",
]

MAX_ITER = 50
GRAD_TOL = 1e-8
STEP_TOL = 1e-4
INFO_COLLAPSE = 1e-8
MAX_HALVINGS = 10
DIVERGENCE_BOUND = 50.0
FORMAT_VERSION = 1


def _risk_sums(time, event, Z, beta, need_hess=True):
    """Breslow log partial likelihood with its gradient and Hessian."""
    eta = Z @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    order = np.argsort(time, kind="stable")
    ts = time[order]
    # reverse cumulative sums give sums over {l : z_l >= t}
    S0 = np.cumsum(w[order][::-1])[::-1]
    S1 = np.cumsum((w[:, None] * Z)[order][::-1], axis=0)[::-1]
    ev_times, d, _, _ = risk_table(time, event)
    keep = d > 0
    ev_times, d = ev_times[keep], d[keep]
    first = np.searchsorted(ts, ev_times, side="left")
    s0 = S0[first]
    s1 = S1[first]
    dead = event == 1
    ll = float(eta[dead].sum() - np.sum(d * (np.log(s0) + shift)))
    zbar = s1 / s0[:, None]
    grad = Z[dead].sum(axis=0) - (d[:, None] * zbar).sum(axis=0)
    hess = None
    if need_hess:
        wz = w[:, None] * Z
        S2 = np.cumsum((wz[:, :, None] * Z[:, None, :])[order][::-1], axis=0)[::-1]
        s2 = S2[first] / s0[:, None, None]
        cov = s2 - zbar[:, :, None] * zbar[:, None, :]
        hess = -(d[:, None, None] * cov).sum(axis=0)
    return ll, grad, hess


def log_partial_likelihood(time, event, Z, beta) -> float:
    """Breslow-tie log partial likelihood at ``beta``."""
    Z = np.asarray(Z, dtype=float).reshape(len(time), -1)
    return _risk_sums(np.asarray(time, float), np.asarray(event), Z, np.asarray(beta, float), False)[0]


def log_partial_likelihood_gradient(time, event, Z, beta) -> np.ndarray:
    Z = np.asarray(Z, dtype=float).reshape(len(time), -1)
    return _risk_sums(np.asarray(time, float), np.asarray(event), Z, np.asarray(beta, float), False)[1]


@dataclass(frozen=True)
class _Fit:
    beta: np.ndarray
    loglik: float
    n_iter: int
    converged: bool
    grad_norm: float


def _newton(time, event, Z, names) -> _Fit:
    p = Z.shape[1]
    beta = np.zeros(p)
    if p == 0:
        ll, _, _ = _risk_sums(time, event, Z, beta, need_hess=False)
        return _Fit(beta, ll, 0, True, 0.0)
    # centring leaves the partial likelihood unchanged but helps conditioning
    Zc = Z - Z.mean(axis=0)
    ll, grad, hess = _risk_sums(time, event, Zc, beta)
    info0 = np.diag(-hess).copy()
    for it in range(1, MAX_ITER + 1):
        gnorm = float(np.max(np.abs(grad)))
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        # under a monotone likelihood the gradient vanishes while the Newton
        # step stays near one, so a small gradient alone is not convergence
        if gnorm < GRAD_TOL and np.max(np.abs(step)) < STEP_TOL:
            flat = np.diag(-hess) < INFO_COLLAPSE * info0
            if np.any(flat):
                j = int(np.argmax(flat))
                raise ConvergenceError(
                    f"monotone likelihood: coefficient for {names[j]!r} diverges"
                )
            return _Fit(beta, ll, it - 1, True, gnorm)
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + step
            if np.max(np.abs(cand)) > DIVERGENCE_BOUND:
                j = int(np.argmax(np.abs(cand)))
                raise ConvergenceError(
                    f"monotone likelihood: coefficient for {names[j]!r} diverges"
                )
            new_ll, new_grad, new_hess = _risk_sums(time, event, Zc, cand)
            if new_ll >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        beta, ll, grad, hess = cand, new_ll, new_grad, new_hess
    gnorm = float(np.max(np.abs(grad)))
    return _Fit(beta, ll, MAX_ITER, gnorm < GRAD_TOL, gnorm)


def _breslow(time, event, Z, beta) -> CumHazardCurve:
    w = np.exp(Z @ beta)
    times, d, _, s0 = risk_table(time, event, weights=w)
    deaths = risk_table(time, event)[1]
    return CumHazardCurve(TimeGrid(times), np.cumsum(deaths / s0))


@dataclass(frozen=True, eq=False)
class CoxModel:
    beta: np.ndarray
    names: tuple[str, ...]
    baseline_chf: CumHazardCurve
    schema: tuple[Covariate, ...]
    log_partial_likelihood: float
    n_params: int
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0
    covariates: tuple[str, ...] = field(default=())

    @property
    def aic(self) -> float:
        return -2.0 * self.log_partial_likelihood + 2.0 * self.n_params

    def _design(self, X) -> np.ndarray:
        X = check_covariates(X, self.schema)
        Z, names, _ = encode(np.atleast_2d(X), self.schema)
        return Z[:, [names.index(nm) for nm in self.names]]

    def linear_predictor(self, X) -> np.ndarray:
        return self._design(X) @ self.beta

    def predict_survival_matrix(self, X, grid: TimeGrid | None = None) -> np.ndarray:
        grid = self.baseline_chf.grid if grid is None else grid
        h0 = np.asarray(self.baseline_chf(grid.times), dtype=float)
        rr = np.exp(self.linear_predictor(X))
        return np.exp(-np.outer(rr, h0))

    def to_dict(self) -> dict:
        return {
            "format": "survensemble.cox",
            "version": FORMAT_VERSION,
            "schema": [c.to_dict() for c in self.schema],
            "covariates": list(self.covariates),
            "beta": {nm: float(b) for nm, b in zip(self.names, self.beta)},
            "baseline": self.baseline_chf.to_dict(),
            "log_partial_likelihood": self.log_partial_likelihood,
            "n_params": self.n_params,
            "aic": self.aic,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CoxModel":
        if doc.get("format") != "survensemble.cox":
            raise SurvivalDataError("not a Cox model document")
        base = doc["baseline"]
        return cls(
            beta=np.array(list(doc["beta"].values()), dtype=float),
            names=tuple(doc["beta"].keys()),
            baseline_chf=CumHazardCurve(TimeGrid(base["time"]), base["value"]),
            schema=tuple(Covariate.from_dict(c) for c in doc["schema"]),
            log_partial_likelihood=doc["log_partial_likelihood"],
            n_params=doc["n_params"],
            converged=doc["converged"],
            n_iter=doc["n_iter"],
            grad_norm=doc["grad_norm"],
            covariates=tuple(doc["covariates"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "CoxModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _fit_design(data: SurvDataset, covariates: Sequence[str] | None = None) -> CoxModel:
    data.require_events()
    Z, names, blocks = encode(data.X, data.schema)
    if covariates is not None:
        cols = [c for nm in covariates for c in blocks[nm]]
        Z = Z[:, cols]
        names = [names[c] for c in cols]
    const = np.ptp(Z, axis=0) == 0 if Z.shape[1] else np.array([], bool)
    if np.any(const):
        raise SurvivalDataError(f"constant design column {names[int(np.argmax(const))]!r}")
    time, event = data.time, data.event
    fit = _newton(time, event, Z, names)
    return CoxModel(
        beta=fit.beta,
        names=tuple(names),
        baseline_chf=_breslow(time, event, Z, fit.beta),
        schema=data.schema,
        log_partial_likelihood=fit.loglik,
        n_params=len(names),
        converged=fit.converged,
        n_iter=fit.n_iter,
        grad_norm=fit.grad_norm,
        covariates=tuple(data.names if covariates is None else covariates),
    )


def fit_cox(data: SurvDataset) -> CoxModel:
    """Fit by Newton-Raphson on the Breslow partial likelihood.

    Raises
    ------
    SurvivalDataError
        No events, or a constant design column.
    ConvergenceError
        A coefficient exceeds 50 in absolute value (monotone likelihood).
    """
    return _fit_design(data)


def predict_cox_survival(model: CoxModel, x, grid: TimeGrid | None = None) -> SurvivalCurve:
    x = check_covariates(x, model.schema)
    if x.ndim != 1:
        raise SurvivalDataError("expected a single covariate vector")
    grid = model.baseline_chf.grid if grid is None else grid
    return SurvivalCurve(grid, model.predict_survival_matrix(x, grid)[0])


@dataclass(frozen=True)
class StepwiseResult:
    selected: tuple[str, ...]
    trace: tuple[tuple[str | None, float], ...]
    final_model: CoxModel


def backward_stepwise_aic(data: SurvDataset) -> StepwiseResult:
    """Backward elimination by AIC starting from the full model.

    Each categorical covariate enters or leaves as its whole indicator block.
    The first trace entry is the full model (removed covariate ``None``).
    """
    if data.p < 1:
        raise SurvivalDataError("stepwise selection needs at least one covariate")
    current = list(data.names)
    model = _fit_design(data, current)
    trace = [(None, model.aic)]
    while current:
        best = None
        for name in current:
            rest = [c for c in current if c != name]
            try:
                cand = _fit_design(data, rest)
            except (ConvergenceError, SurvivalDataError):
                continue
            if best is None or cand.aic < best[1].aic:
                best = (name, cand)
        if best is None or not best[1].aic < model.aic:
            break
        current.remove(best[0])
        model = best[1]
        trace.append((best[0], model.aic))
    return StepwiseResult(tuple(current), tuple(trace), model)
