"""Uniform prediction interface over the fitted model artifacts."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bart import BartConfig, BartPosterior, fit_bart_survival
from .cox import CoxModel, fit_cox
from .curves import CurveBatch, SurvivalCurve, TimeGrid, kaplan_meier
from .data import SurvDataset, SurvivalDataError
from .rsf import Forest, RsfConfig, fit_forest

__all__ = ["KaplanMeierModel", "load_model", "fit_model", "survival_batch", "risk_scores", "MODEL_KINDS"]

MODEL_KINDS = ("cox", "rsf", "bart", "km")


@dataclass(frozen=True, eq=False)
class KaplanMeierModel:
    """Covariate-free baseline predicting the training Kaplan-Meier curve for everyone."""

    curve: SurvivalCurve

    def to_dict(self) -> dict:
        return {"format": "survensemble.km", "version": 1, "curve": self.curve.to_dict()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_dict(cls, doc: dict) -> "KaplanMeierModel":
        c = doc["curve"]
        return cls(SurvivalCurve(TimeGrid(c["time"]), c["value"]))


_LOADERS = {
    "survensemble.cox": CoxModel.from_dict,
    "survensemble.rsf": Forest.from_dict,
    "survensemble.bart": BartPosterior.from_dict,
    "survensemble.km": KaplanMeierModel.from_dict,
}


def load_model(path: str | Path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SurvivalDataError(f"cannot read model file {path}: {exc}") from exc
    fmt = doc.get("format") if isinstance(doc, dict) else None
    if fmt not in _LOADERS:
        raise SurvivalDataError(f"{path}: unrecognised model format {fmt!r}")
    return _LOADERS[fmt](doc)


def fit_model(kind: str, data: SurvDataset, rsf: RsfConfig | None = None, bart: BartConfig | None = None, n_jobs=None):
    if kind == "cox":
        return fit_cox(data)
    if kind == "rsf":
        return fit_forest(data, rsf or RsfConfig(), n_jobs=n_jobs)
    if kind == "bart":
        return fit_bart_survival(data, bart or BartConfig())
    if kind == "km":
        return KaplanMeierModel(kaplan_meier(data))
    raise SurvivalDataError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")


def survival_batch(model, X) -> CurveBatch:
    """Per-subject predicted survival curves on the model's own time grid."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(model, CoxModel):
        return CurveBatch(model.baseline_chf.grid, model.predict_survival_matrix(X))
    if isinstance(model, Forest):
        return CurveBatch(model.grid, model.survival_matrix(X))
    if isinstance(model, BartPosterior):
        return CurveBatch(model.grid, model.survival_mean(X))
    if isinstance(model, KaplanMeierModel):
        return CurveBatch(model.curve.grid, np.tile(model.curve.values, (X.shape[0], 1)))
    raise SurvivalDataError(f"unsupported model type {type(model).__name__}")


def risk_scores(model, X, batch: CurveBatch | None = None) -> np.ndarray:
    """Higher means worse prognosis.

    Cox uses the linear predictor and the forest its ensemble mortality;
    curve-only models use minus the restricted mean survival over their grid.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(model, CoxModel):
        return model.linear_predictor(X)
    if isinstance(model, Forest):
        return model.mortality(X)
    batch = survival_batch(model, X) if batch is None else batch
    t = batch.grid.times
    widths = np.diff(np.concatenate([[0.0], t]))
    # S is 1 on [0, t_1) and values[:, j] on [t_j, t_{j+1})
    prev = np.concatenate([np.ones((batch.values.shape[0], 1)), batch.values[:, :-1]], axis=1)
    return -(prev * widths).sum(axis=1)
