"""Step-function survival curves and the classical nonparametric estimators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SurvDataset, SurvivalDataError

__all__ = [
    "TimeGrid",
    "SurvivalCurve",
    "CumHazardCurve",
    "CurveBatch",
    "risk_table",
    "kaplan_meier",
    "nelson_aalen",
    "censoring_km",
    "surv_from_chf",
    "time_grid",
]


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing positive times; ``z_(0) = 0`` is implicit."""

    times: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        if t.size and (np.any(t <= 0) or np.any(np.diff(t) <= 0)):
            raise SurvivalDataError("grid times must be positive and strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self):
        return iter(self.times.tolist())

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def index_at(self, t, side: str = "right") -> np.ndarray:
        """Index of the last grid time ``<= t`` (``< t`` for ``side='left'``); -1 before the grid."""
        return np.searchsorted(self.times, t, side=side) - 1


@dataclass(frozen=True, eq=False)
class _StepCurve:
    grid: TimeGrid
    values: np.ndarray

    _before = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (len(self.grid),):
            raise SurvivalDataError("curve needs one value per grid time")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def _eval(self, idx):
        padded = np.concatenate(([self._before], self.values))
        out = padded[np.asarray(idx) + 1]
        return float(out) if out.ndim == 0 else out

    def __call__(self, t):
        """Right-continuous evaluation: the value at the last grid time ``<= t``."""
        return self._eval(self.grid.index_at(t))

    def left_limit(self, t):
        """Value just before ``t``."""
        return self._eval(self.grid.index_at(t, side="left"))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    def to_dict(self) -> dict:
        return {"time": self.times.tolist(), "value": self.values.tolist()}


class SurvivalCurve(_StepCurve):
    """Nonincreasing step function in [0, 1], equal to 1 before the first grid time."""

    _before = 1.0

    def __post_init__(self):
        super().__post_init__()
        v = self.values
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12) or np.any(np.diff(v) > 1e-12):
            raise SurvivalDataError("survival values must be nonincreasing within [0, 1]")


class CumHazardCurve(_StepCurve):
    """Nondecreasing nonnegative step function, equal to 0 before the first grid time."""

    _before = 0.0

    def __post_init__(self):
        super().__post_init__()
        v = self.values
        if np.any(v < 0) or np.any(np.diff(v) < -1e-12):
            raise SurvivalDataError("cumulative hazard must be nonnegative and nondecreasing")


@dataclass(frozen=True, eq=False)
class CurveBatch:
    """Per-subject curves sharing one grid, stored as an ``(n, len(grid))`` matrix."""

    grid: TimeGrid
    values: np.ndarray
    before: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.grid):
            raise SurvivalDataError("curve matrix must have one column per grid time")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_curves(cls, curves) -> "CurveBatch":
        curves = list(curves)
        grid = curves[0].grid
        if any(c.grid != grid for c in curves):
            raise SurvivalDataError("curves must share a grid")
        return cls(grid, np.vstack([c.values for c in curves]), type(curves[0])._before)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i) -> SurvivalCurve:
        return SurvivalCurve(self.grid, self.values[i])

    def at(self, t: float) -> np.ndarray:
        """Column of values at time ``t`` (right-continuous)."""
        j = int(self.grid.index_at(t))
        if j < 0:
            return np.full(len(self), self.before)
        return self.values[:, j]


def as_batch(predicted) -> CurveBatch:
    if isinstance(predicted, CurveBatch):
        return predicted
    return CurveBatch.from_curves(predicted)


def risk_table(time, event, grid_times=None, weights=None):
    """Deaths, censorings and risk-set sizes at each distinct observed time.

    Returns ``(times, deaths, censored, at_risk)``. With ``grid_times`` the
    counts are reported on that grid instead (observed times must lie on it
    for the death counts to be exact).
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    w = np.ones(time.shape) if weights is None else np.asarray(weights, dtype=float)
    times = np.unique(time) if grid_times is None else np.asarray(grid_times, dtype=float)
    pos = np.searchsorted(times, time)
    on_grid = (pos < times.size) & (times[np.minimum(pos, times.size - 1)] == time)
    deaths = np.bincount(pos[on_grid], weights=(w * (event == 1))[on_grid], minlength=times.size)
    cens = np.bincount(pos[on_grid], weights=(w * (event == 0))[on_grid], minlength=times.size)
    order = np.sort(time)
    cw = np.concatenate(([0.0], np.cumsum(w[np.argsort(time, kind="stable")])))
    at_risk = cw[-1] - cw[np.searchsorted(order, times, side="left")]
    return times, deaths[: times.size], cens[: times.size], at_risk


def kaplan_meier(data: SurvDataset) -> SurvivalCurve:
    """Product-limit estimate on the grid of distinct observed times."""
    times, d, _, r = risk_table(data.time, data.event)
    return SurvivalCurve(TimeGrid(times), np.cumprod(1.0 - d / r))


def nelson_aalen(data: SurvDataset) -> CumHazardCurve:
    times, d, _, r = risk_table(data.time, data.event)
    return CumHazardCurve(TimeGrid(times), np.cumsum(d / r))


def censoring_km(data: SurvDataset) -> SurvivalCurve:
    """Reverse Kaplan-Meier estimate of the censoring survival function G.

    Deaths tied with a censoring are taken to occur first, so they leave the
    censoring risk set before the censoring at that time.
    """
    times, d, c, r = risk_table(data.time, data.event)
    r_c = r - d
    factor = np.where(r_c > 0, 1.0 - c / np.where(r_c > 0, r_c, 1.0), 1.0)
    return SurvivalCurve(TimeGrid(times), np.cumprod(factor))


def surv_from_chf(chf: CumHazardCurve) -> SurvivalCurve:
    return SurvivalCurve(chf.grid, np.exp(-chf.values))


def time_grid(data: SurvDataset, max_points: int | None = None) -> TimeGrid:
    """Distinct sorted observed times, optionally coarsened to ``max_points``.

    Coarsening keeps evenly spaced order statistics of the distinct times,
    always including the smallest and largest.
    """
    if max_points is not None and max_points < 2:
        raise SurvivalDataError("max_points must be at least 2")
    times = np.unique(data.time)
    if max_points is not None and times.size > max_points:
        idx = np.round(np.linspace(0, times.size - 1, max_points)).astype(int)
        times = times[idx]
    return TimeGrid(times)
