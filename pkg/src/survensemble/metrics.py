"""Discrimination and calibration measures for censored survival predictions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .curves import SurvivalCurve, as_batch, censoring_km, kaplan_meier
from .data import SurvDataset, SurvivalDataError

__all__ = [
    "RocCurve",
    "concordance_index",
    "roc_at_time",
    "iauc",
    "brier_score",
    "brier_curve",
    "integrated_brier",
    "step_integral",
]

_CHUNK = 512


def _scores(scores, data: SurvDataset) -> np.ndarray:
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.shape != (data.n,):
        raise SurvivalDataError(f"got {s.size} risk scores for {data.n} subjects")
    if not np.all(np.isfinite(s)):
        raise SurvivalDataError("risk scores must be finite")
    return s


def concordance_index(scores, data: SurvDataset) -> float:
    """Harrell's C-index; higher scores mean worse prognosis.

    Pairs with distinct times are usable when the shorter time is an event,
    and score 1 (shorter time has the higher score), 0.5 (tied scores) or 0.
    Pairs with tied times are usable unless both are censored. A tied pair
    of two events scores 1 when the scores tie and 0.5 otherwise. A tied
    event/censored pair scores 1 when the censored subject has the higher
    score and 0.5 otherwise.
    """
    s = _scores(scores, data)
    z = data.time
    d = data.event.astype(bool)
    n = z.size
    total = 0.0
    usable = 0
    for lo in range(0, n, _CHUNK):
        i = slice(lo, min(lo + _CHUNK, n))
        zi, zj = z[i, None], z[None, :]
        si, sj = s[i, None], s[None, :]
        di, dj = d[i, None], d[None, :]
        upper = np.arange(lo, min(lo + _CHUNK, n))[:, None] < np.arange(n)[None, :]

        shorter_i = zi < zj
        shorter_j = zj < zi
        untied = (shorter_i & di) | (shorter_j & dj)
        s_short = np.where(shorter_i, si, sj)
        s_long = np.where(shorter_i, sj, si)
        c_untied = np.where(s_short > s_long, 1.0, np.where(s_short == s_long, 0.5, 0.0))

        tied = (zi == zj) & (di | dj)
        both = di & dj
        s_cens = np.where(di, sj, si)
        s_dead = np.where(di, si, sj)
        c_tied = np.where(
            both,
            np.where(si == sj, 1.0, 0.5),
            np.where(s_cens > s_dead, 1.0, 0.5),
        )
        untied &= upper
        tied &= upper
        total += float(c_untied[untied].sum() + c_tied[tied].sum())
        usable += int(untied.sum() + tied.sum())
    if usable == 0:
        raise SurvivalDataError("no usable pairs for the C-index")
    return total / usable


@dataclass(frozen=True, eq=False)
class RocCurve:
    t: float
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    n_dropped: int = 0

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.fpr, self.tpr])


def _censoring(data: SurvDataset, G: SurvivalCurve | None) -> SurvivalCurve:
    return censoring_km(data) if G is None else G


def _weight_above(x, w, cuts):
    """Fraction of total weight with ``x > c`` for each cut ``c``."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cw = np.concatenate([[0.0], np.cumsum(w[order])])
    below = cw[np.searchsorted(xs, cuts, side="right")]
    return (cw[-1] - below) / cw[-1]


def roc_at_time(scores, data: SurvDataset, t: float, G: SurvivalCurve | None = None) -> RocCurve:
    """Cumulative/dynamic ROC at ``t`` with inverse-probability-of-censoring weights.

    Cases are events by ``t`` weighted by ``1/G(z-)``; controls are subjects
    still under observation after ``t`` weighted by ``1/G(t)``. Rows whose
    censoring weight is infinite are dropped and counted in ``n_dropped``.
    """
    s = _scores(scores, data)
    G = _censoring(data, G)
    z, d = data.time, data.event == 1
    case = (z <= t) & d
    ctrl = z > t
    g_case = np.asarray(G.left_limit(z[case]), dtype=float).reshape(-1)
    g_ctrl = float(G(t))
    dropped = int((g_case <= 0).sum()) + (int(ctrl.sum()) if g_ctrl <= 0 else 0)
    w_case = np.where(g_case > 0, 1.0 / np.where(g_case > 0, g_case, 1.0), 0.0)
    s_case = s[case][g_case > 0]
    w_case = w_case[g_case > 0]
    s_ctrl = s[ctrl] if g_ctrl > 0 else s[:0]
    if s_case.size == 0 or s_ctrl.size == 0:
        raise SurvivalDataError(f"no cases or no controls at t={t}")
    w_ctrl = np.full(s_ctrl.size, 1.0 / g_ctrl)

    cut = np.unique(np.concatenate([s_case, s_ctrl]))[::-1]
    # sensitivity P(x > c | case) and 1 - specificity P(x > c | control)
    tp = _weight_above(s_case, w_case, cut)
    fp = _weight_above(s_ctrl, w_ctrl, cut)
    fpr = np.concatenate([fp, [1.0]])
    tpr = np.concatenate([tp, [1.0]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(float(t), fpr, tpr, auc, dropped)


def auc_by_time(scores, data: SurvDataset, times, G: SurvivalCurve | None = None) -> dict[float, float]:
    """AUC at each time where both cases and controls exist."""
    G = _censoring(data, G)
    out = {}
    for t in np.asarray(times, dtype=float).reshape(-1):
        try:
            out[float(t)] = roc_at_time(scores, data, t, G).auc
        except SurvivalDataError:
            continue
    return out


def iauc(scores, data: SurvDataset, times, G: SurvivalCurve | None = None) -> float:
    """Survival-weighted mean of AUC(t), weights proportional to Kaplan-Meier drops."""
    times = np.asarray(getattr(times, "times", times), dtype=float).reshape(-1)
    aucs = auc_by_time(scores, data, times, G)
    if not aucs:
        raise SurvivalDataError("no evaluable time for the IAUC")
    km = kaplan_meier(data)
    prev = np.concatenate([[0.0], times[:-1]])
    drops = np.asarray(km(prev)) - np.asarray(km(times))
    keep = np.array([float(t) in aucs for t in times])
    w = drops[keep]
    a = np.array([aucs[float(t)] for t in times[keep]])
    if w.sum() <= 0:
        w = np.ones_like(a)
    return float(np.sum(w * a) / w.sum())


def brier_score(predicted, data: SurvDataset, t: float, G: SurvivalCurve | None = None) -> float:
    """IPCW Brier score at ``t`` for per-subject predicted survival curves."""
    batch = as_batch(predicted)
    if len(batch) != data.n:
        raise SurvivalDataError(f"got {len(batch)} predictions for {data.n} subjects")
    G = _censoring(data, G)
    g_t = float(G(t))
    if g_t <= 0:
        raise SurvivalDataError(f"censoring survival is zero at t={t}; t is beyond the censoring support")
    z, d = data.time, data.event
    alive = (z > t).astype(float)
    g_z = np.asarray(G.left_limit(z), dtype=float)
    w_dead = np.where((alive == 0) & (d == 1) & (g_z > 0), 1.0 / np.where(g_z > 0, g_z, 1.0), 0.0)
    w = w_dead + alive / g_t
    s_hat = batch.at(t)
    return float(np.mean(w * (alive - s_hat) ** 2))


def brier_curve(predicted, data: SurvDataset, times, G: SurvivalCurve | None = None) -> np.ndarray:
    batch = as_batch(predicted)
    G = _censoring(data, G)
    return np.array([brier_score(batch, data, t, G) for t in np.asarray(times, dtype=float)])


def step_integral(breaks, values, tau: float) -> float:
    """Integral over ``[0, tau]`` of a right-continuous step function.

    ``values[k]`` holds on ``[breaks[k], breaks[k+1])``; the function is 0
    before ``breaks[0]`` and the last value extends to ``tau``.
    """
    b = np.asarray(breaks, dtype=float)
    v = np.asarray(values, dtype=float)
    inside = b < tau
    b, v = b[inside], v[inside]
    ends = np.concatenate([b[1:], [tau]])
    return float(np.sum(v * (ends - b)))


def integrated_brier(predicted, data: SurvDataset, tau: float | None = None, G: SurvivalCurve | None = None) -> float:
    """Brier score averaged over ``[0, tau]`` as an exact step-function integral.

    The score only changes at prediction grid times and observed test times,
    so it is evaluated at each such breakpoint and integrated piecewise.
    """
    batch = as_batch(predicted)
    tmax = float(data.time.max())
    tau = tmax if tau is None else float(tau)
    if not 0 < tau <= tmax:
        raise SurvivalDataError(f"tau={tau} must lie in (0, {tmax}]")
    G = _censoring(data, G)
    breaks = np.unique(np.concatenate([[0.0], batch.grid.times, data.time]))
    breaks = breaks[breaks < tau]
    bs = brier_curve(batch, data, breaks, G)
    return step_integral(breaks, bs, tau) / tau


def write_roc_csv(curves: Sequence[RocCurve], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "fpr", "tpr"])
        for c in curves:
            for f, p in zip(c.fpr, c.tpr):
                w.writerow([repr(c.t), repr(float(f)), repr(float(p))])
