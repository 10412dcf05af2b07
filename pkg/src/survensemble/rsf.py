"""Random survival forests with log-rank and log-rank-score splitting."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from ._random import default_threads, substream
from .curves import CumHazardCurve, TimeGrid, risk_table
from .data import Covariate, SurvDataset, SurvivalDataError, check_covariates

__all__ = [
    "RsfConfig",
    "SurvTree",
    "Forest",
    "logrank_split_stat",
    "logrank_score_split_stat",
    "fit_forest",
    "predict_chf",
    "oob_predict",
    "variable_importance",
]

FORMAT_VERSION = 1
MAX_EXHAUSTIVE_LEVELS = 8
MAX_LEVELS = 62


@dataclass(frozen=True)
class RsfConfig:
    n_trees: int = 1000
    mtry: int | None = None
    min_terminal_deaths: int = 3
    split_rule: Literal["log_rank", "log_rank_score"] = "log_rank"
    nsplit: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise SurvivalDataError("n_trees must be >= 1")
        if self.min_terminal_deaths < 1:
            raise SurvivalDataError("min_terminal_deaths must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise SurvivalDataError("mtry must be >= 1")
        if self.split_rule not in ("log_rank", "log_rank_score"):
            raise SurvivalDataError(f"unknown split rule {self.split_rule!r}")
        if self.nsplit < 0:
            raise SurvivalDataError("nsplit must be >= 0")

    def resolved_mtry(self, p: int) -> int:
        m = math.ceil(math.sqrt(p)) if self.mtry is None else self.mtry
        if m > p:
            raise SurvivalDataError(f"mtry={m} exceeds the number of covariates {p}")
        return m


# -- split statistics -------------------------------------------------------


def _risk_matrices(time, event):
    """At-risk and death indicator matrices over the pooled distinct event times."""
    taus = np.unique(time[event == 1])
    at_risk = (time[:, None] >= taus[None, :]).astype(float)
    deaths = ((time[:, None] == taus[None, :]) & (event[:, None] == 1)).astype(float)
    return at_risk, deaths


def _logrank_stats(masks, at_risk, deaths):
    """Standardized log-rank statistics for each row of the left-membership matrix."""
    R = at_risk.sum(axis=0)
    d = deaths.sum(axis=0)
    RL = masks @ at_risk
    dL = masks @ deaths
    use = R > 1
    R, d, RL, dL = R[use], d[use], RL[:, use], dL[:, use]
    num = (dL - RL * d / R).sum(axis=1)
    var = (RL * (R - RL) * d * (R - d) / (R * R * (R - 1))).sum(axis=1)
    out = np.zeros(masks.shape[0])
    ok = var > 1e-12
    out[ok] = np.abs(num[ok]) / np.sqrt(var[ok])
    return out


def logrank_scores(time, event) -> np.ndarray:
    """Censoring-adjusted log-rank scores: event indicator minus Nelson-Aalen at own time."""
    times, d, _, r = risk_table(time, event)
    na = np.cumsum(d / r)
    return event - na[np.searchsorted(times, time)]


def _score_stats(masks, scores):
    n = scores.size
    nL = masks.sum(axis=1)
    abar = scores.mean()
    s2 = scores.var(ddof=1) if n > 1 else 0.0
    num = masks @ scores - nL * abar
    var = nL * (1 - nL / n) * s2
    out = np.zeros(masks.shape[0])
    ok = var > 1e-12
    out[ok] = np.abs(num[ok]) / np.sqrt(var[ok])
    return out


def _pair(left: SurvDataset, right: SurvDataset):
    time = np.concatenate([left.time, right.time])
    event = np.concatenate([left.event, right.event]).astype(int)
    mask = np.zeros((1, time.size))
    mask[0, : left.n] = 1.0
    return time, event, mask


def logrank_split_stat(left: SurvDataset, right: SurvDataset) -> float:
    """Standardized two-sample log-rank statistic (0 when its variance vanishes)."""
    time, event, mask = _pair(left, right)
    if not event.any():
        return 0.0
    return float(_logrank_stats(mask, *_risk_matrices(time, event))[0])


def logrank_score_split_stat(left: SurvDataset, right: SurvDataset) -> float:
    """Standardized linear rank statistic of the log-rank scores of the left group."""
    time, event, mask = _pair(left, right)
    if not event.any():
        return 0.0
    return float(_score_stats(mask, logrank_scores(time, event))[0])


# -- trees ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SurvTree:
    """Flat binary tree. Interior nodes have ``feature >= 0``.

    Numeric splits send ``x <= threshold`` left; categorical splits send codes
    whose bit is set in ``left_levels`` left. Leaves index rows of ``leaf_chf``
    (Nelson-Aalen) and ``leaf_surv`` (product-limit), both from in-bag members.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left_levels: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    leaf_chf: np.ndarray
    leaf_surv: np.ndarray
    inbag: np.ndarray
    candidates: tuple = field(default=())

    @property
    def n_leaves(self) -> int:
        return self.leaf_chf.shape[0]

    @property
    def split_features(self) -> np.ndarray:
        return self.feature[self.feature >= 0]

    def apply(self, X, categorical=None, rng=None, randomize=None) -> np.ndarray:
        """Leaf row reached by each row of ``X``.

        With ``randomize=v``, every node splitting on covariate ``v`` sends the
        case to a uniformly random daughter drawn from ``rng``.
        """
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        is_cat = np.zeros(X.shape[1], bool) if categorical is None else categorical
        while True:
            f = self.feature[node]
            active = np.flatnonzero(f >= 0)
            if active.size == 0:
                break
            fa = f[active]
            xa = X[active, fa]
            cat = is_cat[fa]
            go_left = np.where(
                cat,
                (self.left_levels[node[active]] >> xa.astype(np.int64).clip(0, MAX_LEVELS)) & 1 == 1,
                xa <= self.threshold[node[active]],
            )
            if randomize is not None:
                hit = fa == randomize
                if hit.any():
                    go_left[hit] = rng.random(int(hit.sum())) < 0.5
            node[active] = np.where(go_left, self.left[node[active]], self.right[node[active]])
        return self.leaf[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left_levels": self.left_levels.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf": self.leaf.tolist(),
            "leaf_chf": self.leaf_chf.tolist(),
            "leaf_surv": self.leaf_surv.tolist(),
            "inbag": self.inbag.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurvTree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left_levels"], dtype=np.int64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["leaf"], dtype=np.int64),
            np.array(d["leaf_chf"], dtype=float).reshape(len(d["leaf_chf"]), -1),
            np.array(d["leaf_surv"], dtype=float).reshape(len(d["leaf_surv"]), -1),
            np.array(d["inbag"], dtype=np.int64),
        )


def _leaf_curves(time, event, grid_times):
    """Nelson-Aalen cumulative hazard and Kaplan-Meier survival on the grid."""
    _, d, _, r = risk_table(time, event, grid_times=grid_times)
    jump = np.where(r > 0, d / np.where(r > 0, r, 1.0), 0.0)
    return np.cumsum(jump), np.cumprod(1.0 - jump)


def _categorical_masks(codes, present, rng, nsplit):
    """Left-membership bitmasks of candidate level subsets."""
    k = present.size
    if nsplit and 2 ** (k - 1) - 1 > nsplit:
        subsets = set()
        while len(subsets) < nsplit:
            pick = rng.random(k) < 0.5
            pick[0] = True
            if not pick.all():
                subsets.add(tuple(pick))
        subsets = sorted(subsets)
    else:
        # every proper subset containing the first present level
        subsets = [
            (True, *(bool((s >> i) & 1) for i in range(k - 1)))
            for s in range(2 ** (k - 1) - 1)
        ]
    out = []
    for s in subsets:
        bits = 0
        for lev, on in zip(present, s):
            if on:
                bits |= 1 << int(lev)
        out.append(bits)
    return out


class _Grower:
    def __init__(self, X, time, event, is_cat, grid_times, cfg: RsfConfig, mtry, debug):
        self.X, self.time, self.event = X, time, event
        self.is_cat = is_cat
        self.grid_times = grid_times
        self.cfg = cfg
        self.mtry = mtry
        self.debug = debug

    def _best_split(self, rows, rng, log):
        X, time, event = self.X, self.time, self.event
        cfg = self.cfg
        t, e = time[rows], event[rows]
        total_deaths = int(e.sum())
        if total_deaths < 2 * cfg.min_terminal_deaths:
            return None
        if cfg.split_rule == "log_rank":
            at_risk, deaths = _risk_matrices(t, e)
        else:
            scores = logrank_scores(t, e)
        best = None
        for v in rng.choice(X.shape[1], self.mtry, replace=False):
            x = X[rows, v]
            if self.is_cat[v]:
                present = np.unique(x).astype(np.int64)
                if present.size < 2:
                    continue
                if present.size > MAX_EXHAUSTIVE_LEVELS and not cfg.nsplit:
                    bits = _categorical_masks(x, present, rng, 2 ** (MAX_EXHAUSTIVE_LEVELS - 1) - 1)
                else:
                    bits = _categorical_masks(x, present, rng, cfg.nsplit)
                rules = np.array(bits, dtype=np.int64)
                masks = ((rules[:, None] >> x.astype(np.int64)[None, :]) & 1).astype(float)
            else:
                cuts = np.unique(x)[:-1]
                if cuts.size == 0:
                    continue
                if cfg.nsplit and cuts.size > cfg.nsplit:
                    cuts = np.sort(rng.choice(cuts, cfg.nsplit, replace=False))
                rules = cuts
                masks = (x[None, :] <= cuts[:, None]).astype(float)
            left_deaths = masks @ e
            legal = (left_deaths >= cfg.min_terminal_deaths) & (
                total_deaths - left_deaths >= cfg.min_terminal_deaths
            )
            if not legal.any():
                continue
            if cfg.split_rule == "log_rank":
                stats = _logrank_stats(masks, at_risk, deaths)
            else:
                stats = _score_stats(masks, scores)
            stats = np.where(legal, stats, -np.inf)
            if log is not None:
                for rule, s in zip(rules.tolist(), stats.tolist()):
                    log.append((int(v), rule, s))
            j = int(np.argmax(stats))
            if stats[j] > 0 and (best is None or stats[j] > best[0]):
                best = (float(stats[j]), int(v), rules[j])
        return best

    def grow(self, tree_index: int) -> SurvTree:
        rng = substream(self.cfg.seed, "tree", tree_index)
        n = self.time.size
        boot = rng.integers(0, n, n)
        feature, threshold, levels, left, right, leaf = [], [], [], [], [], []
        chfs, survs = [], []
        log = [] if self.debug else None
        candidates = []

        def new_node():
            for arr, val in ((feature, -1), (threshold, 0.0), (levels, 0), (left, -1), (right, -1), (leaf, -1)):
                arr.append(val)
            return len(feature) - 1

        stack = [(new_node(), boot)]
        while stack:
            node, rows = stack.pop()
            if log is not None:
                log.clear()
            best = self._best_split(rows, rng, log)
            if log is not None:
                candidates.append((node, tuple(log), best))
            if best is None:
                leaf[node] = len(chfs)
                chf, surv = _leaf_curves(self.time[rows], self.event[rows], self.grid_times)
                chfs.append(chf)
                survs.append(surv)
                continue
            _, v, rule = best
            x = self.X[rows, v]
            feature[node] = v
            if self.is_cat[v]:
                levels[node] = int(rule)
                go_left = ((int(rule) >> x.astype(np.int64)) & 1) == 1
            else:
                threshold[node] = float(rule)
                go_left = x <= rule
            lnode, rnode = new_node(), new_node()
            left[node], right[node] = lnode, rnode
            stack.append((rnode, rows[~go_left]))
            stack.append((lnode, rows[go_left]))
        return SurvTree(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=float),
            np.array(levels, dtype=np.int64),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(leaf, dtype=np.int64),
            np.array(chfs).reshape(len(chfs), self.grid_times.size),
            np.array(survs).reshape(len(survs), self.grid_times.size),
            np.bincount(boot, minlength=n).astype(np.int64),
            tuple(candidates),
        )


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[SurvTree, ...]
    config: RsfConfig
    grid: TimeGrid
    schema: tuple[Covariate, ...]

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def categorical(self) -> np.ndarray:
        return np.array([c.is_categorical for c in self.schema], dtype=bool)

    @property
    def inbag(self) -> np.ndarray:
        """``(n_trees, n_train)`` bootstrap multiplicities."""
        return np.vstack([t.inbag for t in self.trees])

    def _X(self, X) -> np.ndarray:
        X = check_covariates(X, self.schema)
        X = np.atleast_2d(X)
        for j, c in enumerate(self.schema):
            if c.is_categorical and np.any(
                (X[:, j] < 0) | (X[:, j] >= len(c.levels)) | (X[:, j] != np.round(X[:, j]))
            ):
                raise SurvivalDataError(f"invalid level code for {c.name!r}")
        return X

    def tree_chf(self, X) -> np.ndarray:
        """``(n_trees, n, len(grid))`` per-tree cumulative hazards."""
        X = self._X(X)
        cat = self.categorical
        return np.stack([t.leaf_chf[t.apply(X, cat)] for t in self.trees])

    def chf_matrix(self, X) -> np.ndarray:
        X = self._X(X)
        cat = self.categorical
        total = np.zeros((X.shape[0], len(self.grid)))
        for t in self.trees:
            total += t.leaf_chf[t.apply(X, cat)]
        return total / self.n_trees

    def survival_matrix(self, X) -> np.ndarray:
        """Ensemble survival: the mean of the trees' leaf product-limit curves."""
        X = self._X(X)
        cat = self.categorical
        total = np.zeros((X.shape[0], len(self.grid)))
        for t in self.trees:
            total += t.leaf_surv[t.apply(X, cat)]
        return total / self.n_trees

    def mortality(self, X) -> np.ndarray:
        return self.chf_matrix(X).sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "format": "survensemble.rsf",
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "seed": self.config.seed,
            "schema": [c.to_dict() for c in self.schema],
            "grid": self.grid.times.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "Forest":
        if doc.get("format") != "survensemble.rsf":
            raise SurvivalDataError("not a random survival forest document")
        if doc.get("version") != FORMAT_VERSION:
            raise SurvivalDataError(f"unsupported forest format version {doc.get('version')}")
        return cls(
            tuple(SurvTree.from_dict(t) for t in doc["trees"]),
            RsfConfig(**doc["config"]),
            TimeGrid(doc["grid"]),
            tuple(Covariate.from_dict(c) for c in doc["schema"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "Forest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_forest(
    data: SurvDataset,
    config: RsfConfig = RsfConfig(),
    n_jobs: int | None = None,
    debug: bool = False,
) -> Forest:
    """Grow ``config.n_trees`` bootstrap survival trees.

    Each tree draws from its own stream derived from ``(config.seed, tree
    index)``, so the result does not depend on ``n_jobs``. With ``debug`` every
    tree keeps its candidate split evaluations in ``SurvTree.candidates``.
    """
    data.require_events()
    for c in data.schema:
        if c.is_categorical and len(c.levels) > MAX_LEVELS:
            raise SurvivalDataError(f"{c.name!r} has more than {MAX_LEVELS} levels")
    mtry = config.resolved_mtry(data.p)
    grid = TimeGrid(np.unique(data.time[data.event == 1]))
    is_cat = np.array([c.is_categorical for c in data.schema], dtype=bool)
    grower = _Grower(
        np.asarray(data.X), np.asarray(data.time), np.asarray(data.event, dtype=int),
        is_cat, grid.times, config, mtry, debug,
    )
    n_jobs = default_threads() if n_jobs is None else n_jobs
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = tuple(pool.map(grower.grow, range(config.n_trees)))
    else:
        trees = tuple(grower.grow(b) for b in range(config.n_trees))
    return Forest(trees, config, grid, data.schema)


def predict_chf(forest: Forest, x) -> CumHazardCurve:
    x = check_covariates(x, forest.schema)
    if x.ndim != 1:
        raise SurvivalDataError("expected a single covariate vector")
    return CumHazardCurve(forest.grid, forest.chf_matrix(x)[0])


@dataclass(frozen=True, eq=False)
class OobPrediction:
    chf: np.ndarray
    n_oob: np.ndarray
    grid: TimeGrid

    @property
    def missing(self) -> np.ndarray:
        return self.n_oob == 0

    def curve(self, i: int) -> CumHazardCurve | None:
        return None if self.missing[i] else CumHazardCurve(self.grid, self.chf[i])

    @property
    def mortality(self) -> np.ndarray:
        return self.chf.sum(axis=1)


def _oob(forest: Forest, X, randomize=None, rng=None) -> OobPrediction:
    cat = forest.categorical
    n = X.shape[0]
    total = np.zeros((n, len(forest.grid)))
    count = np.zeros(n, dtype=np.int64)
    for t in forest.trees:
        if t.inbag.size != n:
            raise SurvivalDataError("data does not match the forest's training rows")
        oob = np.flatnonzero(t.inbag == 0)
        if oob.size == 0:
            continue
        total[oob] += t.leaf_chf[t.apply(X[oob], cat, rng, randomize)]
        count[oob] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        chf = total / count[:, None]
    chf[count == 0] = np.nan
    return OobPrediction(chf, count, forest.grid)


def oob_predict(forest: Forest, data: SurvDataset) -> OobPrediction:
    """Ensemble CHF per training record using only trees that left it out.

    Records in every bootstrap sample get NaN rows and ``missing`` set.
    """
    return _oob(forest, forest._X(data.X))


def variable_importance(forest: Forest, data: SurvDataset, seed: int | None = None) -> dict[str, float]:
    """Random-daughter importance: OOB error increase when a covariate's splits are randomized.

    Error is one minus the C-index of OOB mortality. Covariates never used in
    a split score exactly 0.
    """
    from .metrics import concordance_index

    X = forest._X(data.X)
    base = _oob(forest, X)
    keep = ~base.missing
    sub = data.subset(np.flatnonzero(keep))

    def error(pred):
        return 1.0 - concordance_index(pred.mortality[keep], sub)

    base_err = error(base)
    used = set()
    for t in forest.trees:
        used.update(t.split_features.tolist())
    seed = forest.config.seed if seed is None else seed
    out = {}
    for v, cov in enumerate(forest.schema):
        if v not in used:
            out[cov.name] = 0.0
            continue
        rng = substream(seed, "vimp", v)
        out[cov.name] = error(_oob(forest, X, randomize=v, rng=rng)) - base_err
    return out
