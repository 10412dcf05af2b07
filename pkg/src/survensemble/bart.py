"""Discrete-time probit BART for right-censored survival data.

Subjects are expanded into one binary row per grid time they were at risk
for. A sum-of-trees model over (time, covariates) drives the probit event
probability, fitted by Bayesian backfitting with truncated-normal latent
variables (unit error variance).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.special import ndtr, ndtri

from ._random import substream
from .curves import SurvivalCurve, TimeGrid, time_grid
from .data import Covariate, SurvDataset, SurvivalDataError, check_covariates, encode

__all__ = [
    "BartPriors",
    "BartConfig",
    "ExpandedData",
    "BartPosterior",
    "expand_survival_data",
    "node_nonterminal_prob",
    "sample_latents",
    "leaf_conditional",
    "draw_leaf_values",
    "BartState",
    "init_state",
    "mcmc_step",
    "fit_bart_survival",
    "posterior_event_prob",
    "survival_curve",
    "hazard_rate",
    "partial_dependence_survival",
    "variable_usage",
]

FORMAT_VERSION = 1
MOVE_PROBS = (0.25, 0.25, 0.5)  # grow, prune, change
MOVES = ("grow", "prune", "change")


@dataclass(frozen=True)
class BartPriors:
    alpha: float = 0.95
    zeta: float = 2.0
    m: int = 50
    mu0: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise SurvivalDataError("alpha must lie in (0, 1)")
        if self.zeta < 0:
            raise SurvivalDataError("zeta must be >= 0")
        if self.m < 1:
            raise SurvivalDataError("m must be >= 1")

    @property
    def leaf_sd(self) -> float:
        return math.sqrt(2.25 / self.m)


@dataclass(frozen=True)
class BartConfig:
    priors: BartPriors = field(default_factory=BartPriors)
    n_burn: int = 5000
    n_keep: int = 10000
    thin: int = 1
    seed: int = 0
    max_grid_points: int | None = 100

    def __post_init__(self):
        if self.n_burn < 0 or self.n_keep < 1 or self.thin < 1:
            raise SurvivalDataError("need n_burn >= 0, n_keep >= 1 and thin >= 1")


def node_nonterminal_prob(depth: int, priors: BartPriors = BartPriors()) -> float:
    """Prior probability that a node at ``depth`` splits: alpha * (1 + depth) ** -zeta."""
    if depth < 0:
        raise SurvivalDataError("depth must be >= 0")
    return priors.alpha * (1.0 + depth) ** (-priors.zeta)


# -- data expansion ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExpandedData:
    """One row per (subject, grid time at risk).

    ``X`` holds the joined design: column 0 is the grid time, the remaining
    columns are the one-hot encoded covariates of the subject.
    """

    subject: np.ndarray
    grid_index: np.ndarray
    y: np.ndarray
    X: np.ndarray
    grid: TimeGrid
    columns: tuple[str, ...]

    @property
    def time(self) -> np.ndarray:
        return self.X[:, 0]

    def __len__(self) -> int:
        return self.y.size


def _row_counts(data: SurvDataset, grid: TimeGrid) -> np.ndarray:
    # events fall into the first grid time >= z; censored subjects are only
    # known to survive the grid times <= z (identical when z is on the grid)
    n_le = np.searchsorted(grid.times, data.time, side="right")
    n_lt = np.searchsorted(grid.times, data.time, side="left")
    return np.where(data.event == 1, n_lt + 1, n_le)


def expand_survival_data(data: SurvDataset, grid: TimeGrid) -> ExpandedData:
    """Build the binary event indicators y_ij for every subject and grid time at risk."""
    if len(grid) == 0:
        raise SurvivalDataError("empty time grid")
    counts = _row_counts(data, grid)
    if np.any(counts > len(grid)):
        raise SurvivalDataError("an event occurs after the last grid time")
    subject = np.repeat(np.arange(data.n), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    gidx = np.arange(subject.size) - np.repeat(starts, counts)
    y = np.zeros(subject.size, dtype=np.int8)
    last = starts + counts - 1
    has = counts > 0
    y[last[has]] = data.event[has]
    Z, names, _ = encode(data.X, data.schema, scheme="onehot")
    X = np.column_stack([grid.times[gidx], Z[subject]]) if subject.size else np.zeros((0, 1 + Z.shape[1]))
    return ExpandedData(subject, gidx, y, X, grid, ("time", *names))


# -- latent variables and leaves --------------------------------------------


def sample_latents(y, mu, rng: np.random.Generator) -> np.ndarray:
    """Draw N(mu, 1) truncated to (0, inf) where y = 1 and to (-inf, 0) where y = 0."""
    y = np.asarray(y)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), y.shape)
    u = rng.random(y.shape)
    pos = y == 1
    # standardized bound; sample through the smaller tail for stability
    a = np.where(pos, -mu, mu)
    tail = ndtr(-a)
    z = -ndtri(u * tail)
    # far tail: exponential approximation of the truncated normal
    far = tail < 1e-300
    if np.any(far):
        af = a[far]
        z[far] = af + rng.exponential(size=af.size) / af
    z = np.maximum(z, a)
    return np.where(pos, mu + z, mu - z)


def leaf_conditional(residual_sum, n, leaf_sd: float):
    """Mean and variance of a leaf value given its residuals (unit noise variance)."""
    prec = np.asarray(n, dtype=float) + 1.0 / leaf_sd**2
    return np.asarray(residual_sum, dtype=float) / prec, 1.0 / prec


def draw_leaf_values(residual_sum, n, leaf_sd: float, rng: np.random.Generator) -> np.ndarray:
    mean, var = leaf_conditional(residual_sum, n, leaf_sd)
    return mean + np.sqrt(var) * rng.standard_normal(np.shape(mean))


# -- trees ------------------------------------------------------------------
#
# Each tree lives in fixed-capacity node arrays (one row per tree). A slot is
# a leaf when var == LEAF and unused when var == FREE. ``node_of[j, i]`` is
# the leaf of tree j holding expanded row i. Split rules are (variable, cut
# index) pairs and ``lo/hi`` bound the cut indices still available at a node.

LEAF = -1
FREE = -2
DEFAULT_CAPACITY = 256


@numba.njit(cache=True)
def _lm(n, s, tau2):
    # log integrated likelihood of a leaf, up to terms shared by all trees
    return -0.5 * np.log1p(n * tau2) + 0.5 * tau2 * s * s / (1.0 + n * tau2)


@numba.njit(cache=True)
def _psplit(depth, ok, alpha, zeta):
    if not ok:
        return 0.0
    return alpha * (1.0 + depth) ** (-zeta)


@numba.njit(cache=True)
def _n_avail(lo, hi):
    c = 0
    for v in range(lo.size):
        if hi[v] > lo[v]:
            c += 1
    return c


@numba.njit(cache=True)
def _pick_avail(lo, hi, rank):
    for v in range(lo.size):
        if hi[v] > lo[v]:
            if rank == 0:
                return v
            rank -= 1
    return -1


@numba.njit(cache=True)
def _rule_logprior(depth, lo, hi, v, alpha, zeta):
    return np.log(_psplit(depth, True, alpha, zeta)) - np.log(_n_avail(lo, hi)) - np.log(hi[v] - lo[v])


@numba.njit(cache=True)
def _grow(var, cut, left, right, parent, depth, lo, hi, node_of, X, cutvals, r, u, alpha, zeta, tau2):
    K = var.size
    leaves = np.empty(K, np.int64)
    nleaf = 0
    nfree = 0
    nog = 0
    for k in range(K):
        if var[k] == LEAF:
            leaves[nleaf] = k
            nleaf += 1
        elif var[k] == FREE:
            nfree += 1
        elif var[left[k]] == LEAF and var[right[k]] == LEAF:
            nog += 1
    if nfree < 2:
        return False
    k = leaves[int(u[1] * nleaf)]
    na = _n_avail(lo[k], hi[k])
    if na == 0:
        return False
    v = _pick_avail(lo[k], hi[k], int(u[2] * na))
    c = lo[k, v] + int(u[3] * (hi[k, v] - lo[k, v]))
    thr = cutvals[v, c]
    nl = 0
    nr = 0
    sl = 0.0
    sr = 0.0
    for i in range(node_of.size):
        if node_of[i] == k:
            if X[i, v] <= thr:
                nl += 1
                sl += r[i]
            else:
                nr += 1
                sr += r[i]
    d = depth[k]
    p = _psplit(d, True, alpha, zeta)
    pl = _psplit(d + 1, na > 1 or c > lo[k, v], alpha, zeta)
    pr = _psplit(d + 1, na > 1 or hi[k, v] > c + 1, alpha, zeta)
    par = parent[k]
    par_nog = par >= 0 and var[left[par]] == LEAF and var[right[par]] == LEAF
    w_new = nog + 1 - (1 if par_nog else 0)
    logr = (
        np.log(p) + np.log1p(-pl) + np.log1p(-pr) - np.log1p(-p)
        + np.log(nleaf) - np.log(w_new)
        + _lm(nl, sl, tau2) + _lm(nr, sr, tau2) - _lm(nl + nr, sl + sr, tau2)
    )
    if np.log(u[4]) >= logr:
        return False
    a = -1
    b = -1
    for s in range(K):
        if var[s] == FREE:
            if a < 0:
                a = s
            else:
                b = s
                break
    for s, child in enumerate((a, b)):
        var[child] = LEAF
        cut[child] = -1
        left[child] = -1
        right[child] = -1
        parent[child] = k
        depth[child] = d + 1
        lo[child] = lo[k]
        hi[child] = hi[k]
    hi[a, v] = c
    lo[b, v] = c + 1
    var[k] = v
    cut[k] = c
    left[k] = a
    right[k] = b
    for i in range(node_of.size):
        if node_of[i] == k:
            node_of[i] = a if X[i, v] <= thr else b
    return True


@numba.njit(cache=True)
def _prune(var, left, right, depth, lo, hi, node_of, r, u, alpha, zeta, tau2):
    K = var.size
    nogs = np.empty(K, np.int64)
    nn = 0
    nleaf = 0
    for k in range(K):
        if var[k] == LEAF:
            nleaf += 1
        elif var[k] >= 0 and var[left[k]] == LEAF and var[right[k]] == LEAF:
            nogs[nn] = k
            nn += 1
    if nn == 0:
        return False
    k = nogs[int(u[1] * nn)]
    a = left[k]
    b = right[k]
    nl = 0
    nr = 0
    sl = 0.0
    sr = 0.0
    for i in range(node_of.size):
        if node_of[i] == a:
            nl += 1
            sl += r[i]
        elif node_of[i] == b:
            nr += 1
            sr += r[i]
    d = depth[k]
    p = _psplit(d, True, alpha, zeta)
    pl = _psplit(d + 1, _n_avail(lo[a], hi[a]) > 0, alpha, zeta)
    pr = _psplit(d + 1, _n_avail(lo[b], hi[b]) > 0, alpha, zeta)
    logr = -(
        np.log(p) + np.log1p(-pl) + np.log1p(-pr) - np.log1p(-p)
        + np.log(nleaf - 1) - np.log(nn)
        + _lm(nl, sl, tau2) + _lm(nr, sr, tau2) - _lm(nl + nr, sl + sr, tau2)
    )
    if np.log(u[4]) >= logr:
        return False
    for i in range(node_of.size):
        if node_of[i] == a or node_of[i] == b:
            node_of[i] = k
    var[k] = LEAF
    left[k] = -1
    right[k] = -1
    var[a] = FREE
    var[b] = FREE
    return True


@numba.njit(cache=True)
def _route(var, cut, left, right, x, cutvals, start, ov_node, ov_var, ov_cut):
    k = start
    while var[k] >= 0:
        v = var[k]
        c = cut[k]
        if k == ov_node:
            v = ov_var
            c = ov_cut
        k = left[k] if x[v] <= cutvals[v, c] else right[k]
    return k


@numba.njit(cache=True)
def _change(var, cut, left, right, depth, lo, hi, node_of, X, cutvals, r, u, alpha, zeta, tau2):
    K = var.size
    inner = np.empty(K, np.int64)
    ni = 0
    for k in range(K):
        if var[k] >= 0:
            inner[ni] = k
            ni += 1
    if ni == 0:
        return False
    k = inner[int(u[1] * ni)]
    na = _n_avail(lo[k], hi[k])
    v = _pick_avail(lo[k], hi[k], int(u[2] * na))
    c = lo[k, v] + int(u[3] * (hi[k, v] - lo[k, v]))
    v_old = var[k]
    c_old = cut[k]
    if v == v_old and c == c_old:
        return True
    # subtree in preorder, so parents come before children
    order = np.empty(K, np.int64)
    insub = np.zeros(K, np.bool_)
    stack = np.empty(K, np.int64)
    stack[0] = k
    sp = 1
    ns = 0
    while sp > 0:
        sp -= 1
        s = stack[sp]
        order[ns] = s
        ns += 1
        insub[s] = True
        if var[s] >= 0:
            stack[sp] = right[s]
            stack[sp + 1] = left[s]
            sp += 2
    nlo = lo.copy()
    nhi = hi.copy()
    old_prior = 0.0
    new_prior = 0.0
    for q in range(ns):
        s = order[q]
        d = depth[s]
        if var[s] < 0:
            old_prior += np.log1p(-_psplit(d, _n_avail(lo[s], hi[s]) > 0, alpha, zeta))
            new_prior += np.log1p(-_psplit(d, _n_avail(nlo[s], nhi[s]) > 0, alpha, zeta))
            continue
        vs = var[s]
        cs = cut[s]
        old_prior += _rule_logprior(d, lo[s], hi[s], vs, alpha, zeta)
        if s == k:
            vs = v
            cs = c
        if cs < nlo[s, vs] or cs >= nhi[s, vs]:
            return False
        new_prior += _rule_logprior(d, nlo[s], nhi[s], vs, alpha, zeta)
        a = left[s]
        b = right[s]
        nlo[a] = nlo[s]
        nhi[a] = nhi[s]
        nhi[a, vs] = cs
        nlo[b] = nlo[s]
        nhi[b] = nhi[s]
        nlo[b, vs] = cs + 1
    n_old = np.zeros(K)
    s_old = np.zeros(K)
    n_new = np.zeros(K)
    s_new = np.zeros(K)
    for i in range(node_of.size):
        l = node_of[i]
        if insub[l]:
            n_old[l] += 1
            s_old[l] += r[i]
            l2 = _route(var, cut, left, right, X[i], cutvals, k, k, v, c)
            n_new[l2] += 1
            s_new[l2] += r[i]
    loglik = 0.0
    for q in range(ns):
        s = order[q]
        if var[s] < 0:
            loglik += _lm(n_new[s], s_new[s], tau2) - _lm(n_old[s], s_old[s], tau2)
    logr = new_prior - old_prior + np.log(hi[k, v] - lo[k, v]) - np.log(hi[k, v_old] - lo[k, v_old]) + loglik
    if np.log(u[4]) >= logr:
        return False
    var[k] = v
    cut[k] = c
    for q in range(ns):
        s = order[q]
        lo[s] = nlo[s]
        hi[s] = nhi[s]
    for i in range(node_of.size):
        if insub[node_of[i]]:
            node_of[i] = _route(var, cut, left, right, X[i], cutvals, k, -1, 0, 0)
    return True


@numba.njit(cache=True)
def _update_tree(var, cut, left, right, parent, depth, value, lo, hi, node_of,
                 X, cutvals, latent, mu0, fsum, u, z, alpha, zeta, tau2, proposed, accepted, skip_move):
    N = node_of.size
    K = var.size
    r = np.empty(N)
    fit_old = np.empty(N)
    for i in range(N):
        fit_old[i] = value[node_of[i]]
        r[i] = latent[i] - mu0 - fsum[i] + fit_old[i]
    if not skip_move:
        if u[0] < 0.25:
            move = 0
            ok = _grow(var, cut, left, right, parent, depth, lo, hi, node_of, X, cutvals, r, u, alpha, zeta, tau2)
        elif u[0] < 0.5:
            move = 1
            ok = _prune(var, left, right, depth, lo, hi, node_of, r, u, alpha, zeta, tau2)
        else:
            move = 2
            ok = _change(var, cut, left, right, depth, lo, hi, node_of, X, cutvals, r, u, alpha, zeta, tau2)
        proposed[move] += 1
        if ok:
            accepted[move] += 1
    n = np.zeros(K)
    s = np.zeros(K)
    for i in range(N):
        n[node_of[i]] += 1
        s[node_of[i]] += r[i]
    rank = 0
    for k in range(K):
        if var[k] == LEAF:
            prec = n[k] + 1.0 / tau2
            value[k] = s[k] / prec + z[rank] / np.sqrt(prec)
            rank += 1
    for i in range(N):
        fsum[i] += value[node_of[i]] - fit_old[i]


@numba.njit(cache=True)
def _sweep_trees(var, cut, left, right, parent, depth, value, lo, hi, node_of,
                 X, cutvals, latent, mu0, fsum, U, Z, alpha, zeta, tau2, proposed, accepted):
    for j in range(var.shape[0]):
        _update_tree(var[j], cut[j], left[j], right[j], parent[j], depth[j], value[j], lo[j], hi[j], node_of[j],
                     X, cutvals, latent, mu0, fsum, U[j], Z[j], alpha, zeta, tau2, proposed, accepted, False)


@numba.njit(cache=True)
def _flatten(var, cut, left, right, value, cutvals, ovar, othr, oleft, oright, oval, roots, off):
    m, K = var.shape
    st_node = np.empty(K, np.int64)
    st_parent = np.empty(K, np.int64)
    st_side = np.empty(K, np.int64)
    for j in range(m):
        roots[j] = off
        st_node[0] = 0
        st_parent[0] = -1
        st_side[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            k = st_node[sp]
            ps = st_parent[sp]
            slot = off
            off += 1
            if ps >= 0:
                if st_side[sp] == 0:
                    oleft[ps] = slot
                else:
                    oright[ps] = slot
            v = var[j, k]
            ovar[slot] = v
            oleft[slot] = -1
            oright[slot] = -1
            if v >= 0:
                othr[slot] = cutvals[v, cut[j, k]]
                oval[slot] = 0.0
                st_node[sp] = right[j, k]
                st_parent[sp] = slot
                st_side[sp] = 1
                st_node[sp + 1] = left[j, k]
                st_parent[sp + 1] = slot
                st_side[sp + 1] = 0
                sp += 2
            else:
                othr[slot] = 0.0
                oval[slot] = value[j, k]
    return off


class BartState:
    """Mutable MCMC state: the tree ensemble, latent variables and their fit.

    Tree updates consume uniforms and normals drawn from ``rng``, so a state
    is fully determined by its seed.
    """

    def __init__(self, X, y, cuts, priors: BartPriors, mu0: float, rng, capacity: int = DEFAULT_CAPACITY):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.y = np.asarray(y, dtype=np.int8)
        self.cuts = [np.asarray(c, dtype=float) for c in cuts]
        q = len(self.cuts)
        if self.X.shape[1] != q:
            raise SurvivalDataError("one cutpoint set per design column is required")
        self.cutvals = np.full((q, max([1] + [c.size for c in self.cuts])), np.inf)
        for v, c in enumerate(self.cuts):
            self.cutvals[v, : c.size] = c
        self.priors = priors
        self.tau2 = priors.leaf_sd**2
        self.mu0 = float(mu0)
        self.rng = rng
        m, K, N = priors.m, capacity, self.y.size
        self.var = np.full((m, K), FREE, dtype=np.int64)
        self.var[:, 0] = LEAF
        self.cut = np.full((m, K), -1, dtype=np.int64)
        self.left = np.full((m, K), -1, dtype=np.int64)
        self.right = np.full((m, K), -1, dtype=np.int64)
        self.parent = np.full((m, K), -1, dtype=np.int64)
        self.depth = np.zeros((m, K), dtype=np.int64)
        self.value = np.zeros((m, K))
        self.lo = np.zeros((m, K, q), dtype=np.int64)
        self.hi = np.zeros((m, K, q), dtype=np.int64)
        self.hi[:, 0, :] = [c.size for c in self.cuts]
        self.node_of = np.zeros((m, N), dtype=np.int64)
        self.fsum = np.zeros(N)
        self.latent = np.zeros(N)
        self.proposed = np.zeros(3, dtype=np.int64)
        self.accepted = np.zeros(3, dtype=np.int64)

    @property
    def m(self) -> int:
        return self.var.shape[0]

    @property
    def f(self) -> np.ndarray:
        return self.fsum

    def tree_fit(self, j: int) -> np.ndarray:
        """Values of tree ``j`` at every expanded row."""
        return self.value[j][self.node_of[j]]

    def n_leaves(self, j: int) -> int:
        return int(np.count_nonzero(self.var[j] == LEAF))

    def depths(self) -> np.ndarray:
        """Depth of the deepest leaf of each tree."""
        return np.where(self.var == LEAF, self.depth, 0).max(axis=1)

    def n_nodes(self) -> int:
        return int(np.count_nonzero(self.var != FREE))

    def acceptance(self) -> dict:
        return {
            mv: {
                "proposed": int(self.proposed[k]),
                "accepted": int(self.accepted[k]),
                "rate": float(self.accepted[k] / self.proposed[k]) if self.proposed[k] else 0.0,
            }
            for k, mv in enumerate(MOVES)
        }

    def _normals(self, rows: int) -> np.ndarray:
        width = int(np.count_nonzero(self.var == LEAF, axis=1).max()) + 1
        return self.rng.standard_normal((rows, width))

    def sweep_latents(self) -> None:
        self.latent = sample_latents(self.y, self.mu0 + self.fsum, self.rng)

    def sweep_trees(self) -> None:
        U = self.rng.random((self.m, 5))
        Z = self._normals(self.m)
        _sweep_trees(self.var, self.cut, self.left, self.right, self.parent, self.depth, self.value,
                     self.lo, self.hi, self.node_of, self.X, self.cutvals, self.latent, self.mu0, self.fsum,
                     U, Z, self.priors.alpha, self.priors.zeta, self.tau2, self.proposed, self.accepted)

    def update_tree(self, j: int, move: bool = True) -> None:
        """Backfit tree ``j`` alone; with ``move=False`` only its leaf values are redrawn."""
        u = self.rng.random(5)
        z = self._normals(1)[0]
        _update_tree(self.var[j], self.cut[j], self.left[j], self.right[j], self.parent[j], self.depth[j],
                     self.value[j], self.lo[j], self.hi[j], self.node_of[j], self.X, self.cutvals,
                     self.latent, self.mu0, self.fsum, u, z, self.priors.alpha, self.priors.zeta, self.tau2,
                     self.proposed, self.accepted, not move)

    def sweep(self) -> None:
        self.sweep_latents()
        self.sweep_trees()

    def flatten_into(self, buf: "_DrawBuffer") -> None:
        buf.reserve(self.n_nodes())
        roots = np.empty(self.m, dtype=np.int64)
        buf.size = _flatten(self.var, self.cut, self.left, self.right, self.value, self.cutvals,
                            buf.var, buf.thr, buf.left, buf.right, buf.value, roots, buf.size)
        buf.roots.append(roots)


def _cutpoints(X: np.ndarray) -> list[np.ndarray]:
    return [np.unique(X[:, v])[:-1] for v in range(X.shape[1])]


def default_mu0(y) -> float:
    frac = float(np.mean(y)) if np.size(y) else 0.5
    return float(ndtri(min(max(frac, 1e-6), 1 - 1e-6)))


def init_state(
    expanded: ExpandedData,
    priors: BartPriors,
    rng: np.random.Generator,
    mu0: float | None = None,
    cuts: list[np.ndarray] | None = None,
    capacity: int = DEFAULT_CAPACITY,
) -> BartState:
    """m single-leaf trees at 0; ``mu0`` defaults to the probit of the event fraction.

    Cutpoints default to the distinct values of each design column (the
    largest excluded, since ``x <= max`` sends everything left).
    """
    if mu0 is None:
        mu0 = priors.mu0 if priors.mu0 is not None else default_mu0(expanded.y)
    cuts = _cutpoints(expanded.X) if cuts is None else cuts
    return BartState(expanded.X, expanded.y, cuts, priors, mu0, rng, capacity)


def mcmc_step(state: BartState, expanded: ExpandedData | None = None, priors: BartPriors | None = None, rng=None) -> BartState:
    """One backfitting sweep: redraw latents, then update every tree in turn.

    Each tree proposes GROW, PRUNE or CHANGE (probabilities 0.25/0.25/0.5),
    accepted by Metropolis-Hastings on the leaf-integrated likelihood, and
    then redraws its leaf values from their normal full conditionals. A
    GROW with no splittable covariate, or into a full node pool, is rejected.
    """
    if rng is not None:
        state.rng = rng
    state.sweep()
    return state


class _DrawBuffer:
    def __init__(self, capacity: int = 1 << 16):
        self.var = np.empty(capacity, dtype=np.int64)
        self.thr = np.empty(capacity)
        self.left = np.empty(capacity, dtype=np.int64)
        self.right = np.empty(capacity, dtype=np.int64)
        self.value = np.empty(capacity)
        self.size = 0
        self.roots: list[np.ndarray] = []

    def reserve(self, extra: int) -> None:
        need = self.size + extra
        if need <= self.var.size:
            return
        cap = max(need, 2 * self.var.size)
        for name in ("var", "thr", "left", "right", "value"):
            old = getattr(self, name)
            new = np.empty(cap, dtype=old.dtype)
            new[: self.size] = old[: self.size]
            setattr(self, name, new)

    def arrays(self):
        n = self.size
        return (self.var[:n].copy(), self.thr[:n].copy(), self.left[:n].copy(), self.right[:n].copy(),
                self.value[:n].copy(), np.array(self.roots, dtype=np.int64))



# -- posterior ---------------------------------------------------------------


@numba.njit(cache=True)
def _predict_kernel(P, var, thr, left, right, value, roots, out):
    n_draws, m = roots.shape
    for d in range(n_draws):
        for i in range(P.shape[0]):
            s = 0.0
            for t in range(m):
                k = roots[d, t]
                while var[k] >= 0:
                    if P[i, var[k]] <= thr[k]:
                        k = left[k]
                    else:
                        k = right[k]
                s += value[k]
            out[d, i] = s


@dataclass(frozen=True, eq=False)
class BartPosterior:
    """Retained draws of the sum-of-trees function, stored as flat node arrays.

    ``roots[d, j]`` is the node index of tree ``j`` in draw ``d``; interior
    nodes send ``x[var] <= thr`` to ``left``.
    """

    var: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    grid: TimeGrid
    mu0: float
    columns: tuple[str, ...]
    schema: tuple[Covariate, ...]
    config: BartConfig
    acceptance: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.roots.shape[0]

    def _encode(self, X) -> np.ndarray:
        X = check_covariates(X, self.schema)
        Z, _, _ = encode(np.atleast_2d(X), self.schema, scheme="onehot")
        return Z

    def f_draws(self, points) -> np.ndarray:
        """``(n_draws, n_points)`` sum-of-trees values at joined (time, encoded x) points."""
        P = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        out = np.empty((self.n_draws, P.shape[0]))
        _predict_kernel(P, self.var, self.thr, self.left, self.right, self.value, self.roots, out)
        return out

    def prob_draws(self, X, n_times: int | None = None) -> np.ndarray:
        """``(n_draws, n, n_times)`` event probabilities at the first grid times."""
        Z = self._encode(X)
        J = len(self.grid) if n_times is None else n_times
        t = self.grid.times[:J]
        P = np.column_stack([np.tile(t, Z.shape[0]), np.repeat(Z, J, axis=0)])
        f = self.f_draws(P)
        return ndtr(self.mu0 + f).reshape(self.n_draws, Z.shape[0], J)

    def survival_draws(self, X, n_times: int | None = None) -> np.ndarray:
        return np.cumprod(1.0 - self.prob_draws(X, n_times), axis=2)

    def survival_mean(self, X, times=None, chunk: int = 16) -> np.ndarray:
        """Posterior mean survival ``(n, len(times))`` under the step convention."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        times = self.grid.times if times is None else np.asarray(times, dtype=float)
        idx = self.grid.index_at(times)
        J = int(idx.max()) + 1 if idx.size else 0
        out = np.ones((X.shape[0], times.size))
        if J <= 0:
            return out
        for lo in range(0, X.shape[0], chunk):
            S = self.survival_draws(X[lo : lo + chunk], J).mean(axis=0)
            S = np.concatenate([np.ones((S.shape[0], 1)), S], axis=1)
            out[lo : lo + chunk] = S[:, idx + 1]
        return out

    def split_counts(self) -> np.ndarray:
        """``(n_draws, n_columns)`` number of splitting rules per joined column."""
        n_nodes = self.var.size
        owner = np.empty(n_nodes, dtype=np.int64)
        starts = self.roots[:, 0]
        ends = np.concatenate([starts[1:], [n_nodes]])
        for d, (a, b) in enumerate(zip(starts, ends)):
            owner[a:b] = d
        counts = np.zeros((self.n_draws, len(self.columns)), dtype=np.int64)
        internal = self.var >= 0
        np.add.at(counts, (owner[internal], self.var[internal]), 1)
        return counts

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "format": "survensemble.bart",
            "version": FORMAT_VERSION,
            "config": cfg,
            "seed": self.config.seed,
            "schema": [c.to_dict() for c in self.schema],
            "columns": list(self.columns),
            "grid": self.grid.times.tolist(),
            "mu0": self.mu0,
            "acceptance": self.acceptance,
            "roots": self.roots.tolist(),
            "nodes": {
                "var": self.var.tolist(),
                "thr": self.thr.tolist(),
                "left": self.left.tolist(),
                "right": self.right.tolist(),
                "value": self.value.tolist(),
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "BartPosterior":
        if doc.get("format") != "survensemble.bart":
            raise SurvivalDataError("not a survival BART posterior document")
        if doc.get("version") != FORMAT_VERSION:
            raise SurvivalDataError(f"unsupported posterior format version {doc.get('version')}")
        cfg = dict(doc["config"])
        cfg["priors"] = BartPriors(**cfg["priors"])
        nodes = doc["nodes"]
        return cls(
            np.array(nodes["var"], dtype=np.int64),
            np.array(nodes["thr"], dtype=float),
            np.array(nodes["left"], dtype=np.int64),
            np.array(nodes["right"], dtype=np.int64),
            np.array(nodes["value"], dtype=float),
            np.array(doc["roots"], dtype=np.int64),
            TimeGrid(doc["grid"]),
            float(doc["mu0"]),
            tuple(doc["columns"]),
            tuple(Covariate.from_dict(c) for c in doc["schema"]),
            BartConfig(**cfg),
            doc.get("acceptance", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "BartPosterior":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _run_chain(state: BartState, n_burn, n_keep, thin):
    buf = _DrawBuffer()
    for _ in range(n_burn):
        state.sweep()
    for _ in range(n_keep):
        for _ in range(thin):
            state.sweep()
        state.flatten_into(buf)
    return buf.arrays()


def fit_bart_survival(data: SurvDataset, config: BartConfig = BartConfig()) -> BartPosterior:
    """Run the survival BART sampler and keep every ``thin``-th post-burn-in state."""
    data.require_events()
    grid = time_grid(data, config.max_grid_points)
    expanded = expand_survival_data(data, grid)
    rng = substream(config.seed, "bart")
    state = init_state(expanded, config.priors, rng)
    arrays = _run_chain(state, config.n_burn, config.n_keep, config.thin)
    return BartPosterior(
        *arrays, grid=grid, mu0=state.mu0, columns=expanded.columns, schema=data.schema,
        config=config, acceptance=state.acceptance(),
    )


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def _summary(draws, axis=0) -> PosteriorSummary:
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=axis)
    return PosteriorSummary(draws.mean(axis=axis), lo, hi)


def _grid_index(post: BartPosterior, t: float) -> int:
    j = int(np.searchsorted(post.grid.times, t))
    if j >= len(post.grid) or not np.isclose(post.grid.times[j], t, rtol=1e-12, atol=0):
        raise SurvivalDataError(
            f"t={t} is not a grid time; use survival_curve for off-grid times"
        )
    return j


def posterior_event_prob(post: BartPosterior, t: float, x) -> PosteriorSummary:
    """Posterior mean and equal-tailed 95% interval of the event probability at grid time ``t``."""
    j = _grid_index(post, t)
    Z = post._encode(np.asarray(x, dtype=float).reshape(1, -1))
    f = post.f_draws(np.column_stack([[post.grid.times[j]], Z]))[:, 0]
    return _summary(ndtr(post.mu0 + f))


@dataclass(frozen=True)
class CurveSummary:
    curve: SurvivalCurve
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray | None = None


def _curve_from_draws(grid, S, keep_draws=False) -> CurveSummary:
    summ = _summary(S)
    mean = np.minimum.accumulate(np.clip(summ.mean, 0.0, 1.0))
    return CurveSummary(SurvivalCurve(grid, mean), summ.lower, summ.upper, S if keep_draws else None)


def survival_curve(post: BartPosterior, x, keep_draws: bool = False) -> CurveSummary:
    """Posterior mean survival at x with a pointwise 95% band."""
    x = check_covariates(x, post.schema)
    if x.ndim != 1:
        raise SurvivalDataError("expected a single covariate vector")
    S = post.survival_draws(x.reshape(1, -1))[:, 0, :]
    return _curve_from_draws(post.grid, S, keep_draws)


def hazard_rate(post: BartPosterior, x, j: int) -> float:
    """Posterior mean hazard at the ``j``-th grid time (1-based; ``z_(0) = 0``)."""
    if not 1 <= j <= len(post.grid):
        raise SurvivalDataError(f"grid index {j} out of range 1..{len(post.grid)}")
    t = post.grid.times
    width = t[j - 1] - (t[j - 2] if j > 1 else 0.0)
    p = post.prob_draws(np.asarray(x, dtype=float).reshape(1, -1), j)[:, 0, j - 1]
    return float(np.mean(p / width))


def partial_dependence_survival(post: BartPosterior, x_a: dict, data: SurvDataset, keep_draws: bool = False) -> CurveSummary:
    """Survival averaged over the data's values of the covariates not fixed in ``x_a``."""
    names = [c.name for c in post.schema]
    unknown = set(x_a) - set(names)
    if unknown:
        raise SurvivalDataError(f"unknown covariate(s) {sorted(unknown)}")
    if len(set(x_a)) >= len(names):
        raise SurvivalDataError("x_a covers every covariate; use survival_curve")
    X = np.array(data.X, dtype=float)
    for nm, val in x_a.items():
        j = names.index(nm)
        cov = post.schema[j]
        if cov.is_categorical and not isinstance(val, (int, float, np.integer, np.floating)):
            val = cov.levels.index(val)
        X[:, j] = val
    total = np.zeros((post.n_draws, len(post.grid)))
    for lo in range(0, X.shape[0], 16):
        total += post.survival_draws(X[lo : lo + 16]).sum(axis=1)
    return _curve_from_draws(post.grid, total / X.shape[0], keep_draws)


def variable_usage(post: BartPosterior) -> dict[str, float]:
    """Mean per-draw share of splitting rules using each covariate (time included).

    Indicator columns of a categorical covariate count towards that covariate.
    Draws without any split contribute a uniform share.
    """
    counts = post.split_counts()
    groups = ["time"] + [c.name for c in post.schema]
    block = np.zeros(len(post.columns), dtype=np.int64)
    col = 1
    for g, cov in enumerate(post.schema, start=1):
        width = len(cov.levels) if cov.is_categorical else 1
        block[col : col + width] = g
        col += width
    per = np.zeros((counts.shape[0], len(groups)))
    np.add.at(per.T, block, counts.T)
    tot = per.sum(axis=1, keepdims=True)
    share = np.where(tot > 0, per / np.where(tot > 0, tot, 1), 1.0 / len(groups))
    return dict(zip(groups, share.mean(axis=0).tolist()))
