"""Slow, loop-based reference implementations used as test oracles."""

import math

import numpy as np


def km(time, event):
    """Product-limit estimate at each distinct observed time."""
    out = {}
    s = 1.0
    for t in sorted(set(time)):
        at_risk = sum(1 for z in time if z >= t)
        deaths = sum(1 for z, d in zip(time, event) if z == t and d == 1)
        s *= 1.0 - deaths / at_risk
        out[t] = s
    return out


def reverse_km_left(time, event, t):
    """Censoring survival just before ``t``; events precede censorings at ties."""
    g = 1.0
    for u in sorted(set(time)):
        if u >= t:
            break
        cens = sum(1 for z, d in zip(time, event) if z == u and d == 0)
        at_risk = sum(1 for z in time if z >= u) - sum(1 for z, d in zip(time, event) if z == u and d == 1)
        if cens:
            g *= 1.0 - cens / at_risk
    return g


def reverse_km(time, event, t):
    g = 1.0
    for u in sorted(set(time)):
        if u > t:
            break
        cens = sum(1 for z, d in zip(time, event) if z == u and d == 0)
        at_risk = sum(1 for z in time if z >= u) - sum(1 for z, d in zip(time, event) if z == u and d == 1)
        if cens:
            g *= 1.0 - cens / at_risk
    return g


def cindex(scores, time, event):
    """Pair-by-pair concordance with the tied-time rules."""
    num = 0.0
    den = 0
    n = len(time)
    for i in range(n):
        for j in range(i + 1, n):
            zi, zj, di, dj, si, sj = time[i], time[j], event[i], event[j], scores[i], scores[j]
            if zi != zj:
                if zi > zj:
                    zi, zj, di, dj, si, sj = zj, zi, dj, di, sj, si
                if not di:
                    continue
                den += 1
                num += 1.0 if si > sj else 0.5 if si == sj else 0.0
            else:
                if not di and not dj:
                    continue
                den += 1
                if di and dj:
                    num += 1.0 if si == sj else 0.5
                else:
                    s_dead, s_cens = (si, sj) if di else (sj, si)
                    num += 1.0 if s_cens > s_dead else 0.5
    return num / den


def auc_uncensored(scores, time, event, t):
    """Mann-Whitney area for cases (event by t) against controls (alive after t)."""
    cases = [s for s, z, d in zip(scores, time, event) if z <= t and d == 1]
    ctrls = [s for s, z in zip(scores, time) if z > t]
    tot = 0.0
    for a in cases:
        for b in ctrls:
            tot += 1.0 if a > b else 0.5 if a == b else 0.0
    return tot / (len(cases) * len(ctrls))


def brier(surv_at_t, time, event, t):
    """Term-by-term IPCW Brier score with reverse-KM weights."""
    total = 0.0
    g_t = reverse_km(time, event, t)
    for s, z, d in zip(surv_at_t, time, event):
        if z > t:
            total += (1.0 - s) ** 2 / g_t
        elif d == 1:
            g = reverse_km_left(time, event, z)
            if g > 0:
                total += s**2 / g
    return total / len(time)


def logrank(left, right):
    """Standardized two-sample log-rank statistic from explicit loops."""
    pooled = [(z, d, 0) for z, d in left] + [(z, d, 1) for z, d in right]
    num = 0.0
    var = 0.0
    for t in sorted({z for z, d, _ in pooled if d}):
        r = sum(1 for z, _, _ in pooled if z >= t)
        rl = sum(1 for z, _, g in pooled if z >= t and g == 0)
        d = sum(1 for z, e, _ in pooled if z == t and e)
        dl = sum(1 for z, e, g in pooled if z == t and e and g == 0)
        num += dl - rl * d / r
        if r > 1:
            var += rl * (r - rl) * d * (r - d) / (r * r * (r - 1))
    return abs(num) / math.sqrt(var) if var > 0 else 0.0


def depth_height_cdf(alpha, zeta, h_max):
    """P(tree height <= h) for h = 0..h_max under the depth-dependent split prior."""

    def q(d, h):
        p = alpha * (1.0 + d) ** (-zeta)
        if h == 0:
            return 1.0 - p
        return (1.0 - p) + p * q(d + 1, h - 1) ** 2

    return np.array([q(0, h) for h in range(h_max + 1)])
