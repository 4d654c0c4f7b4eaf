"""Independent slow reference implementations used as test oracles.

None of these import the code they check.
"""
import math

import numpy as np


def local_cost(a, b, i, j):
    s = 0.0
    for d in range(a.shape[1]):
        diff = a[i, d] - b[j, d]
        s += diff * diff
    return math.sqrt(s)


def brute_force_dtw(a, b):
    """Minimum accumulated cost over every monotone warping path, by DFS."""
    n, m = a.shape[0], b.shape[0]
    cost = [[local_cost(a, b, i, j) for j in range(m)] for i in range(n)]
    best = math.inf
    stack = [(0, 0, cost[0][0])]
    while stack:
        i, j, total = stack.pop()
        if i == n - 1 and j == m - 1:
            best = min(best, total)
            continue
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            ni, nj = i + di, j + dj
            if ni < n and nj < m:
                stack.append((ni, nj, total + cost[ni][nj]))
    return best


def nadaraya_watson_direct(x, h):
    """Untruncated evaluation of the Gaussian-kernel smoother, one point at a time."""
    x = [float(v) for v in x]
    out = []
    for t in range(len(x)):
        num = den = 0.0
        for s in range(len(x)):
            w = math.exp(-0.5 * ((t - s) / h) ** 2)
            num += w * x[s]
            den += w
        out.append(num / den)
    return out


def wilder_rsi(close, period):
    """Straight-line Wilder recursion over plain Python floats."""
    gains, losses = [], []
    for prev, cur in zip(close, close[1:]):
        ch = cur - prev
        gains.append(max(ch, 0.0))
        losses.append(max(-ch, 0.0))
    ag = sum(gains[:period]) / period
    al = sum(losses[:period]) / period
    out = [None] * period

    def value(g, l):
        if l == 0:
            return 50.0 if g == 0 else 100.0
        return 100 - 100 / (1 + g / l)

    out.append(value(ag, al))
    for g, l in zip(gains[period:], losses[period:]):
        ag = (ag * (period - 1) + g) / period
        al = (al * (period - 1) + l) / period
        out.append(value(ag, al))
    return out


def kolmogorov_sf(x, terms=1000):
    """Q_KS(x) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)."""
    if x <= 0:
        return 1.0
    s = 0.0
    for k in range(1, terms + 1):
        s += (-1) ** (k - 1) * math.exp(-2 * k * k * x * x)
    return min(1.0, max(0.0, 2 * s))


def ks_binned_oracle(a, b, bins=100):
    """CDF sweep over the bin edges k/bins of [0, 1], then the asymptotic p-value."""
    def cdf(sample, edge_k):
        # a value lands in bin floor(v * bins), clipped into [0, bins - 1]
        c = 0
        for v in sample:
            idx = min(max(int(math.floor(v * bins)), 0), bins - 1)
            if idx < edge_k:
                c += 1
        return c / len(sample)

    d = 0.0
    for k in range(1, bins + 1):
        d = max(d, abs(cdf(a, k) - cdf(b, k)))
    n_eff = len(a) * len(b) / (len(a) + len(b))
    return d, kolmogorov_sf(math.sqrt(n_eff) * d)


def warping_matrix_product(path, companions, ref_len):
    """Explicit row-normalised 0/1 warping matrix times the companion matrix."""
    W = np.zeros((ref_len, companions.shape[0]))
    for i, j in path:
        W[j, i] = 1.0
    W = W / W.sum(axis=1, keepdims=True)
    return W @ companions
