"""Independent reference computations for the library's numeric claims.

Everything here is written from scratch with ``math`` and plain loops (numpy
only for explicit inverses and determinants in the matrix oracles), so it
shares no code path with ``lcda``. Run as a script to print the frozen values.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# -- scalar and small-matrix formulas -------------------------------------------


def scatter(points):
    """Mean and scatter matrix by explicit outer-product sums."""
    n, p = len(points), len(points[0])
    mean = [sum(pt[j] for pt in points) / n for j in range(p)]
    s = [[0.0] * p for _ in range(p)]
    for pt in points:
        d = [pt[j] - mean[j] for j in range(p)]
        for a in range(p):
            for b in range(p):
                s[a][b] += d[a] * d[b]
    return mean, s


def log_mvgamma(p, x):
    """log of pi^{p(p-1)/4} prod_{j=1..p} Gamma(x + (1 - j)/2)."""
    return p * (p - 1) / 4 * math.log(math.pi) + sum(math.lgamma(x + (1 - j) / 2) for j in range(1, p + 1))


def eig2(m):
    """Eigenvalues of a symmetric 2x2 matrix, ascending, from the characteristic polynomial."""
    (a, b), (_, d) = m
    tr, det = a + d, a * d - b * b
    disc = math.sqrt(max(tr * tr / 4 - det, 0.0))
    return tr / 2 - disc, tr / 2 + disc


def sqrt_2x2_closed_form():
    """Square root of [[2,1],[1,2]]: eigenvectors (1,-1)/sqrt2, (1,1)/sqrt2, eigenvalues 1, 3."""
    r3 = math.sqrt(3.0)
    return [[(1 + r3) / 2, (r3 - 1) / 2], [(r3 - 1) / 2, (1 + r3) / 2]]


def chi2_logpdf(x, k):
    """Log density of chi-squared with k degrees of freedom."""
    return (k / 2 - 1) * math.log(x) - x / 2 - (k / 2) * math.log(2) - math.lgamma(k / 2)


def wishart_logpdf(s, sigma, nu):
    """Full-rank Wishart log density with explicit inverse and determinants."""
    s, sigma = np.asarray(s, float), np.asarray(sigma, float)
    p = s.shape[0]
    inv = np.linalg.inv(sigma)
    return (
        (nu - p - 1) / 2 * math.log(np.linalg.det(s))
        - float(np.trace(inv @ s)) / 2
        - nu * p / 2 * math.log(2)
        - nu / 2 * math.log(np.linalg.det(sigma))
        - log_mvgamma(p, nu / 2)
    )


def singular_wishart_logpdf(s, sigma, nu, rank):
    """Singular Wishart log density: multivariate gamma over the rank, pseudo-determinant of s."""
    s, sigma = np.asarray(s, float), np.asarray(sigma, float)
    p = s.shape[0]
    nonzero = sorted(np.linalg.eigvalsh(s))[-rank:]
    pseudo = sum(math.log(v) for v in nonzero)
    return (
        (nu * nu - p * nu) / 2 * math.log(math.pi)
        - nu * p / 2 * math.log(2)
        - log_mvgamma(rank, nu / 2)
        - nu / 2 * math.log(np.linalg.det(sigma))
        + (nu - p - 1) / 2 * pseudo
        - float(np.trace(np.linalg.inv(sigma) @ s)) / 2
    )


def normal_logpdf(x, mu, sigma):
    """Multivariate normal log density from the explicit quadratic form."""
    x, mu, sigma = np.asarray(x, float), np.asarray(mu, float), np.asarray(sigma, float)
    p = x.shape[0]
    d = x - mu
    return -0.5 * (p * math.log(2 * math.pi) + math.log(np.linalg.det(sigma)) + float(d @ np.linalg.inv(sigma) @ d))


def pointwise_class_loglik(points, sigma):
    """Sum of normal log densities of each observation about the class sample mean."""
    mean, _ = scatter(points)
    return sum(normal_logpdf(pt, mean, sigma) for pt in points)


def scalar_responsibilities(s_vals, n_vals, variances, weights):
    """p = 1 normal-variant responsibilities written out term by term."""
    out = []
    for s, n in zip(s_vals, n_vals):
        terms = [
            w * (2 * math.pi * v) ** (-n / 2) * math.exp(-s / (2 * v))
            for w, v in zip(weights, variances)
        ]
        total = sum(terms)
        out.append([t / total for t in terms])
    return out


def adjustment_factor(tau_col, counts):
    num = sum(t * n for t, n in zip(tau_col, counts))
    den = sum(t * (n - 1) for t, n in zip(tau_col, counts))
    return num / den


def lcda_scalar_scores(y, means, variances, tau):
    """p = 1 class scores log sum_k tau_ik phi(y; mu_i, sigma_k^2)."""
    scores = []
    for mu, row in zip(means, tau):
        total = sum(
            t * math.exp(-((y - mu) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v) for t, v in zip(row, variances)
        )
        scores.append(math.log(total))
    return scores


# -- clustering -----------------------------------------------------------------


def comb2(x):
    return x * (x - 1) // 2


def ari(a, b):
    """Adjusted Rand index from the contingency table."""
    la, lb = sorted(set(a)), sorted(set(b))
    table = [[sum(1 for x, y in zip(a, b) if x == u and y == v) for v in lb] for u in la]
    index = sum(comb2(c) for row in table for c in row)
    rows = sum(comb2(sum(row)) for row in table)
    cols = sum(comb2(sum(row[j] for row in table)) for j in range(len(lb)))
    expected = rows * cols / comb2(len(a))
    maximum = (rows + cols) / 2
    return (index - expected) / (maximum - expected)


def ward_lance_williams(dist):
    """Naive Ward agglomeration; returns the merge list as (members_a, members_b, height).

    Works on squared distances with the Lance-Williams update; ties go to the
    pair with the smallest (min member, max member) indices.
    """
    n = len(dist)
    clusters = {i: [i] for i in range(n)}
    d2 = {(i, j): dist[i][j] ** 2 for i in range(n) for j in range(n) if i < j}
    merges = []
    next_id = n
    while len(clusters) > 1:
        key = min(d2, key=lambda ij: (round(d2[ij], 12), min(clusters[ij[0]]), min(clusters[ij[1]])))
        i, j = key
        h = math.sqrt(max(d2[key], 0.0))
        ni, nj = len(clusters[i]), len(clusters[j])
        merged = clusters[i] + clusters[j]
        new_d = {}
        for m in clusters:
            if m in (i, j):
                continue
            nm = len(clusters[m])
            dim = d2[(min(i, m), max(i, m))]
            djm = d2[(min(j, m), max(j, m))]
            new_d[m] = ((ni + nm) * dim + (nj + nm) * djm - nm * d2[key]) / (ni + nj + nm)
        merges.append((sorted(clusters[i]), sorted(clusters[j]), h))
        del clusters[i], clusters[j]
        d2 = {k: v for k, v in d2.items() if i not in k and j not in k}
        for m, v in new_d.items():
            d2[(m, next_id)] = v
        clusters[next_id] = merged
        next_id += 1
    return merges


def partition_after(merges, n, k):
    """Clusters after the first n - k merges, as sorted member lists ordered by smallest member."""
    groups = {i: {i} for i in range(n)}
    for a, b, _ in merges[: n - k]:
        ra = next(key for key, g in groups.items() if a[0] in g)
        rb = next(key for key, g in groups.items() if b[0] in g)
        groups[ra] |= groups.pop(rb)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def pooled_by_group(scatters, counts, groups):
    return [sum(scatters[i] for i in g) / sum(counts[i] for i in g) for g in groups]


def odds_ratio(a1, a2):
    return (a1 / (1 - a1)) / (a2 / (1 - a2))


def best_matching(cost):
    """Brute-force minimum-cost assignment over all permutations."""
    k = len(cost)
    return min(itertools.permutations(range(k)), key=lambda perm: sum(cost[j][perm[j]] for j in range(k)))


# -- frozen values --------------------------------------------------------------


def frozen_values() -> dict[str, float]:
    _, s3 = scatter([(1, 0), (0, 1), (-1, -1)])
    lam = eig2([[2, 1], [1, 2]])
    merges = ward_lance_williams([[abs(math.sqrt(a) - math.sqrt(b)) for b in (1, 1.1, 9, 9.2)] for a in (1, 1.1, 9, 9.2)])
    groups = partition_after(merges, 4, 2)
    pooled = pooled_by_group([1, 1.1, 9, 9.2], [2, 2, 2, 2], groups)
    return {
        "scatter_3pt_00": s3[0][0],
        "scatter_3pt_01": s3[0][1],
        "log_mvgamma_2_1.5": log_mvgamma(2, 1.5),
        "log_mvgamma_3_2": log_mvgamma(3, 2),
        "log_det_2112": math.log(lam[0]) + math.log(lam[1]),
        "wishart_p1_s2_nu2": chi2_logpdf(2.0, 2),
        "wishart_p1_s1_nu1": chi2_logpdf(1.0, 1),
        "singular_wishart_p2_a1": singular_wishart_logpdf([[1, 0], [0, 0]], np.eye(2), 1, 1),
        "ari_1122_1212": ari([1, 1, 2, 2], [1, 2, 1, 2]),
        "init_sigma_1": pooled[0],
        "init_sigma_2": pooled[1],
        "odds_ratio_0.8_0.5": odds_ratio(0.8, 0.5),
        "bic_k1_p1_n_e2": 1 * math.log(math.e**2) - 0.0,
    }


if __name__ == "__main__":
    for key, value in frozen_values().items():
        print(f"{key:28s} {value!r}")
