"""Hierarchical-clustering initialization and BIC selection of K."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from .em import EMConfig, FitResult, run_em
from .errors import DomainError, LcdaError, SelectionFailed
from .stats import ClassStats, MixtureParams, matrix_sqrt_psd

log = logging.getLogger(__name__)


def sqrt_distance_matrix(scatters) -> np.ndarray:
    """Pairwise Frobenius distances between symmetric square roots of PSD matrices."""
    roots = np.stack([matrix_sqrt_psd(s) for s in scatters])
    flat = roots.reshape(roots.shape[0], -1)
    sq = np.einsum("ij,ij->i", flat, flat)
    d2 = sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T
    d = np.sqrt(np.clip(d2, 0.0, None))
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def ward_tree(dist: np.ndarray) -> np.ndarray:
    """Ward agglomeration on a precomputed distance matrix (scipy linkage format)."""
    n = dist.shape[0]
    if n == 1:
        return np.empty((0, 4))
    return linkage(squareform(dist, checks=False), method="ward")


def cut_tree(tree: np.ndarray, n: int, k: int) -> np.ndarray:
    """Apply the first n - k merges and label clusters 0..k-1 by their smallest member."""
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step in range(n - k):
        a, b = int(tree[step, 0]), int(tree[step, 1])
        new = n + step
        parent[find(a)] = new
        parent[find(b)] = new
    roots = [find(i) for i in range(n)]
    relabel: dict[int, int] = {}
    labels = np.empty(n, dtype=int)
    for i, r in enumerate(roots):
        labels[i] = relabel.setdefault(r, len(relabel))
    return labels


def params_from_partition(scatters, counts, labels, k: int) -> MixtureParams:
    """Cluster shares and pooled covariances sum s_i / sum n_i, ridged when singular."""
    scatters = np.asarray(scatters, dtype=float)
    counts = np.asarray(counts, dtype=float)
    n, p, _ = scatters.shape
    weights = np.bincount(labels, minlength=k) / n
    covs = np.empty((k, p, p))
    for c in range(k):
        members = labels == c
        covs[c] = scatters[members].sum(axis=0) / counts[members].sum()
    scale = np.mean([np.trace(c) / p for c in covs])
    for c in range(k):
        w = np.linalg.eigvalsh(covs[c])
        if w.min() <= 1e-12 * max(w.max(), 0.0) or w.max() <= 0:
            base = np.trace(covs[c]) / p
            if base <= 0:
                base = scale if scale > 0 else 1.0
            covs[c] = covs[c] + 1e-8 * base * np.eye(p)
    return MixtureParams(weights, covs)


def init_hierarchical(stats: Sequence[ClassStats], counts=None, k: int = 1) -> MixtureParams:
    """Deterministic starting values from Ward clustering of scatter square roots."""
    n = len(stats)
    if k < 1 or k > n:
        raise DomainError(f"need 1 <= k <= n = {n}, got k={k}")
    scatters = np.stack([s.scatter for s in stats])
    if counts is None:
        counts = [s.count for s in stats]
    labels = init_labels(scatters, k)
    return params_from_partition(scatters, counts, labels, k)


def init_labels(scatters, k: int) -> np.ndarray:
    n = len(scatters)
    if k == n:
        return np.arange(n)
    tree = ward_tree(sqrt_distance_matrix(scatters))
    return cut_tree(tree, n, k)


def bic(fit: FitResult, n: int, p: int, k: int) -> float:
    """m log(n) - 2 loglik with m = (k - 1) + k p (p + 1) / 2 and n the number of classes.

    The n p class means are left out of m: they do not depend on k.
    """
    m = (k - 1) + k * p * (p + 1) / 2
    loglik = fit if isinstance(fit, (int, float)) else fit.loglik
    return m * math.log(n) - 2.0 * float(loglik)


@dataclass
class KRecord:
    k: int
    fit: Optional[FitResult]
    bic: float
    error: str = ""


@dataclass
class KGridResult:
    records: list[KRecord]
    selected_k: int

    @property
    def selected(self) -> KRecord:
        return next(r for r in self.records if r.k == self.selected_k)

    @property
    def fit(self) -> FitResult:
        return self.selected.fit


def select_k(stats: Sequence[ClassStats], counts, k_range, config: EMConfig) -> KGridResult:
    """Fit every K in a contiguous range and keep the BIC minimizer.

    Fits that fail numerically are recorded with infinite BIC.
    """
    ks = list(k_range)
    if not ks:
        raise DomainError("k_range is empty")
    if ks != list(range(ks[0], ks[-1] + 1)):
        raise DomainError("k_range must be a contiguous integer range")
    n = len(stats)
    if ks[0] < 1 or ks[-1] > n:
        raise DomainError(f"k_range must lie in [1, n={n}]")
    p = stats[0].scatter.shape[0]
    if counts is None:
        counts = [s.count for s in stats]
    records = []
    for k in ks:
        cfg = config.with_k(k)
        try:
            init = init_hierarchical(stats, counts, k)
            fit = run_em(stats, init, cfg)
            score = bic(fit, n, p, k)
            fit.bic = score
            records.append(KRecord(k, fit, score))
        except LcdaError as exc:
            log.warning("K=%d failed: %s", k, exc)
            records.append(KRecord(k, None, math.inf, str(exc)))
    finite = [r for r in records if math.isfinite(r.bic)]
    if not finite:
        raise SelectionFailed("every K in the grid failed: " + "; ".join(r.error for r in records))
    best = min(finite, key=lambda r: (r.bic, r.k))
    return KGridResult(records, best.k)
