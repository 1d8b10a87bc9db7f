"""Data model, sufficient statistics and log-density kernels.

Everything here works in log space. Traces of the form tr(Sigma^{-1} s) are
computed from a Cholesky factor of Sigma with triangular solves; Sigma is never
inverted explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .errors import DomainError, InvalidClass, NumericalError, RankError

RANK_TOL = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ClassBlock:
    class_id: str
    observations: np.ndarray  # n_i x p


@dataclass
class LabeledDataset:
    """Per-class observation matrices sharing one dimension ``p``."""

    p: int
    classes: list[ClassBlock]

    def __post_init__(self):
        if self.p < 1:
            raise DomainError(f"dimension must be positive, got {self.p}")
        seen = set()
        blocks = []
        for block in self.classes:
            obs = np.asarray(block.observations, dtype=float)
            if obs.ndim != 2 or obs.shape[1] != self.p:
                raise DomainError(
                    f"class {block.class_id!r}: expected an n_i x {self.p} matrix, got shape {obs.shape}"
                )
            if block.class_id in seen:
                raise DomainError(f"duplicate class id {block.class_id!r}")
            seen.add(block.class_id)
            blocks.append(ClassBlock(str(block.class_id), obs))
        self.classes = blocks

    @classmethod
    def from_arrays(cls, X, labels) -> "LabeledDataset":
        """Group the rows of ``X`` by label, in order of first appearance."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        labels = [str(lab) for lab in labels]
        if len(labels) != X.shape[0]:
            raise DomainError("labels and rows differ in length")
        order: dict[str, list[int]] = {}
        for row, lab in enumerate(labels):
            order.setdefault(lab, []).append(row)
        blocks = [ClassBlock(lab, X[rows]) for lab, rows in order.items()]
        return cls(X.shape[1], blocks)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def class_ids(self) -> list[str]:
        return [b.class_id for b in self.classes]

    @property
    def counts(self) -> np.ndarray:
        return np.array([b.observations.shape[0] for b in self.classes], dtype=int)

    def without(self, class_index: int, obs_index: int) -> "LabeledDataset":
        """Copy of the dataset with one observation removed."""
        blocks = list(self.classes)
        block = blocks[class_index]
        blocks[class_index] = ClassBlock(block.class_id, np.delete(block.observations, obs_index, axis=0))
        return LabeledDataset(self.p, blocks)


@dataclass(frozen=True)
class ClassStats:
    """Sufficient statistics of one class.

    ``scatter`` is the sum of outer products about the class sample mean,
    i.e. (n_i - 1) times the sample covariance. ``log_det`` is the sum of the
    logs of the eigenvalues counted by ``rank``.
    """

    mean: np.ndarray
    scatter: np.ndarray
    count: int
    rank: int
    log_det: float = 0.0
    class_id: str = ""


@dataclass
class MixtureParams:
    """Mixture weights and latent covariance matrices (K x p x p)."""

    weights: np.ndarray
    covariances: np.ndarray
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.covariances = np.asarray(self.covariances, dtype=float)
        if self.covariances.ndim == 2:
            self.covariances = self.covariances[None]
        if self.covariances.shape[0] != self.weights.size:
            raise DomainError("weights and covariances disagree on K")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must be nonnegative and sum to 1, got {self.weights}")

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def p(self) -> int:
        return self.covariances.shape[1]

    def permuted(self, order) -> "MixtureParams":
        order = np.asarray(order)
        return MixtureParams(self.weights[order], self.covariances[order])


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _eigvalsh(m: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc


def _relative_rank(eigvals: np.ndarray, rank_tol: float) -> tuple[int, float]:
    lam_max = float(eigvals.max()) if eigvals.size else 0.0
    if lam_max <= 0.0:
        return 0, 0.0
    kept = eigvals[eigvals > rank_tol * lam_max]
    return int(kept.size), float(np.log(kept).sum())


def compute_class_stats(dataset: LabeledDataset, rank_tol: float = RANK_TOL) -> list[ClassStats]:
    """Sample mean, scatter matrix, count and numerical rank of every class."""
    out = []
    for block in dataset.classes:
        x = block.observations
        n_i = x.shape[0]
        if n_i < 2:
            raise InvalidClass(block.class_id)
        mean = x.mean(axis=0)
        centered = x - mean
        scatter = _symmetrize(centered.T @ centered)
        rank, log_det = _relative_rank(_eigvalsh(scatter), rank_tol)
        out.append(ClassStats(mean, scatter, n_i, rank, log_det, block.class_id))
    return out


def log_multivariate_gamma(p: int, x: float) -> float:
    """log Gamma_p(x) for x > (p - 1) / 2."""
    if p < 1:
        raise DomainError(f"dimension must be positive, got {p}")
    if not x > (p - 1) / 2.0:
        raise DomainError(f"log_multivariate_gamma needs x > (p-1)/2 = {(p - 1) / 2}, got {x}")
    l = np.arange(p)
    return float(p * (p - 1) / 4.0 * math.log(math.pi) + gammaln(x - l / 2.0).sum())


def log_det_and_rank(m, rank_tol: float = RANK_TOL) -> tuple[float, int]:
    """Pseudo log-determinant and numerical rank of a symmetric PSD matrix.

    Eigenvalues above ``rank_tol * max(lambda_max, 1)`` count toward the rank;
    the returned log-determinant sums the logs of exactly those eigenvalues.
    """
    m = np.asarray(m, dtype=float)
    scale = max(np.abs(m).max(), 1.0) if m.size else 1.0
    if np.abs(m - m.T).max() > 1e-9 * scale:
        raise DomainError("matrix is not symmetric")
    eigvals = _eigvalsh(_symmetrize(m))
    cut = rank_tol * max(float(eigvals.max()), 1.0)
    kept = eigvals[eigvals > cut]
    return float(np.log(kept).sum()), int(kept.size)


def matrix_sqrt_psd(m) -> np.ndarray:
    """Symmetric square root V diag(sqrt(lambda)) V^T, negative eigenvalues clamped to 0."""
    m = _symmetrize(np.asarray(m, dtype=float))
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return _symmetrize(root)


def cholesky(sigma) -> np.ndarray:
    """Lower Cholesky factor; NumericalError if ``sigma`` is not positive definite."""
    sigma = np.asarray(sigma, dtype=float)
    try:
        c = linalg.cholesky(sigma, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"covariance is not positive definite: {exc}") from exc
    if not np.all(np.diag(c) > 0):
        raise NumericalError("covariance is not positive definite")
    return c


def chol_log_det(chol: np.ndarray) -> float:
    return float(2.0 * np.log(np.diag(chol)).sum())


def trace_solve(chol: np.ndarray, scatters: np.ndarray) -> np.ndarray:
    """tr(Sigma^{-1} s_i) for a stack of scatters, given the Cholesky factor of Sigma."""
    scatters = np.asarray(scatters, dtype=float)
    single = scatters.ndim == 2
    if single:
        scatters = scatters[None]
    n, p, _ = scatters.shape
    stacked = np.transpose(scatters, (1, 0, 2)).reshape(p, n * p)
    solved = linalg.cho_solve((chol, True), stacked, check_finite=False).reshape(p, n, p)
    traces = np.einsum("ini->n", solved)
    return traces[0] if single else traces


def normal_kernel(scatters: np.ndarray, dfs: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Sigma-dependent part -(nu_i/2) log|Sigma| - tr(Sigma^{-1} s_i)/2, per class."""
    return -0.5 * np.asarray(dfs, dtype=float) * chol_log_det(chol) - 0.5 * trace_solve(chol, scatters)


def wishart_log_constant(log_det_s, p: int, nu) -> float | np.ndarray:
    """Sigma-free part of the Wishart log density."""
    nu = np.asarray(nu, dtype=float)
    lmg = np.vectorize(lambda v: log_multivariate_gamma(p, v / 2.0), otypes=[float])(nu)
    out = -0.5 * nu * p * math.log(2.0) - lmg + 0.5 * (nu - p - 1.0) * np.asarray(log_det_s)
    return float(out) if out.ndim == 0 else out


def singular_wishart_log_constant(pseudo_log_det_s, rank, p: int, nu) -> float | np.ndarray:
    """Sigma-free part of the singular Wishart log density (rank < p)."""
    nu = np.asarray(nu, dtype=float)
    rank = np.broadcast_to(np.asarray(rank), nu.shape)
    lmg = np.vectorize(lambda a, v: log_multivariate_gamma(int(a), v / 2.0), otypes=[float])(rank, nu)
    out = (
        -0.5 * nu * p * math.log(2.0)
        - lmg
        + 0.5 * (nu * nu - p * nu) * math.log(math.pi)
        + 0.5 * (nu - p - 1.0) * np.asarray(pseudo_log_det_s)
    )
    return float(out) if out.ndim == 0 else out


def normal_log_constant(counts, p: int) -> float | np.ndarray:
    out = -0.5 * np.asarray(counts, dtype=float) * p * LOG_2PI
    return float(out) if out.ndim == 0 else out


def _scatter_of(s) -> np.ndarray:
    return np.asarray(s.scatter if isinstance(s, ClassStats) else s, dtype=float)


def wishart_log_density(s, sigma, nu: float, rank_tol: float = RANK_TOL) -> float:
    """Log density of a full-rank scatter matrix under W_p(Sigma, nu).

    ``s`` may be a matrix or a :class:`ClassStats`. A rank-deficient ``s``
    raises :class:`RankError`; use :func:`singular_wishart_log_density`.
    """
    s = _scatter_of(s)
    p = s.shape[0]
    log_det_s, rank = log_det_and_rank(s, rank_tol)
    if rank < p:
        raise RankError(f"scatter has rank {rank} < p = {p}; use the singular Wishart density")
    if not nu > p - 1:
        raise DomainError(f"Wishart degrees of freedom must exceed p - 1 = {p - 1}, got {nu}")
    chol = cholesky(sigma)
    return wishart_log_constant(log_det_s, p, nu) + float(normal_kernel(s[None], [nu], chol)[0])


def singular_wishart_log_density(s, sigma, nu: float, rank_tol: float = RANK_TOL) -> float:
    """Log density of a rank-deficient scatter matrix under the singular Wishart law.

    The multivariate gamma is taken over the rank ``a`` of ``s`` and the
    determinant term uses the product of its non-zero eigenvalues.
    """
    s = _scatter_of(s)
    p = s.shape[0]
    pseudo, rank = log_det_and_rank(s, rank_tol)
    if rank >= p:
        raise RankError(f"scatter has full rank {p}; use the Wishart density")
    if rank == 0:
        raise RankError("scatter is the zero matrix; no singular Wishart density")
    chol = cholesky(sigma)
    const = singular_wishart_log_constant(pseudo, rank, p, nu)
    return float(const) + float(normal_kernel(s[None], [nu], chol)[0])


def class_log_likelihood(stats: ClassStats, sigma) -> float:
    """Sum of normal log densities of a class's observations about its sample mean."""
    chol = cholesky(sigma)
    p = stats.scatter.shape[0]
    return normal_log_constant(stats.count, p) + float(normal_kernel(stats.scatter[None], [stats.count], chol)[0])


def stack_scatters(stats: Sequence[ClassStats]) -> np.ndarray:
    return np.stack([s.scatter for s in stats])


def counts_of(stats: Sequence[ClassStats]) -> np.ndarray:
    return np.array([s.count for s in stats], dtype=float)
