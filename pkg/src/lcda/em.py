"""EM for mixtures of latent class covariances.

Three likelihoods are supported for the per-class scatter matrices:

* ``wishart``: s_i | Z_i = k ~ W_p(Sigma_k, nu_i), every scatter full rank;
* ``singular_wishart``: the same on rank-deficient scatters;
* ``normal``: the product of normal densities of the observations about their
  class mean, which covers any mixture of ranks (``auto`` resolves to it).

All three share one E-step kernel, -(nu_i/2) log|Sigma_k| - tr(Sigma_k^{-1} s_i)/2,
and differ only in per-class constants and in the degrees of freedom ``nu_i``.
The M-step is a responsibility-weighted pooled scatter,
Sigma_k = sum_i tau_ik s_i / sum_i tau_ik d_i, with d_i = n_i - 1 or n_i.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ComponentCollapse, DomainError, NonFiniteLikelihood, NumericalError, RankError
from .stats import (
    RANK_TOL,
    ClassStats,
    MixtureParams,
    cholesky,
    normal_kernel,
    normal_log_constant,
    singular_wishart_log_constant,
    stack_scatters,
    wishart_log_constant,
)

log = logging.getLogger(__name__)

VARIANTS = ("wishart", "singular_wishart", "normal", "auto")
DF_MODES = ("n_minus_1", "n")
_DEFAULT_DF_MODE = {"wishart": "n_minus_1", "singular_wishart": "n_minus_1", "normal": "n"}


@dataclass(frozen=True)
class EMConfig:
    """Settings for one EM fit.

    ``df_mode=None`` picks the usual convention per variant: ``n`` for
    the normal variant (maximum likelihood) and ``n_minus_1`` for the two
    Wishart variants. For the Wishart variants ``df_mode`` sets both the
    density's degrees of freedom and the M-step denominator, so the fit is a
    proper EM either way. For the normal variant the density always has n_i in
    its exponent; ``n_minus_1`` then only changes the M-step denominator and
    monotonicity of the trace is no longer guaranteed.
    """

    k: int = 1
    epsilon: float = 1e-8
    max_iter: int = 500
    variant: str = "normal"
    df_mode: Optional[str] = None
    ridge: float = 0.0
    seed: int = 0
    rank_tol: float = RANK_TOL

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if self.ridge < 0:
            raise DomainError(f"ridge must be >= 0, got {self.ridge}")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.df_mode is not None and self.df_mode not in DF_MODES:
            raise DomainError(f"unknown df_mode {self.df_mode!r}; choose from {DF_MODES}")

    @property
    def resolved_variant(self) -> str:
        return "normal" if self.variant == "auto" else self.variant

    @property
    def resolved_df_mode(self) -> str:
        return self.df_mode or _DEFAULT_DF_MODE[self.resolved_variant]

    def with_k(self, k: int) -> "EMConfig":
        return replace(self, k=k)


@dataclass
class FitResult:
    params: MixtureParams
    adjusted_covariances: np.ndarray
    tau: np.ndarray
    loglik_trace: list[float]
    n_iter: int
    converged: bool
    bic: Optional[float] = None
    variant: str = "normal"
    df_mode: str = "n"
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def labels(self) -> np.ndarray:
        return map_assign(self.tau)


def _degrees(counts: np.ndarray, df_mode: str) -> np.ndarray:
    return counts - 1.0 if df_mode == "n_minus_1" else counts.copy()


class _Kernel:
    """Per-fit cache of the class constants and degrees of freedom of one variant."""

    def __init__(self, stats: Sequence[ClassStats], config: EMConfig):
        if not stats:
            raise DomainError("no classes to cluster")
        self.variant = config.resolved_variant
        self.df_mode = config.resolved_df_mode
        self.scatters = stack_scatters(stats)
        self.counts = np.array([s.count for s in stats], dtype=float)
        p = self.scatters.shape[1]
        self.p = p
        ranks = np.array([s.rank for s in stats])
        log_dets = np.array([s.log_det for s in stats])
        self.mstep_df = _degrees(self.counts, self.df_mode)

        if self.variant == "normal":
            self.density_df = self.counts
            self.const = normal_log_constant(self.counts, p)
        elif self.variant == "wishart":
            bad = [s.class_id for s in stats if s.rank < p]
            if bad:
                raise RankError("rank-deficient scatter under the Wishart variant (use normal)", bad[0])
            self.density_df = self.mstep_df
            if np.any(self.density_df <= p - 1):
                raise DomainError("Wishart degrees of freedom must exceed p - 1")
            self.const = wishart_log_constant(log_dets, p, self.density_df)
        else:
            bad = [s.class_id for s in stats if s.rank >= p or s.rank == 0]
            if bad:
                raise RankError("scatter rank must be in [1, p) under the singular Wishart variant", bad[0])
            self.density_df = self.mstep_df
            self.const = singular_wishart_log_constant(log_dets, ranks, p, self.density_df)
        self.const = np.asarray(self.const, dtype=float).reshape(-1)

    def log_joint(self, params: MixtureParams) -> np.ndarray:
        """n x K matrix of log pi_k + log f(s_i | Sigma_k)."""
        n, K = self.scatters.shape[0], params.k
        out = np.empty((n, K))
        with np.errstate(divide="ignore"):
            log_w = np.log(params.weights)
        for k in range(K):
            chol = cholesky(params.covariances[k])
            out[:, k] = log_w[k] + self.const + normal_kernel(self.scatters, self.density_df, chol)
        return out

    def e_step(self, params: MixtureParams) -> tuple[np.ndarray, float]:
        ell = self.log_joint(params)
        lse = logsumexp(ell, axis=1)
        tau = np.exp(ell - lse[:, None])
        tau /= tau.sum(axis=1, keepdims=True)
        return tau, float(lse.sum())

    def collapse_tol(self) -> float:
        return max(1.0, self.p / float(self.counts.mean())) * 1e-6

    def m_step(self, tau: np.ndarray, ridge: float, iteration=None) -> MixtureParams:
        mass = tau.sum(axis=0)
        tol = self.collapse_tol()
        for k in np.flatnonzero(mass < tol):
            raise ComponentCollapse(int(k), iteration)
        weights = mass / tau.shape[0]
        weights = weights / weights.sum()
        denom = tau.T @ self.mstep_df
        covs = np.einsum("ik,iab->kab", tau, self.scatters) / denom[:, None, None]
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        if ridge > 0:
            covs = covs + ridge * np.eye(self.p)
        for k in range(covs.shape[0]):
            try:
                cholesky(covs[k])
            except NumericalError:
                raise ComponentCollapse(k, iteration, reason="pooled covariance is singular") from None
        return MixtureParams(weights, covs)


def e_step(stats: Sequence[ClassStats], params: MixtureParams, config: EMConfig) -> tuple[np.ndarray, float]:
    """Responsibilities tau (n x K, rows sum to one) and the mixture log-likelihood.

    The log-likelihood includes every constant of the configured variant, so
    values are comparable only within one variant.
    """
    return _Kernel(stats, config).e_step(params)


def m_step(stats: Sequence[ClassStats], tau, config: EMConfig, iteration=None) -> MixtureParams:
    """Weights pi_k = mean_i tau_ik and responsibility-pooled covariances."""
    tau = np.asarray(tau, dtype=float)
    return _Kernel(stats, config).m_step(tau, config.ridge, iteration)


def adjust_covariances(params: MixtureParams, tau, counts) -> np.ndarray:
    """Rescale MLE covariances by sum_i tau_ik n_i / sum_i tau_ik (n_i - 1).

    This removes the finite-n_i shrinkage of the normal-based estimates, which
    otherwise converge to a (n_i - 1)/n_i multiple of the true covariance.
    """
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 2):
        raise DomainError("every class needs n_i >= 2 to adjust covariances")
    tau = np.asarray(tau, dtype=float)
    factor = (tau.T @ counts) / (tau.T @ (counts - 1.0))
    return params.covariances * factor[:, None, None]


def map_assign(tau) -> np.ndarray:
    """Hard labels argmax_k tau_ik; ties go to the smallest k."""
    return np.argmax(np.asarray(tau), axis=1)


def run_em(
    stats: Sequence[ClassStats],
    init: MixtureParams,
    config: EMConfig,
    callback: Optional[Callable[[int, MixtureParams, np.ndarray, float], None]] = None,
) -> FitResult:
    """Alternate E- and M-steps until the relative likelihood gain drops below epsilon.

    The returned ``tau`` is the posterior under the returned parameters.
    ``callback(t, params, tau, loglik)`` is invoked after every E-step.
    """
    if init.k != config.k:
        raise DomainError(f"init has K={init.k} but config asks for k={config.k}")
    kernel = _Kernel(stats, config)
    if init.p != kernel.p:
        raise DomainError(f"init covariances are {init.p}-dimensional, data is {kernel.p}-dimensional")

    params = init
    trace: list[float] = []
    converged = False
    n_iter = 0
    while True:
        tau, ll = kernel.e_step(params)
        if not math.isfinite(ll):
            raise NonFiniteLikelihood(f"log-likelihood became {ll} at iteration {n_iter}")
        trace.append(ll)
        if callback is not None:
            callback(n_iter, params, tau, ll)
        if len(trace) >= 2:
            gain = (trace[-1] - trace[-2]) / max(abs(trace[-2]), np.finfo(float).tiny)
            if gain < config.epsilon:
                converged = True
                break
        if n_iter >= config.max_iter:
            log.warning("EM hit max_iter=%d without converging", config.max_iter)
            break
        params = kernel.m_step(tau, config.ridge, iteration=n_iter + 1)
        n_iter += 1

    if kernel.df_mode == "n":
        adjusted = adjust_covariances(params, tau, kernel.counts)
    else:
        # n_i - 1 denominators already give the adjusted estimate
        adjusted = params.covariances.copy()
    return FitResult(
        params=params,
        adjusted_covariances=adjusted,
        tau=tau,
        loglik_trace=trace,
        n_iter=n_iter,
        converged=converged,
        variant=kernel.variant,
        df_mode=kernel.df_mode,
    )
