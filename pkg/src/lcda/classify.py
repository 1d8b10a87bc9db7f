"""Plug-in Bayes classifiers (LCDA, LDA, QDA) and evaluation protocols.

All rules use equal class priors unless a log-prior vector is passed. Scores
are unnormalized log class scores; :func:`posterior_probabilities` turns them
into probabilities.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .em import EMConfig, FitResult, run_em
from .errors import DomainError, NumericalError, QdaInfeasible
from .init_select import init_hierarchical
from .stats import LOG_2PI, LabeledDataset, MixtureParams, cholesky, compute_class_stats

log = logging.getLogger(__name__)

TAU_FLOOR = 1e-300
_CHUNK = 256


@dataclass
class ClassifierModel:
    """Parameter bundle for one of the three rules.

    ``covariances`` holds one pooled matrix for ``lda``, one matrix per class
    for ``qda`` and the K maximum likelihood latent covariances for ``lcda``.
    LCDA predicts with ``adjusted_covariances`` when ``use_adjusted`` is set.
    """

    kind: str
    class_ids: list[str]
    means: np.ndarray
    covariances: np.ndarray
    tau: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    adjusted_covariances: Optional[np.ndarray] = None
    use_adjusted: bool = False
    df_mode: str = "n"
    fit: Optional[FitResult] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("lcda", "lda", "qda"):
            raise DomainError(f"unknown classifier kind {self.kind!r}")
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float)
        if self.covariances.ndim == 2:
            self.covariances = self.covariances[None]
        if self.kind == "lcda":
            if self.tau is None:
                raise DomainError("an LCDA model needs responsibilities")
            self.tau = np.asarray(self.tau, dtype=float)
            if self.tau.shape != (self.means.shape[0], self.covariances.shape[0]):
                raise DomainError("tau must be n x K")
            if np.any(np.abs(self.tau.sum(axis=1) - 1.0) > 1e-9):
                raise DomainError("tau rows must sum to 1")
            if self.adjusted_covariances is None:
                self.adjusted_covariances = self.covariances.copy()

    @property
    def p(self) -> int:
        return self.means.shape[1]

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def plugin_covariances(self) -> np.ndarray:
        if self.kind == "lcda" and self.use_adjusted:
            return self.adjusted_covariances
        return self.covariances


@dataclass
class PredictionResult:
    predicted: list[str]
    scores: np.ndarray  # queries x classes
    class_ids: list[str]

    @property
    def indices(self) -> np.ndarray:
        return np.argmax(self.scores, axis=1)


def posterior_probabilities(scores) -> np.ndarray:
    scores = np.atleast_2d(scores)
    return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))


def _log_normal(Y: np.ndarray, means: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """log phi(y_q; mu_i, sigma) for every query q and mean i."""
    chol = cholesky(sigma)
    p = means.shape[1]
    diff = (Y[:, None, :] - means[None, :, :]).reshape(-1, p)
    z = linalg.solve_triangular(chol, diff.T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", z, z).reshape(Y.shape[0], means.shape[0])
    return -0.5 * (p * LOG_2PI + 2.0 * np.log(np.diag(chol)).sum() + quad)


def _as_queries(model: ClassifierModel, y) -> np.ndarray:
    Y = np.asarray(y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.ndim != 2 or Y.shape[1] != model.p:
        raise DomainError(f"queries must have {model.p} columns, got shape {np.shape(y)}")
    return Y


def _scores_block(model: ClassifierModel, Y: np.ndarray) -> np.ndarray:
    if model.kind == "lda":
        return _log_normal(Y, model.means, model.covariances[0])
    if model.kind == "qda":
        out = np.empty((Y.shape[0], model.n_classes))
        for i in range(model.n_classes):
            out[:, i] = _log_normal(Y, model.means[i : i + 1], model.covariances[i])[:, 0]
        return out
    covs = model.plugin_covariances
    with np.errstate(divide="ignore"):
        log_tau = np.where(model.tau < TAU_FLOOR, -np.inf, np.log(np.maximum(model.tau, TAU_FLOOR)))
    terms = np.stack([_log_normal(Y, model.means, covs[k]) + log_tau[:, k] for k in range(covs.shape[0])])
    return logsumexp(terms, axis=0)


def class_scores(model: ClassifierModel, y, log_prior=None) -> np.ndarray:
    """queries x classes matrix of log class scores."""
    Y = _as_queries(model, y)
    out = np.empty((Y.shape[0], model.n_classes))
    for start in range(0, Y.shape[0], _CHUNK):
        out[start : start + _CHUNK] = _scores_block(model, Y[start : start + _CHUNK])
    if log_prior is not None:
        out = out + np.asarray(log_prior, dtype=float)[None, :]
    return out


def predict(model: ClassifierModel, y, log_prior=None) -> PredictionResult:
    scores = class_scores(model, y, log_prior)
    idx = np.argmax(scores, axis=1)
    return PredictionResult([model.class_ids[i] for i in idx], scores, list(model.class_ids))


def _predict_kind(kind, model, y, log_prior):
    if model.kind != kind:
        raise DomainError(f"expected a {kind} model, got {model.kind}")
    return predict(model, y, log_prior)


def predict_lcda(model: ClassifierModel, y, log_prior=None) -> PredictionResult:
    """argmax_i log sum_k tau_ik phi(y; mu_i, Sigma_k)."""
    return _predict_kind("lcda", model, y, log_prior)


def predict_lda(model: ClassifierModel, y, log_prior=None) -> PredictionResult:
    return _predict_kind("lda", model, y, log_prior)


def predict_qda(model: ClassifierModel, y, log_prior=None) -> PredictionResult:
    return _predict_kind("qda", model, y, log_prior)


def fit_lcda(
    dataset: LabeledDataset,
    k: int,
    config: Optional[EMConfig] = None,
    use_adjusted: bool = False,
    init: Optional[MixtureParams] = None,
) -> ClassifierModel:
    """Cluster the class scatters into ``k`` latent covariances and build the LCDA rule."""
    config = (config or EMConfig()).with_k(k)
    stats = compute_class_stats(dataset, config.rank_tol)
    if init is None:
        init = init_hierarchical(stats, [s.count for s in stats], k)
    fit = run_em(stats, init, config)
    return ClassifierModel(
        kind="lcda",
        class_ids=dataset.class_ids,
        means=np.stack([s.mean for s in stats]),
        covariances=fit.params.covariances,
        tau=fit.tau,
        weights=fit.params.weights,
        adjusted_covariances=fit.adjusted_covariances,
        use_adjusted=use_adjusted,
        df_mode=fit.df_mode,
        fit=fit,
    )


def pooled_covariance(dataset: LabeledDataset) -> np.ndarray:
    stats = compute_class_stats(dataset)
    return sum(s.scatter for s in stats) / sum(s.count - 1 for s in stats)


def fit_lda(dataset: LabeledDataset, ridge: float = 0.0) -> ClassifierModel:
    """Class means with the pooled within-class covariance sum s_i / sum (n_i - 1)."""
    stats = compute_class_stats(dataset)
    pooled = sum(s.scatter for s in stats) / sum(s.count - 1 for s in stats)
    if ridge > 0:
        pooled = pooled + ridge * np.eye(dataset.p)
    try:
        cholesky(pooled)
    except NumericalError as exc:
        raise NumericalError(f"pooled covariance is singular; retry with a ridge ({exc})") from None
    return ClassifierModel("lda", dataset.class_ids, np.stack([s.mean for s in stats]), pooled)


def fit_qda(dataset: LabeledDataset) -> ClassifierModel:
    """Class means with per-class covariances s_i / (n_i - 1)."""
    stats = compute_class_stats(dataset)
    p = dataset.p
    bad = [s.class_id for s in stats if s.rank < p]
    covs = np.stack([s.scatter / (s.count - 1) for s in stats])
    for s, c in zip(stats, covs):
        if s.class_id not in bad:
            try:
                cholesky(c)
            except NumericalError:
                bad.append(s.class_id)
    if bad:
        raise QdaInfeasible(bad)
    return ClassifierModel("qda", dataset.class_ids, np.stack([s.mean for s in stats]), covs)


# -- evaluation recipes -------------------------------------------------------


@dataclass
class LdaRecipe:
    ridge: float = 0.0
    name: str = "lda"

    def fit(self, dataset, warm=None):
        return fit_lda(dataset, self.ridge)


@dataclass
class QdaRecipe:
    name: str = "qda"

    def fit(self, dataset, warm=None):
        return fit_qda(dataset)


@dataclass
class LcdaRecipe:
    """LCDA at fixed K.

    With ``refit='per-fold'`` every fold reruns EM, started from the
    full-data solution when one is supplied as ``warm``. With ``refit='none'``
    the full-data responsibilities and covariances are reused and only the
    class means are recomputed.
    """

    k: int
    config: EMConfig = field(default_factory=EMConfig)
    use_adjusted: bool = False
    refit: str = "per-fold"
    name: str = "lcda"

    def __post_init__(self):
        if self.refit not in ("per-fold", "none"):
            raise DomainError(f"refit must be 'per-fold' or 'none', got {self.refit!r}")

    def fit(self, dataset, warm: Optional[ClassifierModel] = None):
        if warm is None:
            return fit_lcda(dataset, self.k, self.config, self.use_adjusted)
        if self.refit == "none":
            stats = compute_class_stats(dataset)
            return replace(warm, means=np.stack([s.mean for s in stats]), use_adjusted=self.use_adjusted)
        return fit_lcda(dataset, self.k, self.config, self.use_adjusted, init=warm.fit.params)


@dataclass
class LoocvResult:
    method: str
    class_ids: list[str]
    correct: np.ndarray
    evaluated: np.ndarray
    skipped: int

    @property
    def per_class_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.correct / self.evaluated

    @property
    def overall_accuracy(self) -> float:
        total = self.evaluated.sum()
        return float(self.correct.sum() / total) if total else math.nan

    def rate_histogram(self) -> dict[float, int]:
        """Number of classes attaining each within-class LOOCV rate."""
        rates = self.per_class_rates[self.evaluated > 0]
        counts = Counter(round(float(r), 12) for r in rates)
        return dict(sorted(counts.items()))


def evaluate_loocv(dataset: LabeledDataset, recipe) -> LoocvResult:
    """Leave each observation out in turn, refit, and predict it."""
    counts = dataset.counts
    if np.any(counts < 2):
        raise DomainError("leave-one-out needs n_i >= 2 in every class")
    warm = recipe.fit(dataset) if isinstance(recipe, LcdaRecipe) else None
    correct = np.zeros(dataset.n_classes, dtype=int)
    evaluated = np.zeros(dataset.n_classes, dtype=int)
    skipped = 0
    for i, block in enumerate(dataset.classes):
        if block.observations.shape[0] < 3:
            skipped += block.observations.shape[0]
            continue
        for j in range(block.observations.shape[0]):
            model = recipe.fit(dataset.without(i, j), warm)
            pred = predict(model, block.observations[j])
            evaluated[i] += 1
            correct[i] += int(pred.indices[0] == i)
    if skipped:
        log.warning("%d LOOCV folds skipped: a class would keep a single observation", skipped)
    return LoocvResult(getattr(recipe, "name", "model"), dataset.class_ids, correct, evaluated, skipped)


@dataclass
class HeldoutResult:
    method: str
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def band(self) -> tuple[float, float]:
        """Pointwise normal-approximation 95% band for the mean accuracy."""
        r = len(self.accuracies)
        if r < 2:
            return self.mean, self.mean
        half = 1.959963984540054 * float(np.std(self.accuracies, ddof=1)) / math.sqrt(r)
        return self.mean - half, self.mean + half


def heldout_split(dataset: LabeledDataset, g: int, rng) -> tuple[LabeledDataset, list[tuple[int, np.ndarray]]]:
    """Remove ``g`` random observations from each class; return training data and test blocks."""
    train, test = [], []
    for i, block in enumerate(dataset.classes):
        n_i = block.observations.shape[0]
        held = np.sort(rng.choice(n_i, size=g, replace=False))
        keep = np.setdiff1d(np.arange(n_i), held)
        train.append(type(block)(block.class_id, block.observations[keep]))
        test.append((i, block.observations[held]))
    return LabeledDataset(dataset.p, train), test


def evaluate_heldout(dataset: LabeledDataset, g: int, repeats: int, recipe, seed: int = 0) -> HeldoutResult:
    """Repeated random hold-out of ``g`` observations per class."""
    if g < 1 or repeats < 1:
        raise DomainError("g and repeats must be positive")
    if g > dataset.counts.min() - 2:
        raise DomainError(
            f"g={g} leaves fewer than 2 training observations in some class (min n_i = {dataset.counts.min()})"
        )
    accs = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        train, test = heldout_split(dataset, g, rng)
        model = recipe.fit(train)
        hits = total = 0
        for i, obs in test:
            pred = predict(model, obs)
            hits += int(np.sum(pred.indices == i))
            total += obs.shape[0]
        accs.append(hits / total)
    return HeldoutResult(getattr(recipe, "name", "model"), accs)
