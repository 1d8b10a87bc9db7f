"""Simulation study: random latent-covariance models, ARI, BIC error, accuracy odds ratios.

Every trial draws from its own generator seeded by (seed, design index, rep), so
results do not depend on execution order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import comb
from scipy.stats import ortho_group

from .classify import class_scores, fit_lda, fit_qda, ClassifierModel
from .em import EMConfig, map_assign, run_em
from .errors import DomainError, LcdaError
from .init_select import init_hierarchical, select_k
from .stats import ClassBlock, LabeledDataset, compute_class_stats

log = logging.getLogger(__name__)

NI_MODES = ("half_p", "uniform_half_p_to_2p", "twice_p", "fixed")
EXPERIMENTS = ("ari", "bic", "accuracy", "bias")


@dataclass(frozen=True)
class SimDesign:
    """One cell of the simulation grid.

    ``ni_mode='fixed'`` uses ``ni`` observations in every class. ``k_max`` caps
    the BIC grid (default K + 3).
    """

    p: int = 4
    k: int = 2
    n: int = 100
    ni_mode: str = "twice_p"
    reps: int = 10
    seed: int = 0
    hypercube_side: float = 10.0
    eig_range: tuple = (0.5, 3.0)
    ni: Optional[int] = None
    k_max: Optional[int] = None

    def __post_init__(self):
        if self.p < 1 or self.k < 1 or self.n < 1:
            raise DomainError("p, k and n must be positive")
        if self.reps < 1:
            raise DomainError("reps must be >= 1")
        if self.ni_mode not in NI_MODES:
            raise DomainError(f"unknown ni_mode {self.ni_mode!r}; choose from {NI_MODES}")
        if self.ni_mode == "fixed" and (self.ni is None or self.ni < 2):
            raise DomainError("ni_mode='fixed' needs ni >= 2")
        lo, hi = self.eig_range
        if not (0 < lo <= hi):
            raise DomainError(f"eig_range must satisfy 0 < lo <= hi, got {self.eig_range}")
        if self.hypercube_side <= 0:
            raise DomainError("hypercube_side must be positive")
        object.__setattr__(self, "eig_range", (float(lo), float(hi)))

    @property
    def half_p(self) -> int:
        return max(2, math.ceil(self.p / 2))

    def class_size(self, rng) -> int:
        if self.ni_mode == "fixed":
            return int(self.ni)
        if self.ni_mode == "half_p":
            return self.half_p
        if self.ni_mode == "twice_p":
            return 2 * self.p
        return int(rng.integers(self.half_p, 2 * self.p, endpoint=True))


@dataclass
class SimModel:
    means: np.ndarray
    covs: np.ndarray
    z: np.ndarray


def random_covariance(p: int, eig_range, rng) -> np.ndarray:
    """Q diag(lambda) Q^T with Haar Q and log-uniform eigenvalues."""
    lo, hi = eig_range
    lam = np.exp(rng.uniform(math.log(lo), math.log(hi), size=p))
    q = ortho_group.rvs(p, random_state=rng) if p > 1 else np.ones((1, 1))
    cov = (q * lam) @ q.T
    return 0.5 * (cov + cov.T)


def generate_model(design: SimDesign, rng) -> SimModel:
    # covariances are drawn first so designs differing only in n share them
    covs = np.stack([random_covariance(design.p, design.eig_range, rng) for _ in range(design.k)])
    means = rng.uniform(0.0, design.hypercube_side, size=(design.n, design.p))
    z = rng.integers(0, design.k, size=design.n)
    return SimModel(means, covs, z)


def sample_dataset(model: SimModel, design: SimDesign, rng) -> tuple[LabeledDataset, np.ndarray]:
    chols = [np.linalg.cholesky(c) for c in model.covs]
    blocks = []
    for i in range(model.means.shape[0]):
        n_i = design.class_size(rng)
        eps = rng.standard_normal((n_i, design.p))
        blocks.append(ClassBlock(f"c{i}", model.means[i] + eps @ chols[model.z[i]].T))
    return LabeledDataset(design.p, blocks), model.z.copy()


def sample_test_points(model: SimModel, rng, per_class: int = 1) -> np.ndarray:
    """``per_class`` fresh observations per class, shape (n, per_class, p)."""
    n, p = model.means.shape
    out = np.empty((n, per_class, p))
    for i in range(n):
        chol = np.linalg.cholesky(model.covs[model.z[i]])
        out[i] = model.means[i] + rng.standard_normal((per_class, p)) @ chol.T
    return out


def adjusted_rand_index(a, b) -> float:
    """Pair-counting Rand index corrected for chance (Hubert and Arabie)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("label vectors must have equal length")
    n = a.size
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    index = comb(table, 2).sum()
    rows = comb(table.sum(axis=1), 2).sum()
    cols = comb(table.sum(axis=0), 2).sum()
    expected = rows * cols / comb(n, 2)
    top = 0.5 * (rows + cols)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))


def clamp_accuracy(acc, n_test: int):
    """Continuity-corrected clamp of accuracies to [1/(2N), 1 - 1/(2N)]."""
    lo, hi = 1.0 / (2 * n_test), 1.0 - 1.0 / (2 * n_test)
    return np.clip(np.asarray(acc, dtype=float), lo, hi)


def count_clamps(accs, n_test: int) -> int:
    a = np.asarray(accs, dtype=float)
    return int(np.sum(clamp_accuracy(a, n_test) != a))


def odds_ratio(acc1, acc2, n_test: Optional[int] = None):
    """Odds of ``acc1`` divided by odds of ``acc2``.

    With ``n_test`` given, both accuracies are clamped first so boundary values
    give finite ratios. Arrays are handled elementwise.
    """
    a1 = np.asarray(acc1, dtype=float)
    a2 = np.asarray(acc2, dtype=float)
    if n_test is not None:
        a1, a2 = clamp_accuracy(a1, n_test), clamp_accuracy(a2, n_test)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (a1 / (1.0 - a1)) / (a2 / (1.0 - a2))
    return float(ratio) if ratio.ndim == 0 else ratio


def match_components(estimated: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` with estimated[perm[k]] matched to truth[k] (min total Frobenius)."""
    cost = np.linalg.norm(truth[:, None] - estimated[None, :], axis=(2, 3))
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(truth.shape[0], dtype=int)
    perm[rows] = cols
    return perm


@dataclass
class TrialOutcome:
    design_index: int
    rep: int
    experiment: str
    p: int
    k: int
    n: int
    ni_mode: str
    seed: int
    mean_ni: float = math.nan
    ari: float = math.nan
    k_hat: float = math.nan
    k_true_minus_k_hat: float = math.nan
    acc_lcda: float = math.nan
    acc_lcda_adjusted: float = math.nan
    acc_lda: float = math.nan
    acc_qda: float = math.nan
    or_lcda_lda: float = math.nan
    or_lcda_qda: float = math.nan
    or_adjusted_mle: float = math.nan
    clamp_events: int = 0
    mle_rel_err: float = math.nan
    adj_rel_err: float = math.nan
    mle_rel_err_max: float = math.nan
    adj_rel_err_max: float = math.nan
    trace_ratio_ok: str = ""
    n_iter: int = 0
    converged: str = ""
    error: str = ""


RESULT_COLUMNS = [f.name for f in fields(TrialOutcome)]


def _accuracy(model: ClassifierModel, tests: np.ndarray) -> float:
    n, per, p = tests.shape
    scores = class_scores(model, tests.reshape(n * per, p))
    truth = np.repeat(np.arange(n), per)
    return float(np.mean(np.argmax(scores, axis=1) == truth))


def run_trial(design: SimDesign, design_index: int, rep: int, experiment: str,
              config: Optional[EMConfig] = None) -> TrialOutcome:
    """One replicate of one experiment; failures become a row-level error tag."""
    if experiment not in EXPERIMENTS:
        raise DomainError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    config = config or EMConfig()
    row = TrialOutcome(design_index, rep, experiment, design.p, design.k, design.n, design.ni_mode, design.seed)
    rng = np.random.default_rng([design.seed, design_index, rep])
    model = generate_model(design, rng)
    data, z = sample_dataset(model, design, rng)
    row.mean_ni = float(data.counts.mean())
    try:
        stats = compute_class_stats(data)
        counts = data.counts
        if experiment == "bic":
            k_max = min(design.k_max or design.k + 3, design.n)
            grid = select_k(stats, counts, range(1, k_max + 1), config)
            row.k_hat = grid.selected_k
            row.k_true_minus_k_hat = design.k - grid.selected_k
            row.n_iter = grid.fit.n_iter
            row.converged = str(grid.fit.converged)
            return row

        cfg = config.with_k(design.k)
        fit = run_em(stats, init_hierarchical(stats, counts, design.k), cfg)
        row.n_iter = fit.n_iter
        row.converged = str(fit.converged)
        if experiment == "ari":
            row.ari = adjusted_rand_index(z, map_assign(fit.tau))
        elif experiment == "bias":
            perm = match_components(fit.params.covariances, model.covs)
            tau = fit.tau[:, perm]
            mle = fit.params.covariances[perm]
            adj = fit.adjusted_covariances[perm]
            c = counts.astype(float)
            shrink = (tau.T @ (c - 1.0)) / (tau.T @ c)
            norms = np.linalg.norm(model.covs, axis=(1, 2))
            mle_err = np.linalg.norm(mle - shrink[:, None, None] * model.covs, axis=(1, 2)) / norms
            adj_err = np.linalg.norm(adj - model.covs, axis=(1, 2)) / norms
            row.mle_rel_err, row.mle_rel_err_max = float(mle_err.mean()), float(mle_err.max())
            row.adj_rel_err, row.adj_rel_err_max = float(adj_err.mean()), float(adj_err.max())
            tr_mle = np.trace(mle, axis1=1, axis2=2)
            tr_adj = np.trace(adj, axis1=1, axis2=2)
            row.trace_ratio_ok = str(bool(np.all(tr_mle < tr_adj)))
        else:
            tests = sample_test_points(model, rng)
            means = np.stack([s.mean for s in stats])
            lcda = ClassifierModel("lcda", data.class_ids, means, fit.params.covariances, tau=fit.tau,
                                   weights=fit.params.weights, adjusted_covariances=fit.adjusted_covariances,
                                   fit=fit)
            row.acc_lcda = _accuracy(lcda, tests)
            row.acc_lcda_adjusted = _accuracy(replace(lcda, use_adjusted=True), tests)
            row.acc_lda = _accuracy(fit_lda(data), tests)
            n_test = tests.shape[0] * tests.shape[1]
            row.or_lcda_lda = odds_ratio(row.acc_lcda_adjusted, row.acc_lda, n_test)
            row.or_adjusted_mle = odds_ratio(row.acc_lcda_adjusted, row.acc_lcda, n_test)
            try:
                row.acc_qda = _accuracy(fit_qda(data), tests)
                row.or_lcda_qda = odds_ratio(row.acc_lcda_adjusted, row.acc_qda, n_test)
            except LcdaError:
                pass
            present = [a for a in (row.acc_lcda, row.acc_lcda_adjusted, row.acc_lda, row.acc_qda)
                       if not math.isnan(a)]
            row.clamp_events = count_clamps(present, n_test)
    except LcdaError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def _run_task(task):
    return run_trial(*task)


def run_grid(designs: Sequence[SimDesign], protocols: Iterable[str] = ("ari",),
             config: Optional[EMConfig] = None, jobs: int = 1) -> list[TrialOutcome]:
    """Every (design, rep, experiment) trial, in canonical (design, experiment, rep) order."""
    protocols = list(protocols)
    for proto in protocols:
        if proto not in EXPERIMENTS:
            raise DomainError(f"unknown experiment {proto!r}; choose from {EXPERIMENTS}")
    tasks = [(d, di, rep, proto, config)
             for di, d in enumerate(designs) for proto in protocols for rep in range(d.reps)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_task, tasks))
    else:
        rows = [_run_task(t) for t in tasks]
    order = {name: i for i, name in enumerate(EXPERIMENTS)}
    rows.sort(key=lambda r: (r.design_index, order[r.experiment], r.rep))
    return rows


def rows_as_dicts(rows: Sequence[TrialOutcome]) -> list[dict]:
    return [asdict(r) for r in rows]
