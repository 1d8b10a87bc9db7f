import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import adjusted_rand_score

import oracles
from lcda.errors import DomainError
from lcda.simbench import (
    RESULT_COLUMNS,
    SimDesign,
    adjusted_rand_index,
    count_clamps,
    generate_model,
    match_components,
    odds_ratio,
    random_covariance,
    rows_as_dicts,
    run_grid,
    run_trial,
    sample_dataset,
)
from lcda.stats import compute_class_stats


def test_unit_eigenvalues_give_identity(rng):
    for p in (1, 3, 6):
        np.testing.assert_allclose(random_covariance(p, (1, 1), rng), np.eye(p), atol=1e-12)


def test_eigenvalues_in_range(rng):
    w = np.linalg.eigvalsh(random_covariance(5, (0.5, 3.0), rng))
    assert w.min() >= 0.5 - 1e-12 and w.max() <= 3.0 + 1e-12


def test_single_component_shared(rng):
    model = generate_model(SimDesign(p=3, k=1, n=10), rng)
    assert model.covs.shape == (1, 3, 3) and np.all(model.z == 0)


def test_generation_is_deterministic():
    d = SimDesign(p=3, k=2, n=15, ni_mode="uniform_half_p_to_2p")
    a = sample_dataset(generate_model(d, np.random.default_rng(5)), d, np.random.default_rng(6))
    b = sample_dataset(generate_model(d, np.random.default_rng(5)), d, np.random.default_rng(6))
    for x, y in zip(a[0].classes, b[0].classes):
        assert x.observations.tobytes() == y.observations.tobytes()


def test_class_size_modes(rng):
    d = SimDesign(p=4, k=2, n=20, ni_mode="twice_p")
    data, _ = sample_dataset(generate_model(d, rng), d, rng)
    stats = compute_class_stats(data)
    assert all(s.count == 8 and s.rank == 4 for s in stats)
    d = SimDesign(p=4, k=2, n=20, ni_mode="half_p")
    stats = compute_class_stats(sample_dataset(generate_model(d, rng), d, rng)[0])
    assert all(s.count == 2 and s.rank <= 1 for s in stats)
    d = SimDesign(p=4, k=2, n=200, ni_mode="uniform_half_p_to_2p")
    counts = sample_dataset(generate_model(d, rng), d, rng)[0].counts
    assert counts.min() >= 2 and counts.max() <= 8 and len(set(counts)) > 3
    d = SimDesign(p=3, k=2, n=5, ni_mode="fixed", ni=3)
    assert set(sample_dataset(generate_model(d, rng), d, rng)[0].counts) == {3}


def test_sample_means_near_truth():
    d = SimDesign(p=3, k=2, n=50, ni_mode="twice_p")
    g = np.random.default_rng(8)
    model = generate_model(d, g)
    data, z = sample_dataset(model, d, g)
    for i, s in enumerate(compute_class_stats(data)):
        sd = np.sqrt(np.diag(model.covs[z[i]]))
        assert np.all(np.abs(s.mean - model.means[i]) <= 4 * sd / math.sqrt(s.count))


def test_design_validation():
    with pytest.raises(DomainError):
        SimDesign(ni_mode="sometimes")
    with pytest.raises(DomainError):
        SimDesign(ni_mode="fixed")
    with pytest.raises(DomainError):
        SimDesign(eig_range=(0, 1))
    assert SimDesign(p=3).half_p == 2 and SimDesign(p=8).half_p == 4


def test_ari_examples():
    assert adjusted_rand_index([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]) == 1.0
    assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(-0.5, abs=1e-12)
    assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(oracles.ari([1, 1, 2, 2], [1, 2, 1, 2]))
    assert adjusted_rand_index([0, 0, 1, 1, 2], [5, 5, 3, 3, 9]) == 1.0
    assert adjusted_rand_index([0, 0, 0], [0, 0, 0]) == 1.0
    with pytest.raises(DomainError):
        adjusted_rand_index([0, 1], [0, 1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 4)), min_size=2, max_size=40))
def test_ari_matches_oracles(pairs):
    a, b = [x for x, _ in pairs], [y for _, y in pairs]
    got = adjusted_rand_index(a, b)
    assert got == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
    perm = {0: 3, 1: 0, 2: 1, 3: 2}
    assert adjusted_rand_index([perm[x] for x in a], b) == pytest.approx(got, abs=1e-12)
    assert adjusted_rand_index(b, a) == pytest.approx(got, abs=1e-12)


def test_odds_ratio_examples():
    assert odds_ratio(0.7, 0.7) == 1.0
    assert odds_ratio(0.8, 0.5) == pytest.approx(4.0)
    a1, a2 = np.array([0.6, 0.9, 0.25]), np.array([0.5, 0.3, 0.75])
    np.testing.assert_allclose(odds_ratio(a1, a2), [oracles.odds_ratio(x, y) for x, y in zip(a1, a2)], rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 20), st.integers(0, 20))
def test_odds_ratio_reciprocal_after_clamp(c1, c2):
    a, b = c1 / 20, c2 / 20
    r = odds_ratio(a, b, 20) * odds_ratio(b, a, 20)
    assert r == pytest.approx(1.0, rel=1e-12)
    assert math.isfinite(odds_ratio(a, b, 20))


def test_count_clamps():
    assert count_clamps([0.0, 0.5, 1.0], 10) == 2


def test_match_components_bruteforce(rng):
    truth = np.stack([random_covariance(3, (0.5, 3), rng) for _ in range(4)])
    order = [2, 0, 3, 1]
    est = truth[order] + 0.01 * rng.standard_normal((4, 3, 3))
    perm = match_components(est, truth)
    cost = [[float(np.linalg.norm(truth[k] - est[j])) for j in range(4)] for k in range(4)]
    assert tuple(perm) == oracles.best_matching(cost)
    np.testing.assert_allclose(est[perm], truth, atol=0.1)


def test_smoke_grid_single_cluster():
    rows = run_grid([SimDesign(p=2, k=1, n=20, reps=2)], ["ari"])
    assert len(rows) == 2 and all(r.ari == 1.0 and not r.error for r in rows)
    assert list(rows_as_dicts(rows)[0]) == RESULT_COLUMNS


def test_grid_is_deterministic_and_parallel_safe():
    designs = [SimDesign(p=2, k=2, n=20, reps=2), SimDesign(p=3, k=1, n=15, reps=1, seed=4)]
    a = run_grid(designs, ["accuracy", "ari"])
    b = run_grid(designs, ["ari", "accuracy"], jobs=2)
    assert _nan_equal(rows_as_dicts(a), rows_as_dicts(b))
    assert [(r.design_index, r.experiment, r.rep) for r in a] == [
        (0, "ari", 0), (0, "ari", 1), (0, "accuracy", 0), (0, "accuracy", 1), (1, "ari", 0), (1, "accuracy", 0)]


def _nan_equal(xs, ys):
    def norm(row):
        return {k: ("nan" if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
    return [norm(x) for x in xs] == [norm(y) for y in ys]


def test_bias_trace_direction():
    d = SimDesign(p=3, k=2, n=60, ni_mode="fixed", ni=3, reps=3)
    for rep in range(3):
        row = run_trial(d, 0, rep, "bias")
        assert not row.error
        assert row.trace_ratio_ok == "True"
        assert row.mle_rel_err > 0 and row.adj_rel_err > 0


def test_single_cluster_odds_ratio_near_one():
    d = SimDesign(p=3, k=1, n=40, ni_mode="twice_p", reps=10)
    rows = run_grid([d], ["accuracy"])
    ratios = [r.or_lcda_lda for r in rows]
    assert all(0.5 <= r <= 2 for r in ratios)


def test_bic_trial_reports_k_hat():
    row = run_trial(SimDesign(p=2, k=2, n=30, reps=1, k_max=3), 0, 0, "bic")
    assert row.k_hat in (1, 2, 3) and row.k_true_minus_k_hat == 2 - row.k_hat


def test_unknown_experiment():
    with pytest.raises(DomainError):
        run_grid([SimDesign()], ["speed"])
