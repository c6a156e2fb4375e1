"""Similarity, point-estimate, metric, and predictive-density checks against
hand computations, exhaustive comparison, and closed-form values."""

import numpy as np
import pytest
from scipy.stats import norm

from hmfm.chain import ChainOutput, RunPriors, SamplerConfig
from hmfm.conditional import run_conditional
from hmfm.likelihood import GroupedDataset, NigParams
from hmfm.marginal import run_marginal
from hmfm.postprocess import (PartitionEstimate, ari, cce, cocluster_matrix,
                              default_grid, min_vi, predictive_density,
                              predictive_score, similarity,
                              vi_lower_bound_score)

NIG = NigParams(0.0, 1.0, 4.0, 1.0)


def fake_chain(alloc_rows, group_sizes=None, components=None, lam=None,
               gamma=None, u=None):
    alloc = np.asarray(alloc_rows)
    r, n = alloc.shape
    if group_sizes is None:
        group_sizes = (n,)
    index = [(j, i) for j, nj in enumerate(group_sizes) for i in range(nj)]
    d = len(group_sizes)
    return ChainOutput(
        iters=np.arange(r),
        k=np.array([len(set(row)) for row in alloc_rows]),
        m=np.zeros(r, dtype=int),
        lam=np.asarray(lam) if lam is not None else np.ones(r),
        gamma=np.asarray(gamma) if gamma is not None else np.ones((r, d)),
        u=np.asarray(u) if u is not None else np.ones((r, d)),
        allocations=alloc,
        index=index,
        group_sizes=tuple(group_sizes),
        components=components,
    )


# ---------------------------------------------------------------------------
# Similarity
# ---------------------------------------------------------------------------

def test_similarity_single_iteration_is_binary():
    chain = fake_chain([[1, 1, 2]])
    sim = similarity(chain)
    assert np.array_equal(sim.values,
                          np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1.0]]))


def test_similarity_identical_iterations_binary():
    chain = fake_chain([[1, 2, 2], [1, 2, 2], [1, 2, 2]])
    sim = similarity(chain)
    assert np.array_equal(sim.values, cocluster_matrix([1, 2, 2]))


def test_similarity_half_and_half():
    chain = fake_chain([[1, 1], [1, 2]])
    sim = similarity(chain)
    assert sim.values[0, 1] == pytest.approx(0.5)
    assert np.all(np.diag(sim.values) == 1.0)


def test_similarity_label_permutation_equivariance():
    rows_a = [[1, 1, 2, 3], [2, 2, 1, 1]]
    rows_b = [[7, 7, 4, 9], [1, 1, 5, 5]]  # same partitions, new labels
    assert np.array_equal(similarity(fake_chain(rows_a)).values,
                          similarity(fake_chain(rows_b)).values)


def test_similarity_rejects_empty():
    with pytest.raises(ValueError):
        similarity(np.empty((0, 4), dtype=int))


# ---------------------------------------------------------------------------
# Point estimate
# ---------------------------------------------------------------------------

def test_min_vi_degenerate_chain():
    chain = fake_chain([[2, 2, 5]])
    est = min_vi(chain, similarity(chain))
    assert est.k == 2
    assert est.labels.tolist() == [1, 1, 2]


def test_min_vi_recovers_truth_under_binary_similarity():
    truth = [1, 1, 2, 2]
    rows = [truth, [1, 1, 1, 1], [1, 2, 3, 4], [1, 1, 1, 2]]
    chain = fake_chain(rows)
    sim_truth = similarity(fake_chain([truth]))
    est = min_vi(chain, sim_truth)
    assert est.labels.tolist() == [1, 1, 2, 2]


def test_min_vi_beats_every_visited_partition():
    rng = np.random.default_rng(0)
    rows = [list(rng.integers(1, 4, size=6)) for _ in range(40)]
    chain = fake_chain(rows)
    sim = similarity(chain)
    est = min_vi(chain, sim)
    best = vi_lower_bound_score(est.labels, sim.values)
    for row in rows:
        assert best <= vi_lower_bound_score(np.asarray(row), sim.values) + 1e-12


def test_min_vi_iteration_order_invariant():
    rng = np.random.default_rng(1)
    rows = [list(rng.integers(1, 4, size=6)) for _ in range(30)]
    chain_a = fake_chain(rows)
    chain_b = fake_chain(rows[::-1])
    sim = similarity(chain_a)
    est_a = min_vi(chain_a, sim)
    est_b = min_vi(chain_b, sim)
    assert np.array_equal(cocluster_matrix(est_a.labels),
                          cocluster_matrix(est_b.labels))


def test_partition_estimate_projection():
    est = PartitionEstimate.from_flat(np.array([5, 5, 9, 9, 5]), (3, 2))
    assert est.labels.tolist() == [1, 1, 2, 2, 1]
    assert est.k == 2
    assert est.by_group[0].tolist() == [1, 1, 2]
    assert est.by_group[1].tolist() == [2, 1]


# ---------------------------------------------------------------------------
# ARI
# ---------------------------------------------------------------------------

def test_ari_identical_partitions():
    assert ari([1, 1, 2, 3], [5, 5, 7, 9]) == pytest.approx(1.0)


def test_ari_one_big_cluster_vs_halves():
    assert ari([1, 1, 2, 2], [1, 1, 1, 1]) == pytest.approx(0.0)


def test_ari_crossed_pairs_value():
    # pair counts: a=0, b=2, c=2, d=2 -> adjusted index -1/2 (hand computed
    # and cross-checked against scikit-learn)
    got = ari([1, 1, 2, 2], [1, 2, 1, 2])
    assert got == pytest.approx(-0.5)
    from sklearn.metrics import adjusted_rand_score
    assert got == pytest.approx(adjusted_rand_score([1, 1, 2, 2], [1, 2, 1, 2]))


def test_ari_symmetry_and_label_invariance():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 3, size=20)
    b = rng.integers(0, 4, size=20)
    assert ari(a, b) == pytest.approx(ari(b, a))
    assert ari(a, b) == pytest.approx(ari(a + 7, (b + 3) * 2))


def test_ari_length_mismatch():
    with pytest.raises(ValueError):
        ari([1, 2], [1, 2, 3])


# ---------------------------------------------------------------------------
# CCE
# ---------------------------------------------------------------------------

def test_cce_zero_when_equal():
    pi = cocluster_matrix([1, 1, 2])
    assert cce(pi, pi) == 0.0


def test_cce_two_point_value():
    truth = np.array([[1.0, 1.0], [1.0, 1.0]])
    est = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert cce(truth, est) == pytest.approx(1.0)


def test_cce_random_case_hand_sum():
    rng = np.random.default_rng(3)
    truth = cocluster_matrix(rng.integers(0, 2, size=3))
    est = rng.random((3, 3))
    est = 0.5 * (est + est.T)
    np.fill_diagonal(est, 1.0)
    expect = sum(abs(truth[l, k] - est[l, k]) for l in range(3) for k in range(3)) / 3
    assert cce(truth, est) == pytest.approx(expect)


def test_cce_symmetry():
    a = cocluster_matrix([1, 1, 2, 2])
    b = np.full((4, 4), 0.5)
    np.fill_diagonal(b, 1.0)
    assert cce(a, b) == pytest.approx(cce(b, a))


# ---------------------------------------------------------------------------
# Predictive density
# ---------------------------------------------------------------------------

def test_predictive_density_single_component_recovers_gaussian():
    comp = [{"mu": np.array([1.5]), "sigma2": np.array([0.49]),
             "S": np.array([[1.0], [2.0]])}]
    chain = fake_chain([[1, 1]], group_sizes=(1, 1), components=comp)
    grid = np.linspace(-5, 8, 801)
    dens = predictive_density(chain, 0, grid)
    assert np.allclose(dens, norm.pdf(grid, 1.5, 0.7), atol=1e-12)


def test_predictive_density_integrates_to_one_both_modes():
    rng = np.random.default_rng(4)
    data = GroupedDataset([list(rng.normal(0, 1, 30)),
                           list(rng.normal(2, 1, 30))])
    priors = RunPriors(nig=NIG, lam=2.0, gamma=np.array([1.0, 1.0]),
                       fix_lambda=True, fix_gamma=True)
    config = SamplerConfig(iterations=400, burn_in=100, thin=3, seed=5,
                           init_partition="kmeans:3")
    grid = default_grid(data)
    cond = run_conditional(data, config, priors)
    marg = run_marginal(data, config, priors)
    for chain in (cond, marg):
        for j in range(2):
            dens = predictive_density(chain, j, grid, data=data, prior=NIG)
            mass = np.trapezoid(dens, grid)
            assert mass == pytest.approx(1.0, abs=1e-3), (chain is cond, j)


def test_predictive_density_conditional_close_to_marginal():
    rng = np.random.default_rng(6)
    data = GroupedDataset([list(rng.normal(0, 1, 40)),
                           list(rng.normal(3, 1, 40))])
    priors = RunPriors(nig=NIG, lam=2.0, gamma=np.array([1.0, 1.0]),
                       fix_lambda=True, fix_gamma=True)
    config = SamplerConfig(iterations=4000, burn_in=1000, thin=3, seed=7,
                           init_partition="kmeans:3")
    grid = default_grid(data)
    cond = run_conditional(data, config, priors)
    marg = run_marginal(data, config, priors)
    for j in range(2):
        d_c = predictive_density(cond, j, grid, data=data, prior=NIG)
        d_m = predictive_density(marg, j, grid, data=data, prior=NIG)
        l1 = np.trapezoid(np.abs(d_c - d_m), grid)
        assert l1 < 0.05, j


def test_predictive_density_needs_data_for_marginal():
    chain = fake_chain([[1, 1]])
    with pytest.raises(ValueError):
        predictive_density(chain, 0, np.linspace(-1, 1, 10))


# ---------------------------------------------------------------------------
# Predictive score
# ---------------------------------------------------------------------------

def test_predictive_score_zero_when_equal():
    grid = np.linspace(-8, 8, 2001)
    f = norm.pdf(grid)
    assert predictive_score(f, f, grid) == 0.0


def test_predictive_score_disjoint_supports():
    grid = np.linspace(-8, 18, 4001)
    # the exact value is 2 minus the ~1.1e-6 overlap of the two densities
    assert predictive_score(norm.pdf(grid), norm.pdf(grid, 10, 1), grid) \
        == pytest.approx(2.0, abs=1e-5)
    assert predictive_score(norm.pdf(grid), norm.pdf(grid), grid) \
        == pytest.approx(0.0, abs=1e-12)


def test_predictive_score_unit_shift_closed_form():
    # L1 distance between N(0,1) and N(1,1): 2 (2 Phi(1/2) - 1) = 0.765850
    grid = np.linspace(-10, 11, 8001)
    got = predictive_score(lambda x: norm.pdf(x), norm.pdf(grid, 1, 1), grid)
    assert got == pytest.approx(2 * (2 * norm.cdf(0.5) - 1), abs=1e-6)
    assert got == pytest.approx(0.76585, abs=1e-5)


def test_predictive_score_warns_on_poor_grid():
    grid = np.linspace(-0.5, 0.5, 101)
    with pytest.warns(UserWarning):
        predictive_score(norm.pdf(grid), norm.pdf(grid), grid)
