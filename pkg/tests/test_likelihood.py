"""Observation-model tests: conjugate updates and the closed-form cluster
marginal likelihood are checked against direct 2-D quadrature of the
defining integrals; the regression draw against a 1-D quadrature oracle."""

import math

import numpy as np
import pytest
from scipy import integrate

from hmfm.likelihood import (ClusterSuffStats, GroupedDataset, NigParams,
                             RegressionSpec, beta_full_conditional_draw,
                             center_groups, log_marginal, log_marginal_arrays,
                             nig_draw, nig_log_density, nig_posterior,
                             residualize, restore_residualized)


def stats_of(values):
    s = ClusterSuffStats()
    s.add(np.asarray(values, dtype=float))
    return s


def marginal_quadrature(values, prior):
    """Oracle: integrate prod_i N(y_i | mu, s2) against the NIG density by
    nested adaptive 1-D quadratures, over log s2 inside (the log transform
    keeps the heavy variance tail in-domain) and a very wide mu range
    outside (the mu-marginal has polynomial t-like tails)."""
    values = np.asarray(values, dtype=float)

    def inner(mu):
        def f(w):
            s2 = math.exp(w)
            loglik = -0.5 * values.size * math.log(2 * math.pi * s2) \
                - 0.5 * np.sum((values - mu) ** 2) / s2
            return math.exp(loglik + float(nig_log_density(mu, s2, prior)) + w)
        val, _ = integrate.quad(f, -30.0, 35.0, epsabs=1e-300, epsrel=1e-11,
                                limit=300)
        return val

    center = prior.mu0
    span = 2000.0 * math.sqrt(prior.sigma0_sq / min(prior.k0, 1.0)) + 2000.0
    pts = sorted(set([center] + [float(v) for v in values]))
    val, _ = integrate.quad(inner, center - span, center + span,
                            points=pts, epsabs=1e-300, epsrel=1e-10, limit=400)
    return val


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------

def test_suffstats_add_remove_roundtrip_integers():
    s = ClusterSuffStats()
    s.add(np.array([2.0, -3.0, 5.0]))
    before = (s.count, s.total, s.total_sq)
    s.add(np.array([7.0]))
    s.remove(np.array([7.0]))
    assert (s.count, s.total, s.total_sq) == before


def test_suffstats_add_remove_roundtrip_floats():
    rng = np.random.default_rng(0)
    s = ClusterSuffStats()
    base = rng.normal(size=10)
    s.add(base)
    before = (s.total, s.total_sq)
    extra = rng.normal(size=4)
    s.add(extra)
    s.remove(extra)
    assert s.count == 10
    assert s.total == pytest.approx(before[0], abs=1e-12)
    assert s.total_sq == pytest.approx(before[1], abs=1e-12)


def test_suffstats_remove_too_much():
    s = stats_of([1.0])
    with pytest.raises(ValueError):
        s.remove(np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# Posterior updates
# ---------------------------------------------------------------------------

def test_posterior_empty_returns_prior():
    prior = NigParams(0.5, 2.0, 3.0, 1.5)
    assert nig_posterior(ClusterSuffStats(), prior) == prior


def test_posterior_single_observation_at_prior_mean():
    prior = NigParams(1.0, 2.0, 3.0, 1.5)
    post = nig_posterior(stats_of([1.0]), prior)
    assert post.mu0 == pytest.approx(1.0)
    assert post.k0 == pytest.approx(3.0)
    assert post.nu0 == pytest.approx(4.0)
    # no spread and no mean shift: nu_n sigma_n^2 = nu0 sigma0^2
    assert post.nu0 * post.sigma0_sq == pytest.approx(prior.nu0 * prior.sigma0_sq)


def test_posterior_sequential_equals_batch():
    rng = np.random.default_rng(3)
    prior = NigParams(-0.3, 0.7, 2.5, 0.9)
    values = rng.normal(1.0, 2.0, size=12)
    batch = nig_posterior(stats_of(values), prior)
    running = prior
    for v in values:
        running = nig_posterior(stats_of([v]), running)
    assert running.mu0 == pytest.approx(batch.mu0, abs=1e-10)
    assert running.k0 == pytest.approx(batch.k0, abs=1e-10)
    assert running.nu0 == pytest.approx(batch.nu0, abs=1e-10)
    assert running.sigma0_sq == pytest.approx(batch.sigma0_sq, abs=1e-10)


def test_posterior_against_quadrature_normalizer():
    # posterior parameters must reproduce the quadrature posterior moments
    prior = NigParams(0.0, 1.0, 2.0, 1.0)
    values = [0.0, 2.0]
    post = nig_posterior(stats_of(values), prior)
    norm = marginal_quadrature(values, prior)

    def moment(f):
        val, _ = integrate.dblquad(
            lambda s2, mu: f(mu, s2) * math.exp(
                -0.5 * len(values) * math.log(2 * math.pi * s2)
                - 0.5 * sum((v - mu) ** 2 for v in values) / s2
                + float(nig_log_density(mu, s2, prior))),
            -12, 12, lambda _: 1e-8, lambda _: 300.0,
            epsabs=1e-12, epsrel=1e-8)
        return val / norm

    # dblquad on the truncated domain is good to ~1e-4 here
    assert moment(lambda mu, s2: mu) == pytest.approx(post.mu0, abs=5e-4)
    # E[1/s2] = (nu_n/2) / (nu_n sigma_n^2 / 2)
    assert moment(lambda mu, s2: 1.0 / s2) == pytest.approx(
        1.0 / post.sigma0_sq, rel=1e-3)


# ---------------------------------------------------------------------------
# Marginal likelihood
# ---------------------------------------------------------------------------

def test_log_marginal_empty_is_zero():
    assert log_marginal(ClusterSuffStats(), NigParams(0, 1, 2, 1)) == 0.0


def test_log_marginal_single_point_closed_value():
    prior = NigParams(0.0, 1.0, 2.0, 1.0)
    assert log_marginal(stats_of([0.0]), prior) == pytest.approx(math.log(0.25))
    assert log_marginal(stats_of([0.0]), prior) == pytest.approx(
        math.log(marginal_quadrature([0.0], prior)), abs=1e-7)


def test_log_marginal_chain_rule():
    prior = NigParams(0.3, 1.5, 3.0, 0.8)
    y1, y2 = 0.7, -1.2
    joint = log_marginal(stats_of([y1, y2]), prior)
    first = log_marginal(stats_of([y1]), prior)
    predictive = log_marginal(stats_of([y2]), nig_posterior(stats_of([y1]), prior))
    assert joint == pytest.approx(first + predictive, abs=1e-10)


def test_log_marginal_matches_quadrature_random_clusters():
    rng = np.random.default_rng(11)
    for trial in range(20):
        prior = NigParams(float(rng.normal(0, 1)), float(rng.uniform(0.3, 3)),
                          float(rng.uniform(1.5, 6)), float(rng.uniform(0.4, 2)))
        n = int(rng.integers(1, 6))
        values = rng.normal(prior.mu0, 1.0, size=n)
        expect = math.log(marginal_quadrature(values, prior))
        got = log_marginal(stats_of(values), prior)
        assert got == pytest.approx(expect, rel=1e-6, abs=1e-6), trial


def test_log_marginal_arrays_matches_scalar():
    rng = np.random.default_rng(5)
    prior = NigParams(0.1, 0.8, 3.0, 1.2)
    clusters = [rng.normal(size=int(rng.integers(1, 7))) for _ in range(8)]
    cnt = np.array([c.size for c in clusters], dtype=float)
    tot = np.array([c.sum() for c in clusters])
    ssq = np.array([np.square(c).sum() for c in clusters])
    vec = log_marginal_arrays(cnt, tot, ssq, prior)
    for i, c in enumerate(clusters):
        assert vec[i] == pytest.approx(log_marginal(stats_of(c), prior), abs=1e-10)
    assert log_marginal_arrays(0.0, 0.0, 0.0, prior) == 0.0


# ---------------------------------------------------------------------------
# Posterior draws
# ---------------------------------------------------------------------------

def test_nig_draw_moments():
    post = NigParams(1.5, 4.0, 6.0, 2.0)
    rng = np.random.default_rng(21)
    draws = np.array([nig_draw(post, rng) for _ in range(100_000)])
    mu, s2 = draws[:, 0], draws[:, 1]
    se_mu = mu.std() / math.sqrt(mu.size)
    assert abs(mu.mean() - post.mu0) < 3 * se_mu
    prec = 1.0 / s2
    se_prec = prec.std() / math.sqrt(prec.size)
    assert abs(prec.mean() - 1.0 / post.sigma0_sq) < 3 * se_prec


def test_nig_draw_density_grid_check():
    # histogram the draws on a coarse 2-d grid and compare cell masses with
    # the analytic density integrated over each cell (Simpson in both axes)
    post = NigParams(0.0, 2.0, 5.0, 1.0)
    rng = np.random.default_rng(8)
    draws = np.array([nig_draw(post, rng) for _ in range(200_000)])
    mu_edges = np.linspace(-1.5, 1.5, 7)
    s2_edges = np.linspace(0.3, 3.0, 7)
    hist, _, _ = np.histogram2d(draws[:, 0], draws[:, 1],
                                bins=[mu_edges, s2_edges])
    hist /= draws.shape[0]
    for i in range(6):
        for j in range(6):
            mus = np.linspace(mu_edges[i], mu_edges[i + 1], 9)
            s2s = np.linspace(s2_edges[j], s2_edges[j + 1], 9)
            dens = np.exp(nig_log_density(mus[:, None], s2s[None, :], post))
            expect = integrate.simpson(integrate.simpson(dens, x=s2s), x=mus)
            se = math.sqrt(max(expect * (1 - expect), 1e-9) / draws.shape[0])
            assert hist[i, j] == pytest.approx(expect, abs=4 * se + 5e-5), (i, j)


# ---------------------------------------------------------------------------
# Regression pieces
# ---------------------------------------------------------------------------

def _toy_regression_data(rng, d=2, n=6, r=2):
    groups, covs = [], []
    for _ in range(d):
        g, c = [], []
        for _ in range(n):
            marks = rng.normal(size=int(rng.integers(1, 4)))
            g.append(marks)
            c.append(rng.normal(size=r))
        groups.append(g)
        covs.append(c)
    return GroupedDataset(groups, covariates=covs)


def test_residualize_zero_beta_is_identity():
    rng = np.random.default_rng(1)
    data = _toy_regression_data(rng)
    out = residualize(data, np.zeros((2, 2)))
    for j in range(2):
        for i in range(data.group_sizes[j]):
            assert np.array_equal(out.groups[j][i], data.groups[j][i])


def test_residualize_unit_shift():
    data = GroupedDataset([[np.array([1.0, 2.0])]],
                          covariates=[[np.array([1.0])]])
    out = residualize(data, np.array([[1.0]]))
    assert np.allclose(out.groups[0][0], [0.0, 1.0])


def test_residualize_restore_roundtrip_exact():
    rng = np.random.default_rng(2)
    data = _toy_regression_data(rng)
    beta = rng.normal(size=(2, 2))
    out = residualize(data, beta)
    back = restore_residualized(out)
    assert back is data
    for j in range(2):
        for i in range(data.group_sizes[j]):
            assert np.array_equal(back.groups[j][i], data.groups[j][i])


def test_residualize_dimension_mismatch():
    rng = np.random.default_rng(3)
    data = _toy_regression_data(rng)
    with pytest.raises(ValueError):
        residualize(data, np.zeros((2, 3)))
    plain = GroupedDataset([[1.0, 2.0]])
    with pytest.raises(ValueError):
        residualize(plain, np.zeros((1, 1)))


def test_beta_draw_prior_when_no_weight():
    # variance terms huge => likelihood contribution negligible
    rng = np.random.default_rng(4)
    data = _toy_regression_data(rng, d=1, n=3, r=2)
    spec = RegressionSpec(beta0=np.array([1.0, -2.0]), cov0=np.eye(2))
    alloc = [np.zeros(3, dtype=int)]
    draws = np.array([
        beta_full_conditional_draw(data, alloc, np.array([0.0]),
                                   np.array([1e12]), spec, 0,
                                   np.random.default_rng(s))
        for s in range(20_000)
    ])
    assert np.allclose(draws.mean(axis=0), spec.beta0, atol=0.03)
    assert np.allclose(np.cov(draws.T), spec.cov0, atol=0.05)


def test_beta_draw_tight_prior_concentrates():
    rng = np.random.default_rng(5)
    data = _toy_regression_data(rng, d=1, n=4, r=1)
    spec = RegressionSpec(beta0=np.array([0.7]), cov0=1e-12 * np.eye(1))
    alloc = [np.zeros(4, dtype=int)]
    draw = beta_full_conditional_draw(data, alloc, np.array([0.0]),
                                      np.array([1.0]), spec, 0,
                                      np.random.default_rng(0))
    assert draw[0] == pytest.approx(0.7, abs=1e-4)


def test_beta_draw_matches_quadrature_r1():
    # scalar covariate: the full conditional is a known normal; check its
    # moments against 1-d quadrature of the unnormalized density
    rng = np.random.default_rng(6)
    data = _toy_regression_data(rng, d=1, n=5, r=1)
    spec = RegressionSpec(beta0=np.array([-0.5]), cov0=np.array([[2.0]]))
    alloc = [np.arange(5) % 2]
    mus = np.array([0.2, -0.4])
    s2s = np.array([0.8, 1.7])

    def log_target(b):
        lp = -0.5 * (b - spec.beta0[0]) ** 2 / spec.cov0[0, 0]
        for i in range(5):
            k = alloc[0][i]
            y = data.groups[0][i]
            x = data.covariates[0][i][0]
            lp += -0.5 * np.sum((y - mus[k] - x * b) ** 2) / s2s[k]
        return lp

    norm, _ = integrate.quad(lambda b: math.exp(log_target(b)), -10, 10)
    mean, _ = integrate.quad(lambda b: b * math.exp(log_target(b)), -10, 10)
    mean /= norm
    var, _ = integrate.quad(lambda b: (b - mean) ** 2 * math.exp(log_target(b)),
                            -10, 10)
    var /= norm
    draws = np.array([
        beta_full_conditional_draw(data, alloc, mus, s2s, spec, 0,
                                   np.random.default_rng(s))[0]
        for s in range(40_000)
    ])
    assert draws.mean() == pytest.approx(mean, abs=4 * math.sqrt(var / draws.size))
    assert draws.var() == pytest.approx(var, rel=0.05)


# ---------------------------------------------------------------------------
# Centering
# ---------------------------------------------------------------------------

def test_center_groups_already_centered():
    data = GroupedDataset([[-1.0, 1.0], [2.0, -2.0]])
    out, means = center_groups(data)
    assert np.allclose(means, 0.0)
    for j in range(2):
        for i in range(2):
            assert np.allclose(out.groups[j][i], data.groups[j][i])


def test_center_groups_constant_group():
    data = GroupedDataset([[3.0, 3.0, 3.0]])
    out, means = center_groups(data)
    assert means[0] == pytest.approx(3.0)
    assert all(np.allclose(y, 0.0) for y in out.groups[0])


def test_center_groups_two_group_sums():
    rng = np.random.default_rng(9)
    data = GroupedDataset([list(rng.normal(5, 2, 30)), list(rng.normal(-3, 1, 20))])
    out, _ = center_groups(data)
    for j, nj in enumerate(out.group_sizes):
        total = sum(float(y.sum()) for y in out.groups[j])
        assert abs(total) < 1e-10 * nj


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

def test_grouped_dataset_validation():
    with pytest.raises(ValueError):
        GroupedDataset([])
    with pytest.raises(ValueError):
        GroupedDataset([[1.0]], covariates=[[np.array([1.0])], []])
    with pytest.raises(ValueError):
        GroupedDataset([[1.0, 2.0]],
                       covariates=[[np.array([1.0]), np.array([1.0, 2.0])]])


def test_grouped_dataset_multimark_aggregates():
    data = GroupedDataset([[np.array([1.0, 3.0]), 2.0]])
    assert data.mark_counts[0].tolist() == [2.0, 1.0]
    assert data.mark_sums[0].tolist() == [4.0, 2.0]
    assert data.mark_sumsq[0].tolist() == [10.0, 4.0]
    assert data.n_total == 2


def test_regression_spec_validation():
    with pytest.raises(ValueError):
        RegressionSpec(beta0=np.zeros(2), cov0=np.array([[1.0, 2.0], [0.5, 1.0]]))
    with pytest.raises(ValueError):
        RegressionSpec(beta0=np.zeros(2), cov0=-np.eye(2))
