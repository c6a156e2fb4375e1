"""Data containers and the Gaussian observation model.

Observations are grouped; each observation carries one or more real marks
(repeated measurements share one latent cluster assignment) and optionally a
covariate row for the per-group regression adjustment.  The base measure on
the cluster parameters (mu, sigma^2) is a normal-inverse-gamma, taken as a
prior on (mean, precision): 1/sigma^2 ~ Gamma(nu0/2, nu0*sigma0^2/2) and
mu | sigma^2 ~ N(mu0, sigma^2/k0).  Conjugacy gives closed-form posterior
updates and cluster marginal likelihoods, which both samplers rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

_LOG_PI = float(np.log(np.pi))


@dataclass(frozen=True)
class NigParams:
    """Normal-inverse-gamma parameters (mu0, k0, nu0, sigma0_sq)."""

    mu0: float
    k0: float
    nu0: float
    sigma0_sq: float

    def __post_init__(self):
        for name in ("k0", "nu0", "sigma0_sq"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass
class ClusterSuffStats:
    """Running count, sum and sum of squares of the marks in a cluster."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    def add(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        self.count += values.size
        self.total += float(values.sum())
        self.total_sq += float(np.square(values).sum())

    def remove(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        self.count -= values.size
        self.total -= float(values.sum())
        self.total_sq -= float(np.square(values).sum())
        if self.count < 0:
            raise ValueError("removed more values than the cluster holds")

    def copy(self) -> "ClusterSuffStats":
        return ClusterSuffStats(self.count, self.total, self.total_sq)


@dataclass(frozen=True)
class RegressionSpec:
    """Gaussian prior on the per-group regression coefficients:
    beta_j ~ N(beta0, cov0) i.i.d. over groups."""

    beta0: np.ndarray
    cov0: np.ndarray

    def __post_init__(self):
        beta0 = np.atleast_1d(np.asarray(self.beta0, dtype=float))
        cov0 = np.atleast_2d(np.asarray(self.cov0, dtype=float))
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "cov0", cov0)
        r = beta0.shape[0]
        if cov0.shape != (r, r):
            raise ValueError("cov0 must be r-by-r")
        if not np.allclose(cov0, cov0.T):
            raise ValueError("cov0 must be symmetric")
        try:
            np.linalg.cholesky(cov0)
        except np.linalg.LinAlgError as exc:
            raise ValueError("cov0 must be positive definite") from exc

    @property
    def r(self) -> int:
        return self.beta0.shape[0]


class GroupedDataset:
    """Observations organized in d groups.

    Each group is a list of observations; an observation is a 1-d array of
    marks plus, optionally, a covariate row shared by all its marks.  The
    per-observation aggregates (mark count, sum, sum of squares) used by the
    samplers are precomputed.
    """

    def __init__(self, groups, covariates=None):
        self.groups = [
            [np.atleast_1d(np.asarray(y, dtype=float)) for y in grp]
            for grp in groups
        ]
        self.d = len(self.groups)
        if self.d < 1:
            raise ValueError("need at least one group")
        self.group_sizes = tuple(len(g) for g in self.groups)
        self.covariates = None
        if covariates is not None:
            if len(covariates) != self.d:
                raise ValueError("covariates must have one row list per group")
            self.covariates = []
            r = None
            for j, rows in enumerate(covariates):
                if len(rows) != self.group_sizes[j]:
                    raise ValueError(f"group {j}: covariate rows do not match observations")
                arrs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in rows]
                for x in arrs:
                    if r is None:
                        r = x.shape[0]
                    elif x.shape[0] != r:
                        raise ValueError("covariate dimension differs across observations")
                self.covariates.append(arrs)
            self.r = r
        else:
            self.r = 0
        self._refresh_aggregates()

    def _refresh_aggregates(self) -> None:
        self.mark_counts = [np.array([y.size for y in g], dtype=float) for g in self.groups]
        self.mark_sums = [np.array([y.sum() for y in g]) for g in self.groups]
        self.mark_sumsq = [np.array([np.square(y).sum() for y in g]) for g in self.groups]

    @property
    def n_total(self) -> int:
        return int(sum(self.group_sizes))

    def obs(self, j: int, i: int) -> np.ndarray:
        return self.groups[j][i]

    def flat_index(self):
        """(group, within-group index) pairs in the canonical flat order."""
        return [(j, i) for j in range(self.d) for i in range(self.group_sizes[j])]

    def all_marks(self) -> np.ndarray:
        return np.concatenate([y for g in self.groups for y in g]) if self.n_total else np.empty(0)


def center_groups(data: GroupedDataset) -> tuple[GroupedDataset, np.ndarray]:
    """Subtract the per-group mean of all marks; returns the centered data
    and the means that were removed."""
    means = np.empty(data.d)
    groups = []
    for j, grp in enumerate(data.groups):
        marks = np.concatenate(grp) if grp else np.empty(0)
        mj = float(marks.mean()) if marks.size else 0.0
        means[j] = mj
        groups.append([y - mj for y in grp])
    out = GroupedDataset(groups, covariates=data.covariates)
    return out, means


def residualize(data: GroupedDataset, beta: np.ndarray) -> GroupedDataset:
    """Replace each mark vector by y - X beta_j for its group.

    beta has shape (d, r).  The original mark arrays are kept on the result,
    so restore_residualized() recovers them exactly.
    """
    if data.covariates is None:
        raise ValueError("dataset has no covariates")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.d, data.r):
        raise ValueError(f"beta must have shape ({data.d}, {data.r})")
    groups = []
    for j, grp in enumerate(data.groups):
        shift = [float(x @ beta[j]) for x in data.covariates[j]]
        groups.append([y - s for y, s in zip(grp, shift)])
    out = GroupedDataset(groups, covariates=data.covariates)
    out._residual_source = data  # noqa: SLF001 - kept for exact restore
    return out


def restore_residualized(data: GroupedDataset) -> GroupedDataset:
    """Undo residualize(); returns the dataset it was computed from."""
    src = getattr(data, "_residual_source", None)
    if src is None:
        raise ValueError("dataset was not produced by residualize()")
    return src


# ---------------------------------------------------------------------------
# Conjugate updates
# ---------------------------------------------------------------------------

def nig_posterior(stats: ClusterSuffStats, prior: NigParams) -> NigParams:
    """Posterior NIG parameters given the cluster sufficient statistics.

    k_n = k0 + n, mu_n = (k0 mu0 + sum y)/k_n, nu_n = nu0 + n and
    nu_n sigma_n^2 = nu0 sigma0^2 + sum (y - ybar)^2
    + k0 n (ybar - mu0)^2 / k_n.  Empty statistics return the prior.
    """
    n = stats.count
    if n == 0:
        return prior
    k_n = prior.k0 + n
    mu_n = (prior.k0 * prior.mu0 + stats.total) / k_n
    nu_n = prior.nu0 + n
    ybar = stats.total / n
    ss_within = stats.total_sq - stats.total ** 2 / n
    nu_sigma = (
        prior.nu0 * prior.sigma0_sq
        + ss_within
        + prior.k0 * n * (ybar - prior.mu0) ** 2 / k_n
    )
    return NigParams(mu0=mu_n, k0=k_n, nu0=nu_n, sigma0_sq=nu_sigma / nu_n)


def log_marginal(stats: ClusterSuffStats, prior: NigParams) -> float:
    """Closed-form log marginal likelihood of a cluster's marks under the
    NIG base measure: log integral of prod N(y | mu, sigma^2) dNIG."""
    n = stats.count
    if n == 0:
        return 0.0
    post = nig_posterior(stats, prior)
    return float(
        -0.5 * n * _LOG_PI
        + gammaln(0.5 * post.nu0) - gammaln(0.5 * prior.nu0)
        + 0.5 * (np.log(prior.k0) - np.log(post.k0))
        + 0.5 * prior.nu0 * np.log(prior.nu0 * prior.sigma0_sq)
        - 0.5 * post.nu0 * np.log(post.nu0 * post.sigma0_sq)
    )


def log_marginal_arrays(count, total, total_sq, prior: NigParams):
    """Vectorized log_marginal over parallel arrays of cluster statistics."""
    count = np.asarray(count, dtype=float)
    total = np.asarray(total, dtype=float)
    total_sq = np.asarray(total_sq, dtype=float)
    k_n = prior.k0 + count
    nu_n = prior.nu0 + count
    safe = np.where(count > 0, count, 1.0)
    ss_within = total_sq - total ** 2 / safe
    ybar = total / safe
    nu_sigma = (
        prior.nu0 * prior.sigma0_sq
        + ss_within
        + prior.k0 * count * (ybar - prior.mu0) ** 2 / k_n
    )
    out = (
        -0.5 * count * _LOG_PI
        + gammaln(0.5 * nu_n) - gammaln(0.5 * prior.nu0)
        + 0.5 * (np.log(prior.k0) - np.log(k_n))
        + 0.5 * prior.nu0 * np.log(prior.nu0 * prior.sigma0_sq)
        - 0.5 * nu_n * np.log(nu_sigma)
    )
    return np.where(count > 0, out, 0.0)


def nig_draw(post: NigParams, rng: np.random.Generator) -> tuple[float, float]:
    """Sample (mu, sigma^2): 1/sigma^2 ~ Gamma(nu/2, nu sigma^2/2), then
    mu | sigma^2 ~ N(mu_n, sigma^2/k_n)."""
    precision = rng.gamma(0.5 * post.nu0, 2.0 / (post.nu0 * post.sigma0_sq))
    sigma_sq = 1.0 / precision
    mu = rng.normal(post.mu0, np.sqrt(sigma_sq / post.k0))
    return float(mu), float(sigma_sq)


def nig_log_density(mu, sigma_sq, params: NigParams):
    """Log density of (mu, sigma^2) under the NIG law (precision Gamma)."""
    mu = np.asarray(mu, dtype=float)
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    a = 0.5 * params.nu0
    b = 0.5 * params.nu0 * params.sigma0_sq
    # precision ~ Gamma(a, b) transformed to sigma^2 adds a -2 log sigma^2 term
    log_prec_part = a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(sigma_sq) - b / sigma_sq
    log_mu_part = (
        -0.5 * np.log(2.0 * np.pi * sigma_sq / params.k0)
        - 0.5 * params.k0 * (mu - params.mu0) ** 2 / sigma_sq
    )
    return log_prec_part + log_mu_part


def beta_full_conditional_draw(data: GroupedDataset, allocations, mus, sigma_sqs,
                               spec: RegressionSpec, j: int,
                               rng: np.random.Generator) -> np.ndarray:
    """Conjugate draw of the group-j regression coefficients given every
    observation's cluster mean and variance.

    Precision V*^-1 = cov0^-1 + sum_i X_i' X_i / sigma^2_{c_i} and mean
    m* = V* (cov0^-1 beta0 + sum_i X_i' (y_i - mu_{c_i} 1) / sigma^2_{c_i}).
    Note the responses here are the raw (non-residualized) marks.
    """
    if data.covariates is None:
        raise ValueError("dataset has no covariates")
    prec0 = np.linalg.inv(spec.cov0)
    precision = prec0.copy()
    shift = prec0 @ spec.beta0
    for i in range(data.group_sizes[j]):
        k = allocations[j][i]
        s2 = sigma_sqs[k]
        y = data.groups[j][i]
        x = data.covariates[j][i]
        n_i = y.size
        precision += n_i * np.outer(x, x) / s2
        shift += x * float((y - mus[k]).sum()) / s2
    chol = np.linalg.cholesky(precision)
    mean = np.linalg.solve(precision, shift)
    z = rng.standard_normal(spec.r)
    return mean + np.linalg.solve(chol.T, z)
