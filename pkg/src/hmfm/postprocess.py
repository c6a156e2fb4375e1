"""Turn chain output into decisions and scores.

Provides the posterior co-clustering (similarity) matrix, the
variation-of-information point estimate over visited partitions, the
adjusted Rand index, the co-clustering error, posterior predictive density
estimates for both samplers, and the L1 predictive score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .chain import ChainOutput
from .likelihood import GroupedDataset, NigParams

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SimilarityMatrix:
    """Posterior pairwise co-clustering probabilities with the flat-to-
    (group, observation) index map."""

    values: np.ndarray
    index: list[tuple[int, int]]

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PartitionEstimate:
    """A flat clustering over all observations plus its per-group view."""

    labels: np.ndarray           # 1-based, contiguous
    k: int
    by_group: list[np.ndarray]

    @classmethod
    def from_flat(cls, labels: np.ndarray, group_sizes) -> "PartitionEstimate":
        labels = np.asarray(labels, dtype=int)
        # relabel contiguously by first occurrence
        remap: dict[int, int] = {}
        out = np.empty_like(labels)
        for pos, lab in enumerate(labels):
            if lab not in remap:
                remap[lab] = len(remap) + 1
            out[pos] = remap[lab]
        by_group = []
        start = 0
        for nj in group_sizes:
            by_group.append(out[start:start + nj].copy())
            start += nj
        return cls(labels=out, k=len(remap), by_group=by_group)


def similarity(chains: ChainOutput | np.ndarray,
               index=None) -> SimilarityMatrix:
    """Frequency with which every pair of observations shares a cluster
    across the retained iterations."""
    if isinstance(chains, ChainOutput):
        alloc = chains.allocations
        index = chains.index
    else:
        alloc = np.asarray(chains)
    if alloc.ndim != 2 or alloc.shape[0] == 0:
        raise ValueError("need at least one retained iteration")
    n = alloc.shape[1]
    acc = np.zeros((n, n))
    for row in alloc:
        acc += row[:, None] == row[None, :]
    acc /= alloc.shape[0]
    if index is None:
        index = [(0, i) for i in range(n)]
    return SimilarityMatrix(values=acc, index=list(index))


def vi_lower_bound_score(labels: np.ndarray, sim: np.ndarray) -> float:
    """Variation-of-information lower-bound score of one candidate partition
    against the similarity matrix: sum_l log2 of the candidate's cluster
    sizes plus sum_l log2 of the similarity row sums minus twice the mixed
    term.  Lower is better."""
    same = (labels[:, None] == labels[None, :]).astype(float)
    t1 = np.log2(same.sum(axis=1))
    t2 = np.log2(sim.sum(axis=1))
    t3 = np.log2((same * sim).sum(axis=1))
    return float(np.sum(t1) + np.sum(t2) - 2.0 * np.sum(t3))


def min_vi(chains: ChainOutput | np.ndarray,
           sim: SimilarityMatrix) -> PartitionEstimate:
    """Among the partitions visited by the chain, return the minimizer of
    the expected-VI lower bound; ties break toward the first visit."""
    if isinstance(chains, ChainOutput):
        alloc = chains.allocations
        group_sizes = chains.group_sizes
    else:
        alloc = np.asarray(chains)
        group_sizes = (alloc.shape[1],)
    if alloc.shape[0] == 0:
        raise ValueError("need at least one retained iteration")
    seen: dict[bytes, np.ndarray] = {}
    for row in alloc:
        key = row.tobytes()
        if key not in seen:
            seen[key] = row
    best_score = np.inf
    best = None
    for row in seen.values():
        s = vi_lower_bound_score(row, sim.values)
        if s < best_score:
            best_score = s
            best = row
    return PartitionEstimate.from_flat(best, group_sizes)


def ari(truth, est) -> float:
    """Adjusted Rand index between two labelings of the same items."""
    truth = np.asarray(truth)
    est = np.asarray(est)
    if truth.shape != est.shape:
        raise ValueError("labelings must have equal length")
    n = truth.size
    _, ti = np.unique(truth, return_inverse=True)
    _, ei = np.unique(est, return_inverse=True)
    table = np.zeros((ti.max() + 1, ei.max() + 1))
    np.add.at(table, (ti, ei), 1.0)

    def comb2(x):
        return x * (x - 1.0) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def cce(truth_matrix: np.ndarray, sim: SimilarityMatrix | np.ndarray) -> float:
    """Co-clustering error: the L1 distance between the true pairwise
    co-clustering matrix and the similarity matrix, divided by n (not n^2,
    so values scale with the sample size)."""
    pi_hat = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim)
    truth_matrix = np.asarray(truth_matrix, dtype=float)
    if truth_matrix.shape != pi_hat.shape:
        raise ValueError("matrices must share a shape")
    n = truth_matrix.shape[0]
    return float(np.abs(truth_matrix - pi_hat).sum() / n)


def cocluster_matrix(labels) -> np.ndarray:
    """0/1 co-clustering matrix of one labeling."""
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(float)


# ---------------------------------------------------------------------------
# Predictive densities
# ---------------------------------------------------------------------------

def _norm_pdf(x: np.ndarray, mu: float, var: float) -> np.ndarray:
    return np.exp(-0.5 * (x - mu) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def _t_logpdf(x: np.ndarray, df: float, loc: float, scale_sq: float) -> np.ndarray:
    z = (x - loc) ** 2 / (df * scale_sq)
    return (
        gammaln(0.5 * (df + 1.0)) - gammaln(0.5 * df)
        - 0.5 * math.log(df * math.pi * scale_sq)
        - 0.5 * (df + 1.0) * np.log1p(z)
    )


def _nig_predictive_density(grid: np.ndarray, cnt: float, tot: float,
                            ssq: float, prior: NigParams) -> np.ndarray:
    """Posterior predictive density of one mark given cluster statistics:
    a Student t with nu_n degrees of freedom, location mu_n and squared
    scale sigma_n^2 (k_n + 1)/k_n."""
    k_n = prior.k0 + cnt
    nu_n = prior.nu0 + cnt
    if cnt > 0:
        mu_n = (prior.k0 * prior.mu0 + tot) / k_n
        ybar = tot / cnt
        nu_sigma = (prior.nu0 * prior.sigma0_sq + (ssq - tot ** 2 / cnt)
                    + prior.k0 * cnt * (ybar - prior.mu0) ** 2 / k_n)
    else:
        mu_n = prior.mu0
        nu_sigma = prior.nu0 * prior.sigma0_sq
    scale_sq = nu_sigma / nu_n * (k_n + 1.0) / k_n
    return np.exp(_t_logpdf(grid, nu_n, mu_n, scale_sq))


def default_grid(data: GroupedDataset, n_points: int = 512) -> np.ndarray:
    """512 points spanning the data range widened by four standard
    deviations on each side."""
    marks = data.all_marks()
    sd = float(marks.std()) if marks.size > 1 else 1.0
    return np.linspace(float(marks.min()) - 4.0 * sd,
                       float(marks.max()) + 4.0 * sd, n_points)


def predictive_density(chains: ChainOutput, j: int, grid: np.ndarray,
                       data: GroupedDataset | None = None,
                       prior: NigParams | None = None) -> np.ndarray:
    """Pointwise posterior predictive density for group j.

    Conditional chains average the sampled mixtures sum_m (S_jm/T_j)
    N(y | tau_m).  Marginal chains rebuild, per retained iteration, the
    cluster statistics from the stored allocations and average the
    franchise predictive: occupancy-weighted cluster posterior-predictive
    t densities plus the weighted base-measure predictive.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    if chains.n_records == 0:
        raise ValueError("need at least one retained iteration")
    dens = np.zeros_like(grid)
    if chains.components is not None:
        for rec in range(chains.n_records):
            comp = chains.components[rec]
            s_row = comp["S"][j]
            w = s_row / s_row.sum()
            mix = np.zeros_like(grid)
            for m in range(w.shape[0]):
                mix += w[m] * _norm_pdf(grid, comp["mu"][m], comp["sigma2"][m])
            dens += mix
        return dens / chains.n_records

    if data is None or prior is None:
        raise ValueError("marginal chains need the data and the base measure")
    n_counts = np.concatenate([c for c in data.mark_counts])
    n_sums = np.concatenate([s for s in data.mark_sums])
    n_ssq = np.concatenate([s for s in data.mark_sumsq])
    group_of = np.concatenate([
        np.full(nj, g) for g, nj in enumerate(data.group_sizes)])
    for rec in range(chains.n_records):
        labels = chains.allocations[rec] - 1
        k = labels.max() + 1
        occ_j = np.bincount(labels[group_of == j], minlength=k).astype(float)
        cnt = np.bincount(labels, weights=n_counts, minlength=k)
        tot = np.bincount(labels, weights=n_sums, minlength=k)
        ssq = np.bincount(labels, weights=n_ssq, minlength=k)
        gamma_j = chains.gamma[rec, j]
        lam = chains.lam[rec]
        pb = float(np.exp(-np.sum(chains.gamma[rec] * np.log1p(chains.u[rec]))))
        w = np.empty(k + 1)
        w[:k] = occ_j + gamma_j
        w[k] = pb * gamma_j * lam * (k + 1.0 + lam * pb) / (k + lam * pb)
        w /= w.sum()
        mix = w[k] * _nig_predictive_density(grid, 0.0, 0.0, 0.0, prior)
        for l in range(k):
            mix += w[l] * _nig_predictive_density(grid, cnt[l], tot[l], ssq[l], prior)
        dens += mix
    return dens / chains.n_records


def predictive_score(true_density, est: np.ndarray, grid: np.ndarray) -> float:
    """Trapezoidal L1 distance between a true density (callable or values on
    the grid) and an estimated density."""
    grid = np.asarray(grid, dtype=float)
    est = np.asarray(est, dtype=float)
    f = np.asarray(true_density(grid), dtype=float) if callable(true_density) \
        else np.asarray(true_density, dtype=float)
    if f.shape != grid.shape or est.shape != grid.shape:
        raise ValueError("density values must align with the grid")
    tail = 1.0 - np.trapezoid(f, grid)
    if tail > 1e-4:
        import warnings
        warnings.warn(f"grid misses {tail:.2e} of the true density mass")
    return float(np.trapezoid(np.abs(f - est), grid))
