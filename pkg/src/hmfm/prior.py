"""Prior calculus for vectors of finite Dirichlet processes (Vec-FDP).

A Vec-FDP is a vector of d dependent random probability measures sharing a
common set of M atoms, where M is 1-shifted Poisson(lambda) and the
unnormalized weights of group j are i.i.d. Gamma(gamma_j, 1).  This module
evaluates every distributional quantity of that prior in closed or
quadrature form: Laplace kernels, the Psi function, the partially
exchangeable partition probability function (pEPPF), the prior law of the
number of global clusters, pairwise correlation and coskewness of the
measures, mixed moments, central generalized factorial coefficients, the
hyperparameter elicitation rule, and exact prior simulation.

All probability arithmetic is carried out in the log domain; Pochhammer
symbols are log-gamma differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp


class NumericalError(RuntimeError):
    """A quadrature or series evaluation failed to reach its tolerance."""


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VecFdpParams:
    """Prior triple of a Vec-FDP: group count d, intensity lambda, and the
    per-group Dirichlet concentrations gamma_1..gamma_d."""

    d: int
    lam: float
    gamma: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if len(self.gamma) != self.d:
            raise ValueError(f"need {self.d} gamma values, got {len(self.gamma)}")
        if any(not g > 0 for g in self.gamma):
            raise ValueError(f"all gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class HyperPriorParams:
    """Hyperprior for (lambda, gamma): gamma_j | lambda ~ Gamma(a_gamma,
    lambda*b_gamma) i.i.d. and lambda ~ Gamma(a_lambda, b_lambda)."""

    a_gamma: float
    b_gamma: float
    a_lambda: float
    b_lambda: float

    def __post_init__(self):
        for name in ("a_gamma", "b_gamma", "a_lambda", "b_lambda"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class ElicitationSpec:
    """Interpretable reparametrization of the hyperprior: prior mean lambda0
    and variance v_lambda of the intensity, and a common guess gamma0 for the
    concentrations, for d groups."""

    lambda0: float
    v_lambda: float
    gamma0: float
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        for name in ("lambda0", "v_lambda", "gamma0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class GroupCounts:
    """Cluster occupancy of a grouped sample: K global clusters with counts
    counts[j][k] = number of group-j observations in cluster k.

    Every cluster must be occupied somewhere (column sums >= 1) and row sums
    define the group sizes n_j.
    """

    k: int
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        counts = tuple(tuple(int(c) for c in row) for row in self.counts)
        object.__setattr__(self, "counts", counts)
        if self.k < 0:
            raise ValueError("k must be >= 0")
        for row in counts:
            if len(row) != self.k:
                raise ValueError("every counts row must have k entries")
            if any(c < 0 for c in row):
                raise ValueError("counts must be non-negative")
        for col in range(self.k):
            if sum(row[col] for row in counts) < 1:
                raise ValueError(f"cluster {col} is empty in every group")

    @property
    def d(self) -> int:
        return len(self.counts)

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)


# ---------------------------------------------------------------------------
# Laplace kernels and the Psi function
# ---------------------------------------------------------------------------

def psi(u: float, gamma: float) -> float:
    """Laplace transform of a Gamma(gamma, 1) weight: (1 + u)^(-gamma)."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if u < 0:
        raise ValueError(f"u must be >= 0, got {u}")
    return float((1.0 + u) ** (-gamma))


def log_kappa(u: float, n: int, gamma: float) -> float:
    """Log of the n-th moment-weighted Laplace kernel of Gamma(gamma, 1).

    exp(log_kappa(u, n, gamma)) equals the integral of exp(-u*s) * s^n
    against the Gamma(gamma, 1) density, i.e.
    Gamma(n + gamma) / Gamma(gamma) * (1 + u)^(-(n + gamma)).
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if u < 0:
        raise ValueError(f"u must be >= 0, got {u}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return float(gammaln(n + gamma) - gammaln(gamma) - (n + gamma) * np.log1p(u))


def psi_bar(u: Sequence[float], params: VecFdpParams) -> float:
    """Product of the group Laplace transforms, prod_j (1 + u_j)^(-gamma_j)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (params.d,):
        raise ValueError(f"u must have length d={params.d}")
    if np.any(u < 0):
        raise ValueError("all u components must be >= 0")
    return float(np.exp(-np.sum(np.asarray(params.gamma) * np.log1p(u))))


def log_psi_big(k: int, u: Sequence[float], params: VecFdpParams) -> float:
    """Log of Psi(k, u) for the 1-shifted-Poisson component count.

    Closed form: Psi(k, u) = lambda^(k-1) * (k + lambda * psi_bar(u))
    * exp(-lambda * (1 - psi_bar(u))), where psi_bar is the product of the
    group Laplace transforms.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    pb = psi_bar(u, params)
    lam = params.lam
    return float((k - 1) * np.log(lam) + np.log(k + lam * pb) - lam * (1.0 - pb))


# ---------------------------------------------------------------------------
# Central generalized factorial coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GfcTable:
    """Triangular table of log |C(n, k; -gamma)| for 0 <= k <= n <= n_max.

    These coefficients aggregate the composition sums appearing in the prior
    law of the number of clusters; |C(n, n; -gamma)| = gamma^n and
    |C(n, 0; -gamma)| = 0 for n >= 1.
    """

    n_max: int
    gamma: float
    log_values: np.ndarray = field(repr=False)

    def log_abs(self, n: int, k: int) -> float:
        """log |C(n, k; -gamma)|; -inf where the coefficient vanishes."""
        if n < 0 or n > self.n_max:
            raise ValueError(f"n out of range 0..{self.n_max}: {n}")
        if k < 0 or k > n:
            return -np.inf
        return float(self.log_values[n, k])


def gfc_table(n_max: int, gamma: float) -> GfcTable:
    """Tabulate log |C(n, k; -gamma)| by the triangular recurrence
    A(n+1, k) = gamma * A(n, k-1) + (n + k*gamma) * A(n, k),
    with A(0, 0) = 1.  All terms are positive, so log-sum-exp is exact.
    """
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    lg = math.log(gamma)
    tab = np.full((n_max + 1, n_max + 1), -np.inf)
    tab[0, 0] = 0.0
    for n in range(n_max):
        for k in range(1, n + 2):
            terms = []
            if tab[n, k - 1] > -np.inf:
                terms.append(lg + tab[n, k - 1])
            if k <= n and tab[n, k] > -np.inf:
                terms.append(math.log(n + k * gamma) + tab[n, k])
            if terms:
                tab[n + 1, k] = logsumexp(terms)
    return GfcTable(n_max=n_max, gamma=float(gamma), log_values=tab)


# ---------------------------------------------------------------------------
# pEPPF
# ---------------------------------------------------------------------------

_TS_CACHE: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _tanh_sinh_01(h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Double-exponential nodes on (0, 1): returns (log x, log(1-x), log w).

    Nodes are x = sigmoid(pi sinh(kh)); both log x and log(1-x) are formed
    from the sinh argument directly, so the endpoint clustering costs no
    precision.  The endpoint algebraic behaviour of the V integrand makes
    this rule converge much faster than Gauss-Legendre here.
    """
    if h not in _TS_CACHE:
        k_max = int(math.asinh(700.0 / math.pi) / h)
        kk = np.arange(-k_max, k_max + 1, dtype=float)
        s = math.pi * np.sinh(kk * h)  # x = 1/(1 + exp(-s))
        log_x = -np.logaddexp(0.0, -s)
        log_1mx = -np.logaddexp(0.0, s)
        # w = h * pi * cosh(kh) * x * (1 - x)
        log_w = math.log(h * math.pi) + np.log(np.cosh(kk * h)) + log_x + log_1mx
        keep = log_w > -745.0
        _TS_CACHE[h] = (log_x[keep], log_1mx[keep], log_w[keep])
    return _TS_CACHE[h]


def _log_v_integrand_1d(log_x: np.ndarray, n_j: int, gamma_j: float,
                        k: int) -> np.ndarray:
    """Log of the group-j factor of the V integrand after the change of
    variables x = (1 + u)^(-gamma); the bounded x^(k-1) behaviour near 0
    keeps everything finite for k >= 1."""
    expo = (n_j + k * gamma_j - 1.0) / gamma_j - 1.0
    out = expo * log_x - math.log(gamma_j) - gammaln(n_j)
    if n_j > 1:
        # log(x^(-1/g) - 1); -inf at the x=1 endpoint is the correct limit
        with np.errstate(divide="ignore"):
            log_xm = -log_x / gamma_j + np.log1p(-np.exp(log_x / gamma_j))
        out = out + (n_j - 1) * log_xm
    return out


def _log_v_quadrature(k: int, group_sizes: Sequence[int], params: VecFdpParams,
                      h: float) -> float:
    """Tensor tanh-sinh evaluation of log V(k) on (0, 1)^d."""
    d = params.d
    log_x, _log_1mx, log_w = _tanh_sinh_01(h)
    logf = [
        _log_v_integrand_1d(log_x, group_sizes[j], params.gamma[j], k) + log_w
        for j in range(d)
    ]
    # accumulate the tensor product one dimension at a time, keeping the
    # Psi factor (which couples dimensions through prod x_j) for the end
    log_prod_x = np.zeros(1)
    acc = np.zeros(1)
    for j in range(d):
        acc = (acc[:, None] + logf[j][None, :]).reshape(-1)
        log_prod_x = (log_prod_x[:, None] + log_x[None, :]).reshape(-1)
    lam = params.lam
    prod_x = np.exp(log_prod_x)
    log_psi_term = (
        (k - 1) * math.log(lam)
        + np.log(k + lam * prod_x)
        - lam * (1.0 - prod_x)
    )
    return float(logsumexp(acc + log_psi_term))


def log_v(k: int, group_sizes: Sequence[int], params: VecFdpParams,
          rel_tol: float = 1e-8) -> float:
    """Log of the V(k; gamma, lambda) normalizing integral of the pEPPF.

    Evaluated by tensor double-exponential quadrature after mapping each
    axis to (0, 1); halving the step provides the convergence estimate.
    Monte Carlo importance sampling takes over for more than three groups.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    group_sizes = [int(n) for n in group_sizes]
    if len(group_sizes) != params.d:
        raise ValueError("group_sizes must have length d")
    if any(n < 1 for n in group_sizes):
        raise ValueError("group sizes must be >= 1")
    if params.d <= 3:
        h = 0.1 if params.d < 3 else 0.2
        coarse = _log_v_quadrature(k, group_sizes, params, h)
        fine = _log_v_quadrature(k, group_sizes, params, h / 2.0)
        rel_err = abs(np.expm1(coarse - fine))
        if not np.isfinite(fine) or rel_err > rel_tol:
            raise NumericalError(
                f"V({k}) quadrature did not converge: rel err {rel_err:.2e}"
            )
        return fine
    return _log_v_monte_carlo(k, group_sizes, params)


def _log_v_monte_carlo(k: int, group_sizes: Sequence[int], params: VecFdpParams,
                       draws: int = 200_000, seed: int = 0) -> float:
    """Importance-sampled log V(k) for d > 3, uniform proposal on (0, 1)^d."""
    rng = np.random.default_rng(seed)
    d = params.d
    x = rng.random((draws, d))
    logf = np.zeros(draws)
    for j in range(d):
        logf += _log_v_integrand_1d(x[:, j], group_sizes[j], params.gamma[j], k)
    prod_x = np.prod(x, axis=1)
    lam = params.lam
    logf += (k - 1) * math.log(lam) + np.log(k + lam * prod_x) - lam * (1.0 - prod_x)
    m = logsumexp(logf) - math.log(draws)
    # report-by-exception: flag unusably noisy estimates
    se = np.std(np.exp(logf - m)) / math.sqrt(draws)
    if not np.isfinite(m) or se > 0.05:
        raise NumericalError(f"V({k}) Monte Carlo too noisy (rel SE {se:.3f})")
    return float(m)


def log_peppf(counts: GroupCounts, params: VecFdpParams) -> float:
    """Log pEPPF of a labeled partition with the given per-group counts:
    log V(K) plus the log Pochhammer terms sum_j sum_k
    [lgamma(n_jk + gamma_j) - lgamma(gamma_j)].
    """
    if counts.d != params.d:
        raise ValueError("counts and params disagree on the number of groups")
    if counts.k == 0:
        return 0.0 if sum(counts.group_sizes) == 0 else -np.inf
    lp = log_v(counts.k, counts.group_sizes, params)
    for j in range(params.d):
        g = params.gamma[j]
        for njk in counts.counts[j]:
            lp += gammaln(njk + g) - gammaln(g)
    return float(lp)


def log_peppf_given_u(counts: GroupCounts, u: Sequence[float],
                      params: VecFdpParams) -> float:
    """Unnormalized log partition weight conditional on the auxiliary vector
    u: log Psi(K, u) + sum_j sum_k log kappa_j(u_j, n_jk).  Used by sampler
    correctness tests at fixed u."""
    if counts.d != params.d:
        raise ValueError("counts and params disagree on the number of groups")
    lp = log_psi_big(counts.k, u, params)
    for j in range(params.d):
        for njk in counts.counts[j]:
            lp += log_kappa(float(u[j]), njk, params.gamma[j])
    return float(lp)


# ---------------------------------------------------------------------------
# Prior law of the number of global clusters
# ---------------------------------------------------------------------------

def _log_series_sum(log_term: Callable[[int], float], rel_tol: float,
                    max_terms: int) -> float:
    """Log-sum of a positive series with super-geometric tail decay.

    Stops once a term's relative contribution drops below rel_tol while the
    terms are decreasing; raises if the cap is hit first.
    """
    acc = -np.inf
    prev = np.inf
    for m in range(max_terms):
        lt = log_term(m)
        acc = np.logaddexp(acc, lt)
        if lt < prev and lt - acc < math.log(rel_tol):
            return float(acc)
        prev = lt
    raise NumericalError(f"series did not converge within {max_terms} terms")


def prior_k(n: Sequence[int], params: VecFdpParams, k: int,
            rel_tol: float = 1e-12, max_terms: int = 100_000,
            _tables: dict | None = None) -> float:
    """Prior probability that a sample with one or two groups of sizes n
    exhibits exactly k global clusters.

    Combines the generalized-factorial-coefficient double sum over the
    per-group empty-cluster counts with the Poisson-weighted series over the
    number of non-allocated components.  A single group is handled by
    passing the second size as zero.
    """
    n = [int(v) for v in n]
    if len(n) == 1:
        n = n + [0]
        if params.d == 1:
            params = VecFdpParams(d=2, lam=params.lam,
                                  gamma=(params.gamma[0], params.gamma[0]))
    if len(n) != 2:
        raise ValueError("prior on the cluster count is available for at most two groups")
    if params.d != 2:
        raise ValueError("params must describe the same number of groups as n")
    n1, n2 = n
    ntot = n1 + n2
    if not 1 <= k <= ntot:
        return 0.0

    if _tables is not None and "t1" in _tables:
        t1, t2 = _tables["t1"], _tables["t2"]
    else:
        t1 = gfc_table(max(n1, 0), params.gamma[0]) if n1 else None
        t2 = gfc_table(max(n2, 0), params.gamma[1]) if n2 else None
        if _tables is not None:
            _tables["t1"], _tables["t2"] = t1, t2

    def log_gfc(table: GfcTable | None, nn: int, kk: int) -> float:
        if nn == 0:
            return 0.0 if kk == 0 else -np.inf
        return table.log_abs(nn, kk)

    # double sum over the counts of empty clusters in each group
    parts = []
    for r1 in range(k + 1):
        la = log_gfc(t1, n1, k - r1)
        if la == -np.inf:
            continue
        for r2 in range(k - r1 + 1):
            lb = log_gfc(t2, n2, k - r2)
            if lb == -np.inf:
                continue
            lcoef = (
                gammaln(k - r1 + 1) + gammaln(k - r2 + 1)
                - gammaln(r1 + 1) - gammaln(r2 + 1) - gammaln(k - r1 - r2 + 1)
            )
            parts.append(lcoef + la + lb)
    if not parts:
        return 0.0
    log_double_sum = logsumexp(parts)

    lam = params.lam
    g1, g2 = params.gamma
    log_lam = math.log(lam)

    def log_term(m: int) -> float:
        mk = m + k
        lt = -lam + (mk - 1) * log_lam + math.log(mk) - gammaln(m + 1)
        if n1:
            lt += gammaln(g1 * mk) - gammaln(g1 * mk + n1)
        if n2:
            lt += gammaln(g2 * mk) - gammaln(g2 * mk + n2)
        return lt

    log_series = _log_series_sum(log_term, rel_tol, max_terms)
    return float(np.exp(log_series + log_double_sum))


def prior_k_pmf(n: Sequence[int], params: VecFdpParams) -> np.ndarray:
    """Full prior pmf of the number of global clusters, indexed 1..sum(n)."""
    n = [int(v) for v in n]
    ntot = sum(n)
    tables: dict = {}
    two = n if len(n) == 2 else n + [0]
    if len(n) == 1 and params.d == 1:
        params = VecFdpParams(d=2, lam=params.lam,
                              gamma=(params.gamma[0], params.gamma[0]))
    pmf = np.array([prior_k(two, params, k, _tables=tables)
                    for k in range(1, ntot + 1)])
    return pmf


# ---------------------------------------------------------------------------
# Moments, correlation, coskewness
# ---------------------------------------------------------------------------

def mixed_moment(n_j: int, n_l: int, p0a: float, params: VecFdpParams) -> float:
    """E[P_j(A)^n_j * P_l(A)^n_l] = sum_k P0(A)^k P(K_(n_j,n_l) = k)."""
    if n_j + n_l < 1:
        raise ValueError("n_j + n_l must be >= 1")
    if not 0 < p0a < 1:
        raise ValueError(f"p0a must lie in (0, 1), got {p0a}")
    tables: dict = {}
    return float(sum(
        p0a ** k * prior_k((n_j, n_l), params, k, _tables=tables)
        for k in range(1, n_j + n_l + 1)
    ))


def _corr_weight_integral(gamma: float, lam: float) -> float:
    """I(gamma, lambda) = int_0^1 (1+lam*x) e^(-lam(1-x)) (1-x^(1/gamma)) dx."""
    def f(x: float) -> float:
        if x <= 0.0:
            return math.exp(-lam)
        t = 1.0 - math.exp(math.log(x) / gamma)
        return (1.0 + lam * x) * math.exp(-lam * (1.0 - x)) * t

    val, err = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-11,
                              limit=400, points=[1.0 - 1e-6])
    if val <= 0 or err > 1e-8 * val:
        raise NumericalError(
            f"correlation quadrature failed (value {val:.3e}, err {err:.3e})"
        )
    return val


def correlation(params: VecFdpParams, j: int = 0, l: int = 1) -> float:
    """Pairwise correlation corr(P_j(A), P_l(A)), free of the choice of A.

    Equals P(K_(1,1) = 1) / sqrt(P(K_j,(2) = 1) * P(K_l,(2) = 1)) with
    P(K_(1,1) = 1) = (1 - e^-lam)/lam and P(K_j,(2) = 1) =
    (gamma_j + 1) * I(gamma_j, lam).
    """
    if j == l:
        raise ValueError("j and l must index distinct groups")
    for idx in (j, l):
        if not 0 <= idx < params.d:
            raise ValueError(f"group index {idx} out of range for d={params.d}")
    lam = params.lam
    num = -math.expm1(-lam) / lam
    pj = (params.gamma[j] + 1.0) * _corr_weight_integral(params.gamma[j], lam)
    pl = (params.gamma[l] + 1.0) * _corr_weight_integral(params.gamma[l], lam)
    return float(num / math.sqrt(pj * pl))


def single_cluster_prob(gamma: float, lam: float) -> float:
    """P(K_j,(2) = 1): probability two same-group draws share one cluster."""
    return (gamma + 1.0) * _corr_weight_integral(gamma, lam)


def coskewness(params: VecFdpParams, p0a: float) -> float:
    """Coskewness CoSk(P_j(A), P_l(A)) for the first two groups, with
    p0a = P0(A).

    Expands E[(X - p)^2 (Y - p)] through the mixed moments driven by the
    cluster-count laws K_(2,1), K_j,(2) and K_(1,1), divided by
    Var(P_j(A)) * sd(P_l(A)).
    """
    if params.d < 2:
        raise ValueError("coskewness needs at least two groups")
    if not 0 < p0a < 1:
        raise ValueError(f"p0a must lie in (0, 1), got {p0a}")
    p = p0a
    lam = params.lam
    gj, gl = params.gamma[0], params.gamma[1]
    pair = VecFdpParams(d=2, lam=lam, gamma=(gj, gl))
    e21 = mixed_moment(2, 1, p, pair)
    e2j = mixed_moment(2, 0, p, VecFdpParams(d=2, lam=lam, gamma=(gj, gj)))
    pk11 = prior_k((1, 1), pair, 1)
    var_j = single_cluster_prob(gj, lam) * p * (1.0 - p)
    var_l = single_cluster_prob(gl, lam) * p * (1.0 - p)
    num = e21 - p * e2j - 2.0 * p * p * (1.0 - p) * pk11
    return float(num / (var_j * math.sqrt(var_l)))


# ---------------------------------------------------------------------------
# Elicitation and simulation
# ---------------------------------------------------------------------------

def elicit(spec: ElicitationSpec) -> HyperPriorParams:
    """Map (lambda0, v_lambda, gamma0, d) to (a_gamma, b_gamma, a_lambda,
    b_lambda) via the sample-equivalence rule:
    a_gamma = lambda0^2 / (d * v_lambda), b_gamma = a_gamma / (gamma0 *
    lambda0), a_lambda = lambda0^2 / v_lambda, b_lambda = lambda0 / v_lambda.
    """
    a_gamma = spec.lambda0 ** 2 / (spec.d * spec.v_lambda)
    b_gamma = a_gamma / (spec.gamma0 * spec.lambda0)
    a_lambda = spec.lambda0 ** 2 / spec.v_lambda
    b_lambda = spec.lambda0 / spec.v_lambda
    return HyperPriorParams(a_gamma=a_gamma, b_gamma=b_gamma,
                            a_lambda=a_lambda, b_lambda=b_lambda)


@dataclass(frozen=True)
class PriorRealization:
    """One draw from the Vec-FDP prior: M atoms from the base measure and a
    d-by-M matrix of unnormalized Gamma weights."""

    m: int
    atoms: np.ndarray
    weights: np.ndarray  # shape (d, m)

    def measure_on_set(self, indicator: np.ndarray) -> np.ndarray:
        """P_j(A) for all groups given per-atom membership indicators."""
        tot = self.weights.sum(axis=1)
        return (self.weights * indicator[None, :]).sum(axis=1) / tot


def prior_simulate(params: VecFdpParams, rng: np.random.Generator,
                   base_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
                   ) -> PriorRealization:
    """Draw (M, atoms, weights) from the prior: M is 1 + Poisson(lambda),
    weights S_jm are Gamma(gamma_j, 1), atoms come from the base measure
    (standard normal unless a sampler is supplied)."""
    m = 1 + int(rng.poisson(params.lam))
    if base_sampler is None:
        atoms = rng.standard_normal(m)
    else:
        atoms = np.asarray(base_sampler(rng, m))
    weights = np.empty((params.d, m))
    for j in range(params.d):
        weights[j] = rng.gamma(params.gamma[j], 1.0, size=m)
    return PriorRealization(m=m, atoms=atoms, weights=weights)
