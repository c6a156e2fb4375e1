"""Marginal sampler: the mixing measures are integrated out and the chain
lives on (c, U, gamma, lambda).

Observations are reassigned one at a time through the restaurant-franchise
predictive law: an existing global cluster attracts a group-j observation
with weight (n_jk + gamma_j) times the marginal-likelihood ratio of its
marks, while a brand new cluster is opened with weight
psi_bar(u) * gamma_j * lambda * (K+1+lambda psi_bar)/(K+lambda psi_bar)
times the marginal likelihood of the marks alone.  A cluster disappears
only when its global count reaches zero; a cluster empty in one group but
occupied elsewhere persists.  U and gamma are updated jointly by MALA on
the log scale, the intensity by the same gamma-mixture full conditional the
conditional sampler uses.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import digamma, gammaln

from .chain import (ChainOutput, RunPriors, SamplerConfig, StepSizeAdapter,
                    initial_partition, sample_lambda)
from .likelihood import (GroupedDataset, beta_full_conditional_draw,
                         log_marginal_arrays, nig_posterior, residualize,
                         ClusterSuffStats)
from .prior import NumericalError

_LOG_PI = math.log(math.pi)


def mala_step(x: np.ndarray, logpost_grad, eps: float,
              rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One Langevin proposal with Metropolis correction.

    Returns the new state and the acceptance probability used for step-size
    adaptation.  A non-finite gradient or density aborts the proposal.
    """
    lp, grad = logpost_grad(x)
    if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
        return x, 0.0
    half = 0.5 * eps * eps
    prop = x + half * grad + eps * rng.standard_normal(x.shape)
    lp2, grad2 = logpost_grad(prop)
    if not (np.isfinite(lp2) and np.all(np.isfinite(grad2))):
        return x, 0.0
    fwd = prop - x - half * grad
    bwd = x - prop - half * grad2
    log_alpha = lp2 - lp + (fwd @ fwd - bwd @ bwd) / (2.0 * eps * eps)
    acc = math.exp(min(0.0, log_alpha))
    if rng.random() < acc:
        return prop, acc
    return x, acc


class MarginalSampler:
    """One chain of the collapsed restaurant-franchise sampler."""

    def __init__(self, data: GroupedDataset, config: SamplerConfig,
                 priors: RunPriors):
        self.data = data
        self.config = config
        self.priors = priors
        self.rng = np.random.default_rng(config.seed)
        self.d = data.d
        self.n_j = np.array(data.group_sizes, dtype=float)

        self.lam, self.gamma = priors.resolve(self.d)
        self.hyper = priors.hyper
        self.u = np.ones(self.d)

        self.regression = priors.regression is not None
        if self.regression:
            if data.covariates is None:
                raise ValueError("regression prior given but data has no covariates")
            self.beta = np.tile(priors.regression.beta0, (self.d, 1))
        else:
            self.beta = None
        self._refresh_working_marks()

        labels = initial_partition(data, config, self.rng)
        self.c = [lab.copy() for lab in labels]
        self.k = int(max(lab.max() for lab in self.c)) + 1
        self._rebuild_caches()

        self.u_adapter = StepSizeAdapter(0.3, config.mala_accept_target,
                                         config.adapt_decay)
        self.gamma_adapter = StepSizeAdapter(0.3, config.mala_accept_target,
                                             config.adapt_decay)
        self._reassign_count = 0

    # -- caches -----------------------------------------------------------

    def _refresh_working_marks(self) -> None:
        data = self.data
        if self.regression:
            data = residualize(self.data, self.beta)
        self.w_counts = data.mark_counts
        self.w_sums = data.mark_sums
        self.w_sumsq = data.mark_sumsq
        # per-observation marginal likelihoods for the open-table weight
        if self.config.prior_only:
            self.w_log_m_obs = [np.zeros(nj) for nj in data.group_sizes]
        else:
            self.w_log_m_obs = [
                log_marginal_arrays(self.w_counts[j], self.w_sums[j],
                                    self.w_sumsq[j], self.priors.nig)
                for j in range(self.d)
            ]
        prior = self.priors.nig
        self._c0 = (prior.k0, prior.nu0, prior.mu0,
                    prior.nu0 * prior.sigma0_sq,
                    float(gammaln(0.5 * prior.nu0)),
                    0.5 * math.log(prior.k0),
                    0.5 * prior.nu0 * math.log(prior.nu0 * prior.sigma0_sq))

    def _rebuild_caches(self) -> None:
        """Recompute occupancy counts, mark statistics and the per-cluster
        log marginal likelihood cache from the allocations."""
        k = self.k
        self.counts = np.zeros((self.d, k), dtype=np.int64)
        self.st_cnt = np.zeros(k)
        self.st_sum = np.zeros(k)
        self.st_ssq = np.zeros(k)
        for j in range(self.d):
            self.counts[j] = np.bincount(self.c[j], minlength=k)
            self.st_cnt += np.bincount(self.c[j], weights=self.w_counts[j], minlength=k)
            self.st_sum += np.bincount(self.c[j], weights=self.w_sums[j], minlength=k)
            self.st_ssq += np.bincount(self.c[j], weights=self.w_sumsq[j], minlength=k)
        self._refresh_log_m_cache()

    def _refresh_log_m_cache(self) -> None:
        if self.config.prior_only:
            self.log_m = np.zeros(self.k)
        else:
            self.log_m = log_marginal_arrays(self.st_cnt, self.st_sum,
                                             self.st_ssq, self.priors.nig)

    def _psi_bar(self) -> float:
        return float(np.exp(-np.sum(self.gamma * np.log1p(self.u))))

    def _log_m_scalar(self, cnt: float, tot: float, ssq: float) -> float:
        """Scalar marginal likelihood on the hot path."""
        if cnt <= 0:
            return 0.0
        k0, nu0, mu0, nu0s0, lg_nu0, half_log_k0, half_nu0_log = self._c0
        k_n = k0 + cnt
        nu_n = nu0 + cnt
        ybar = tot / cnt
        nu_sigma = nu0s0 + (ssq - tot * tot / cnt) \
            + k0 * cnt * (ybar - mu0) ** 2 / k_n
        return (-0.5 * cnt * _LOG_PI + math.lgamma(0.5 * nu_n) - lg_nu0
                + half_log_k0 - 0.5 * math.log(k_n)
                + half_nu0_log - 0.5 * nu_n * math.log(nu_sigma))

    def _log_m_vector(self, cnt, tot, ssq):
        """Vector marginal likelihood over clusters (all counts positive)."""
        k0, nu0, mu0, nu0s0, lg_nu0, half_log_k0, half_nu0_log = self._c0
        k_n = k0 + cnt
        nu_n = nu0 + cnt
        ybar = tot / cnt
        nu_sigma = nu0s0 + (ssq - tot * tot / cnt) \
            + k0 * cnt * (ybar - mu0) ** 2 / k_n
        return (-0.5 * cnt * _LOG_PI + gammaln(0.5 * nu_n) - lg_nu0
                + half_log_k0 - 0.5 * np.log(k_n)
                + half_nu0_log - 0.5 * nu_n * np.log(nu_sigma))

    # -- step 1: reassignments ---------------------------------------------

    def reassign_observation(self, j: int, i: int, pb: float | None = None) -> None:
        old = self.c[j][i]
        m_i = self.w_counts[j][i]
        sy_i = self.w_sums[j][i]
        syy_i = self.w_sumsq[j][i]
        prior_only = self.config.prior_only

        # remove the observation, deleting its cluster if globally empty
        self.counts[j, old] -= 1
        self.st_cnt[old] -= m_i
        self.st_sum[old] -= sy_i
        self.st_ssq[old] -= syy_i
        if self.counts[:, old].sum() == 0:
            self._delete_cluster(old)
        elif not prior_only:
            self.log_m[old] = self._log_m_scalar(
                self.st_cnt[old], self.st_sum[old], self.st_ssq[old])

        k = self.k
        gamma_j = self.gamma[j]
        if pb is None:
            pb = self._psi_bar()
        lam_pb = self.lam * pb
        log_new = (
            math.log(pb) + math.log(gamma_j) + math.log(self.lam)
            + math.log(k + 1.0 + lam_pb) - math.log(k + lam_pb)
        )
        if prior_only:
            logw = np.empty(k + 1)
            logw[:k] = np.log(self.counts[j] + gamma_j)
            logw[k] = log_new
        else:
            log_m_with = self._log_m_vector(
                self.st_cnt + m_i, self.st_sum + sy_i, self.st_ssq + syy_i)
            logw = np.empty(k + 1)
            logw[:k] = np.log(self.counts[j] + gamma_j) + log_m_with - self.log_m
            logw[k] = log_new + self.w_log_m_obs[j][i]

        choice = int(np.argmax(logw + self.rng.gumbel(size=k + 1)))
        if choice == k:
            self._append_cluster(j, m_i, sy_i, syy_i)
        else:
            self.counts[j, choice] += 1
            self.st_cnt[choice] += m_i
            self.st_sum[choice] += sy_i
            self.st_ssq[choice] += syy_i
            if not prior_only:
                self.log_m[choice] = float(log_m_with[choice])
        self.c[j][i] = choice

        self._reassign_count += 1
        if self.config.debug_checks and self._reassign_count % 1000 == 0:
            self._check_caches()

    def _delete_cluster(self, k_del: int) -> None:
        self.counts = np.delete(self.counts, k_del, axis=1)
        self.st_cnt = np.delete(self.st_cnt, k_del)
        self.st_sum = np.delete(self.st_sum, k_del)
        self.st_ssq = np.delete(self.st_ssq, k_del)
        self.log_m = np.delete(self.log_m, k_del)
        self.k -= 1
        for j in range(self.d):
            lab = self.c[j]
            lab[lab > k_del] -= 1

    def _append_cluster(self, j: int, m_i: float, sy_i: float, syy_i: float) -> None:
        col = np.zeros((self.d, 1), dtype=np.int64)
        col[j, 0] = 1
        self.counts = np.concatenate([self.counts, col], axis=1)
        self.st_cnt = np.append(self.st_cnt, m_i)
        self.st_sum = np.append(self.st_sum, sy_i)
        self.st_ssq = np.append(self.st_ssq, syy_i)
        if self.config.prior_only:
            self.log_m = np.append(self.log_m, 0.0)
        else:
            self.log_m = np.append(self.log_m,
                                   self._log_m_scalar(m_i, sy_i, syy_i))
        self.k += 1

    def _check_caches(self) -> None:
        counts = self.counts.copy()
        cnt, tot, ssq = self.st_cnt.copy(), self.st_sum.copy(), self.st_ssq.copy()
        self._rebuild_caches()
        assert np.array_equal(counts, self.counts), "occupancy cache diverged"
        for a, b in ((cnt, self.st_cnt), (tot, self.st_sum), (ssq, self.st_ssq)):
            assert np.allclose(a, b, atol=1e-8), "sufficient-stat cache diverged"
        assert np.all(self.counts.sum(axis=0) >= 1)
        assert np.all(self.counts.sum(axis=1) == np.array(self.data.group_sizes))

    # -- step 2: auxiliary variables by MALA ---------------------------------

    def _u_logpost_grad(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        u = np.exp(v)
        w = u / (1.0 + u)
        log1pu = np.log1p(u)
        pb = float(np.exp(-np.sum(self.gamma * log1pu)))
        lam = self.lam
        kk = self.k
        lp = float(np.sum(self.n_j * v - (self.n_j + kk * self.gamma) * log1pu)
                   + math.log(kk + lam * pb) + lam * pb)
        factor = lam * pb * (1.0 + 1.0 / (kk + lam * pb))
        grad = self.n_j - (self.n_j + kk * self.gamma) * w - self.gamma * w * factor
        return lp, grad

    def step_u_mala(self) -> None:
        v = np.log(self.u)
        v, acc = mala_step(v, self._u_logpost_grad, self.u_adapter.step, self.rng)
        self.u = np.exp(v)
        self.u_adapter.update(acc)

    # -- step 3: concentrations by MALA ---------------------------------------

    def _gamma_logpost_grad(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        g = np.exp(w)
        log1pu = np.log1p(self.u)
        pb = float(np.exp(-np.sum(g * log1pu)))
        lam = self.lam
        kk = self.k
        a_g, b_g = self.hyper.a_gamma, self.hyper.b_gamma
        lp = float(np.sum(a_g * w - lam * b_g * g - kk * g * log1pu))
        poch = gammaln(self.counts + g[:, None]) - gammaln(g)[:, None]
        lp += float(poch.sum())
        lp += math.log(kk + lam * pb) + lam * pb
        factor = lam * pb * (1.0 + 1.0 / (kk + lam * pb))
        dig = digamma(self.counts + g[:, None]) - digamma(g)[:, None]
        grad = (a_g - lam * b_g * g - kk * g * log1pu
                + g * dig.sum(axis=1) - g * log1pu * factor)
        return lp, grad

    def step_gamma_mala(self) -> None:
        if self.priors.fix_gamma:
            return
        w = np.log(self.gamma)
        w, acc = mala_step(w, self._gamma_logpost_grad,
                           self.gamma_adapter.step, self.rng)
        self.gamma = np.exp(w)
        self.gamma_adapter.update(acc)

    # -- step 4: intensity ------------------------------------------------------

    def step_lambda(self) -> None:
        if self.priors.fix_lambda:
            return
        self.lam = sample_lambda(self.k, self._psi_bar(), self.hyper,
                                 self.gamma, self.rng)

    # -- regression --------------------------------------------------------------

    def step_beta(self) -> None:
        """Auxiliary draw of the cluster parameters from their conjugate
        posterior, then the conjugate coefficient draw per group."""
        mus = np.empty(self.k)
        s2s = np.empty(self.k)
        for k in range(self.k):
            stats = ClusterSuffStats(int(self.st_cnt[k]), self.st_sum[k],
                                     self.st_ssq[k])
            post = nig_posterior(stats, self.priors.nig)
            prec = self.rng.gamma(0.5 * post.nu0, 2.0 / (post.nu0 * post.sigma0_sq))
            s2s[k] = 1.0 / prec
            mus[k] = self.rng.normal(post.mu0, math.sqrt(s2s[k] / post.k0))
        for j in range(self.d):
            self.beta[j] = beta_full_conditional_draw(
                self.data, self.c, mus, s2s, self.priors.regression, j, self.rng)
        self._refresh_working_marks()
        self._rebuild_caches()

    # -- sweep / run ------------------------------------------------------------

    def sweep(self) -> None:
        pb = self._psi_bar()  # fixed during the reassignment pass
        for j in range(self.d):
            for i in range(self.data.group_sizes[j]):
                self.reassign_observation(j, i, pb)
        self.step_u_mala()
        self.step_gamma_mala()
        self.step_lambda()
        if self.regression:
            self.step_beta()

    def _freeze_adapters(self) -> None:
        self.u_adapter.freeze()
        self.gamma_adapter.freeze()

    def run(self) -> ChainOutput:
        cfg = self.config
        rec_iters, rec_k, rec_lam = [], [], []
        rec_gamma, rec_u, rec_alloc, rec_beta = [], [], [], []
        if cfg.burn_in == 0:
            self._freeze_adapters()
        for t in range(cfg.iterations):
            try:
                self.sweep()
            except NumericalError:
                raise
            except Exception as exc:
                raise NumericalError(f"iteration {t}: {exc}") from exc
            if t + 1 == cfg.burn_in:
                self._freeze_adapters()
            if t >= cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
                rec_iters.append(t)
                rec_k.append(self.k)
                rec_lam.append(self.lam)
                rec_gamma.append(self.gamma.copy())
                rec_u.append(self.u.copy())
                rec_alloc.append(np.concatenate(self.c) + 1)
                if self.regression:
                    rec_beta.append(self.beta.copy())
        n_rec = len(rec_iters)
        return ChainOutput(
            iters=np.array(rec_iters),
            k=np.array(rec_k),
            m=np.zeros(n_rec, dtype=int),  # component count is integrated out
            lam=np.array(rec_lam),
            gamma=np.array(rec_gamma),
            u=np.array(rec_u),
            allocations=np.array(rec_alloc),
            index=self.data.flat_index(),
            group_sizes=self.data.group_sizes,
            components=None,
            beta=np.array(rec_beta) if rec_beta else None,
        )


def run_marginal(data: GroupedDataset, config: SamplerConfig,
                 priors: RunPriors) -> ChainOutput:
    """Run one marginal chain; deterministic given config.seed."""
    return MarginalSampler(data, config, priors).run()
