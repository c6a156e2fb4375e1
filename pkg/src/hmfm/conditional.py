"""Blocked Gibbs sampler for the hierarchical mixture of finite mixtures.

The chain state is (c, tau, S, M, U, lambda, gamma) plus optional regression
coefficients.  One sweep updates, in order:

1. the allocations given the weights and component parameters (after which
   components are relabeled so the allocated ones occupy the first K slots),
   then the component parameters, then the regression coefficients when
   active;
2. with the weights and auxiliaries marginalized out: the intensity (a gamma
   draw given the component count), the number of components through an
   adaptive integer random walk on the collapsed target, and each
   concentration through a log-scale random walk on its collapsed target;
3. the re-augmentation: the auxiliaries from their weight-marginalized law
   (u_j = t/(1-t) with t ~ Beta(n_j, M gamma_j), whose weight-conditional
   form is the familiar Gamma(n_j, T_j)), then the unnormalized weights
   (allocated Gamma(gamma_j + n_jk, u_j + 1), idle Gamma(gamma_j, u_j + 1)).

Every draw is an exact full conditional of either the augmented joint or
the weight-marginalized joint, and the marginalized coordinates are always
regenerated before the next step conditions on them, so the sweep leaves
the posterior invariant.  Interleaving the collapsed scalar updates with
stale weights (for example drawing U before resizing the component set)
measurably biases the intensity, which is why the re-augmentation comes
last.

A prior-only mode replaces the likelihood with a constant so the chain must
reproduce the prior law of the partition; it exists for Gibbs-correctness
tests and is documented as a validation feature.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .chain import (ChainOutput, RunPriors, SamplerConfig, StepSizeAdapter,
                    initial_partition)
from .likelihood import GroupedDataset, beta_full_conditional_draw, residualize
from .prior import NumericalError

_LOG_2PI = math.log(2.0 * math.pi)


class ConditionalSampler:
    """One chain of the blocked Gibbs sampler over mixtures and clustering."""

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
        self.m = self.k + 1
        self.counts = self._counts_from_labels()
        self.mu = np.zeros(self.m)
        self.s2 = np.ones(self.m)
        self.step_tau()
        self.S = np.empty((self.d, self.m))
        self.step_s()

        self.m_adapter = StepSizeAdapter(1.0, config.rw_accept_target,
                                         config.adapt_decay)
        self.gamma_adapters = [
            StepSizeAdapter(0.5, config.rw_accept_target, config.adapt_decay)
            for _ in range(self.d)
        ]
        self._cap_warned = False

    # -- working responses (residualized when regression is active) --------

    def _refresh_working_marks(self) -> None:
        data = self.data
        if self.regression:
            data = residualize(self.data, self.beta)
        self.w_counts = data.mark_counts
        self.w_sums = data.mark_sums
        self.w_sumsq = data.mark_sumsq

    def _counts_from_labels(self) -> np.ndarray:
        counts = np.zeros((self.d, self.k), dtype=int)
        for j in range(self.d):
            counts[j] = np.bincount(self.c[j], minlength=self.k)
        return counts

    # -- step 1.1: allocations ---------------------------------------------

    def step_allocations(self) -> None:
        # a tiny-shape gamma draw can underflow to 0; -inf weight is correct
        with np.errstate(divide="ignore"):
            log_s = np.log(self.S)
        for j in range(self.d):
            logw = np.broadcast_to(log_s[j], (self.data.group_sizes[j], self.m)).copy()
            if not self.config.prior_only:
                n_i = self.w_counts[j][:, None]
                sy = self.w_sums[j][:, None]
                syy = self.w_sumsq[j][:, None]
                mu = self.mu[None, :]
                s2 = self.s2[None, :]
                logw += (
                    -0.5 * n_i * (_LOG_2PI + np.log(s2))
                    - 0.5 * (syy - 2.0 * sy * mu + n_i * mu * mu) / s2
                )
            gum = self.rng.gumbel(size=logw.shape)
            self.c[j] = np.argmax(logw + gum, axis=1)
        self._relabel()

    def _relabel(self) -> None:
        """Permute components so the allocated ones occupy slots 0..K-1."""
        occupied = np.zeros(self.m, dtype=bool)
        for lab in self.c:
            occupied[lab] = True
        allocated = np.flatnonzero(occupied)
        free = np.flatnonzero(~occupied)
        perm = np.concatenate([allocated, free])
        inv = np.empty(self.m, dtype=int)
        inv[perm] = np.arange(self.m)
        self.k = allocated.size
        self.mu = self.mu[perm]
        self.s2 = self.s2[perm]
        self.S = self.S[:, perm]
        for j in range(self.d):
            self.c[j] = inv[self.c[j]]
        self.counts = self._counts_from_labels()

    # -- step 1.2: component parameters -------------------------------------

    def _cluster_mark_stats(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cnt = np.zeros(self.k)
        tot = np.zeros(self.k)
        totsq = np.zeros(self.k)
        for j in range(self.d):
            cnt += np.bincount(self.c[j], weights=self.w_counts[j], minlength=self.k)
            tot += np.bincount(self.c[j], weights=self.w_sums[j], minlength=self.k)
            totsq += np.bincount(self.c[j], weights=self.w_sumsq[j], minlength=self.k)
        return cnt, tot, totsq

    def step_tau(self) -> None:
        prior = self.priors.nig
        k = self.k
        if self.config.prior_only:
            k = 0
        else:
            cnt, tot, totsq = self._cluster_mark_stats()
            k_n = prior.k0 + cnt
            mu_n = (prior.k0 * prior.mu0 + tot) / k_n
            nu_n = prior.nu0 + cnt
            safe = np.where(cnt > 0, cnt, 1.0)
            ybar = tot / safe
            nu_sigma = (
                prior.nu0 * prior.sigma0_sq
                + (totsq - tot ** 2 / safe)
                + prior.k0 * cnt * (ybar - prior.mu0) ** 2 / k_n
            )
            prec = self.rng.gamma(0.5 * nu_n, 2.0 / nu_sigma)
            self.s2[:k] = 1.0 / prec
            self.mu[:k] = self.rng.normal(mu_n, np.sqrt(self.s2[:k] / k_n))
        n_free = self.m - k
        if n_free > 0:
            prec = self.rng.gamma(0.5 * prior.nu0,
                                  2.0 / (prior.nu0 * prior.sigma0_sq),
                                  size=n_free)
            self.s2[k:] = 1.0 / prec
            self.mu[k:] = self.rng.normal(prior.mu0,
                                          np.sqrt(self.s2[k:] / prior.k0))

    def step_beta(self) -> None:
        for j in range(self.d):
            self.beta[j] = beta_full_conditional_draw(
                self.data, self.c, self.mu, self.s2, self.priors.regression,
                j, self.rng)
        self._refresh_working_marks()

    # -- step 1.3: unnormalized weights --------------------------------------

    def step_s(self) -> None:
        shape = np.tile(self.gamma[:, None], (1, self.m))
        shape[:, :self.k] += self.counts
        scale = 1.0 / (self.u + 1.0)
        self.S = self.rng.gamma(shape, scale[:, None])

    # -- intensity (weights marginalized) -------------------------------------

    def step_lambda(self) -> None:
        """Exact conditional given the component count: the prior terms for
        lambda, the concentrations, and the 1-shifted Poisson collapse to
        Gamma(a_lambda + d a_gamma + M - 1, b_lambda + b_gamma sum gamma + 1)."""
        if self.priors.fix_lambda:
            return
        shape = self.hyper.a_lambda + self.d * self.hyper.a_gamma + self.m - 1.0
        rate = self.hyper.b_lambda + self.hyper.b_gamma * float(self.gamma.sum()) + 1.0
        self.lam = float(self.rng.gamma(shape, 1.0 / rate))

    # -- auxiliary variables ----------------------------------------------------

    def step_u(self) -> None:
        """Weight-marginalized draw of the auxiliaries given (c, M, gamma):
        u_j is beta-prime(n_j, M gamma_j), drawn as a ratio of gammas.
        Conditionally on the weights this law is the usual Gamma(n_j, T_j).
        The denominator is floored because a tiny-shape gamma draw can
        underflow to zero when M gamma_j is extremely small."""
        num = self.rng.gamma(self.n_j, 1.0)
        den = np.maximum(self.rng.gamma(self.m * self.gamma, 1.0), 1e-300)
        self.u = num / den

    def step_u_given_weights(self) -> None:
        """Weight-conditional form of the auxiliary update, U_j ~
        Gamma(n_j, T_j) with T_j the group total mass.  Stationarity-
        equivalent to step_u when alternated with the weight draw; kept for
        validation against that law."""
        t = self.S.sum(axis=1)
        self.u = self.rng.gamma(self.n_j, 1.0 / t)

    # -- number of components (weights and auxiliaries marginalized) ----------

    def _log_m_target(self, m_star: int) -> float:
        mk = m_star + self.k
        lt = math.log(mk) - gammaln(m_star + 1) + m_star * math.log(self.lam)
        for j in range(self.d):
            lt += gammaln(self.gamma[j] * mk) - gammaln(self.gamma[j] * mk + self.n_j[j])
        return float(lt)

    def step_m(self) -> None:
        m_star = self.m - self.k
        prop = m_star + int(round(self.rng.normal(0.0, self.m_adapter.step)))
        if prop < 0:
            self.m_adapter.update(0.0)
            return
        if prop > self.config.m_star_cap:
            if not self._cap_warned:
                import warnings
                warnings.warn(f"non-allocated component count capped at "
                              f"{self.config.m_star_cap}")
                self._cap_warned = True
            self.m_adapter.update(0.0)
            return
        log_alpha = self._log_m_target(prop) - self._log_m_target(m_star)
        acc = math.exp(min(0.0, log_alpha))
        if self.rng.random() < acc:
            m_star = prop
        self.m_adapter.update(acc)
        new_m = self.k + m_star
        if new_m != self.m:
            self._resize_components(new_m)

    def _resize_components(self, new_m: int) -> None:
        """Grow or shrink the idle tail: fresh parameters come from the base
        measure; the weight columns are placeholders until step_s redraws
        the whole matrix later in the sweep."""
        prior = self.priors.nig
        if new_m > self.m:
            extra = new_m - self.m
            prec = self.rng.gamma(0.5 * prior.nu0,
                                  2.0 / (prior.nu0 * prior.sigma0_sq), size=extra)
            s2 = 1.0 / prec
            mu = self.rng.normal(prior.mu0, np.sqrt(s2 / prior.k0))
            self.mu = np.concatenate([self.mu, mu])
            self.s2 = np.concatenate([self.s2, s2])
            self.S = np.concatenate([self.S, np.ones((self.d, extra))], axis=1)
        else:
            self.mu = self.mu[:new_m]
            self.s2 = self.s2[:new_m]
            self.S = self.S[:, :new_m]
        self.m = new_m

    # -- step 2.3: concentrations ---------------------------------------------

    def _log_gamma_target(self, g: float, j: int) -> float:
        nj = self.n_j[j]
        lt = gammaln(g * self.m) - gammaln(g * self.m + nj)
        lt += float(np.sum(gammaln(self.counts[j] + g))) - self.k * gammaln(g)
        lt += (self.hyper.a_gamma - 1.0) * math.log(g) - self.lam * self.hyper.b_gamma * g
        return float(lt)

    def step_gamma(self) -> None:
        if self.priors.fix_gamma:
            return
        for j in range(self.d):
            adapter = self.gamma_adapters[j]
            cur = self.gamma[j]
            prop = cur * math.exp(self.rng.normal(0.0, adapter.step))
            log_alpha = (
                self._log_gamma_target(prop, j) - self._log_gamma_target(cur, j)
                + math.log(prop) - math.log(cur)
            )
            acc = math.exp(min(0.0, log_alpha))
            if self.rng.random() < acc:
                self.gamma[j] = prop
            adapter.update(acc)

    # -- sweep and run ----------------------------------------------------------

    def sweep(self) -> None:
        self.step_allocations()
        self.step_tau()
        if self.regression:
            self.step_beta()
        self.step_lambda()
        self.step_m()
        self.step_gamma()
        self.step_u()
        self.step_s()
        if self.config.debug_checks:
            self._check_invariants()

    def _check_invariants(self) -> None:
        distinct = len({int(v) for lab in self.c for v in lab})
        assert distinct == self.k, "K does not match the distinct labels"
        assert self.k <= self.m
        assert np.all(self.counts.sum(axis=0)[:self.k] >= 1)
        assert np.all(self.counts.sum(axis=1) == np.array(self.data.group_sizes))
        assert np.all(self.S > 0) and np.all(self.u > 0)
        assert self.lam > 0 and np.all(self.gamma > 0)

    def _freeze_adapters(self) -> None:
        self.m_adapter.freeze()
        for a in self.gamma_adapters:
            a.freeze()

    def run(self) -> ChainOutput:
        cfg = self.config
        rec_iters, rec_k, rec_m, rec_lam = [], [], [], []
        rec_gamma, rec_u, rec_alloc, rec_comp, rec_beta = [], [], [], [], []
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
                rec_m.append(self.m)
                rec_lam.append(self.lam)
                rec_gamma.append(self.gamma.copy())
                rec_u.append(self.u.copy())
                rec_alloc.append(np.concatenate(self.c) + 1)
                rec_comp.append({
                    "mu": self.mu.copy(),
                    "sigma2": self.s2.copy(),
                    "S": self.S.copy(),
                })
                if self.regression:
                    rec_beta.append(self.beta.copy())
        return ChainOutput(
            iters=np.array(rec_iters),
            k=np.array(rec_k),
            m=np.array(rec_m),
            lam=np.array(rec_lam),
            gamma=np.array(rec_gamma),
            u=np.array(rec_u),
            allocations=np.array(rec_alloc),
            index=self.data.flat_index(),
            group_sizes=self.data.group_sizes,
            components=rec_comp,
            beta=np.array(rec_beta) if rec_beta else None,
        )


def run_conditional(data: GroupedDataset, config: SamplerConfig,
                    priors: RunPriors) -> ChainOutput:
    """Run one conditional chain; deterministic given config.seed."""
    return ConditionalSampler(data, config, priors).run()
