"""Synthetic-data generators for the three benchmark experiments and the
sampler scaling benchmark.

Experiment 1: two groups, three global components, one shared; the shared
component is masked by overlap in the second group, so recovering it there
requires borrowing strength across groups.
Experiment 2: two groups, one component each, nothing shared.
Experiment 3: fifteen groups drawing local mixtures from a pool of five
global components.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .chain import RunPriors, SamplerConfig
from .conditional import run_conditional
from .likelihood import GroupedDataset, NigParams
from .marginal import run_marginal
from .prior import ElicitationSpec, elicit


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: int
    n: int | None = None     # per-group size (experiments 1, 3) or total (2)
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in (1, 2, 3):
            raise ValueError(f"unknown experiment {self.experiment}")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be positive")


@dataclass(frozen=True)
class MixtureTruth:
    """Per-group mixture (weights, means, variances) and global component
    ids, enough to evaluate the true density and the true partition."""

    weights: list[np.ndarray]
    means: list[np.ndarray]
    variances: list[np.ndarray]
    component_ids: list[np.ndarray]   # global id per local component

    def density(self, j: int):
        w = self.weights[j]
        mu = self.means[j]
        var = self.variances[j]

        def f(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            for wk, mk, vk in zip(w, mu, var):
                out += wk * np.exp(-0.5 * (x - mk) ** 2 / vk) / math.sqrt(2 * math.pi * vk)
            return out
        return f


def _sample_group(rng, n, weights, means, variances):
    comp = rng.choice(len(weights), p=weights, size=n)
    y = rng.normal(np.asarray(means)[comp], np.sqrt(np.asarray(variances)[comp]))
    return y, comp


def generate_experiment(spec: ExperimentSpec):
    """Returns (dataset, truth_labels, truth) where truth_labels lists the
    1-based global component of each observation per group."""
    rng = np.random.default_rng(spec.seed)
    if spec.experiment == 1:
        n_j = spec.n if spec.n is not None else 300
        truth = MixtureTruth(
            weights=[np.array([0.5, 0.5]), np.array([0.2, 0.8])],
            means=[np.array([-3.0, 0.0]), np.array([0.0, 1.75])],
            variances=[np.array([0.1, 0.5]), np.array([0.5, 1.5])],
            component_ids=[np.array([1, 2]), np.array([2, 3])],
        )
        sizes = [n_j, n_j]
    elif spec.experiment == 2:
        n_tot = spec.n if spec.n is not None else 100
        if n_tot % 2:
            raise ValueError("experiment 2 needs an even total size")
        truth = MixtureTruth(
            weights=[np.array([1.0]), np.array([1.0])],
            means=[np.array([0.0]), np.array([1.0])],
            variances=[np.array([1.0]), np.array([1.0])],
            component_ids=[np.array([1]), np.array([2])],
        )
        sizes = [n_tot // 2, n_tot // 2]
    else:
        n_j = spec.n if spec.n is not None else 30
        pool_mu = np.array([-3.0, 0.0, 1.0])
        pool_var = np.array([0.5, 0.5, 0.5])
        weights, means, variances, comp_ids = [], [], [], []
        for _ in range(12):
            k_j = int(rng.integers(2, 4))
            chosen = np.sort(rng.choice(3, size=k_j, replace=False))
            if 1 in chosen:
                w_mid = 0.5 if k_j == 3 else 2.0 / 3.0
                w_rest = (1.0 - w_mid) / (k_j - 1)
                w = np.where(chosen == 1, w_mid, w_rest)
            else:
                w = np.full(k_j, 1.0 / k_j)
            weights.append(w)
            means.append(pool_mu[chosen])
            variances.append(pool_var[chosen])
            comp_ids.append(chosen + 1)
        for _ in range(3):
            weights.append(np.array([0.5, 0.5]))
            means.append(np.array([-1.5, 1.5]))
            variances.append(np.array([0.5, 0.5]))
            comp_ids.append(np.array([4, 5]))
        truth = MixtureTruth(weights, means, variances, comp_ids)
        sizes = [n_j] * 15

    groups, labels = [], []
    for j, n in enumerate(sizes):
        y, comp = _sample_group(rng, n, truth.weights[j], truth.means[j],
                                truth.variances[j])
        groups.append(list(y))
        labels.append(truth.component_ids[j][comp])
    return GroupedDataset(groups), labels, truth


EXPERIMENT_ELICITATIONS = {
    1: ElicitationSpec(lambda0=5.0, v_lambda=5.0, gamma0=0.5, d=2),
    2: ElicitationSpec(lambda0=10.0, v_lambda=2.0, gamma0=0.01, d=2),
    3: ElicitationSpec(lambda0=15.0, v_lambda=3.0, gamma0=0.05, d=15),
}


def auto_nig(data: GroupedDataset, sigma0_sq: float = 0.5) -> NigParams:
    """Data-driven base measure: mu0 = mean of the marks, k0 = 1/range^2,
    nu0 = 4 and a configurable sigma0^2."""
    marks = data.all_marks()
    rng_width = float(marks.max() - marks.min())
    if rng_width <= 0:
        rng_width = 1.0
    return NigParams(mu0=float(marks.mean()), k0=1.0 / rng_width ** 2,
                     nu0=4.0, sigma0_sq=sigma0_sq)


def experiment_priors(data: GroupedDataset, experiment: int,
                      d_override: int | None = None) -> RunPriors:
    """Base measure and elicited hyperprior used to fit an experiment."""
    spec = EXPERIMENT_ELICITATIONS[experiment]
    d = d_override if d_override is not None else spec.d
    spec = ElicitationSpec(lambda0=spec.lambda0, v_lambda=spec.v_lambda,
                           gamma0=spec.gamma0, d=d)
    return RunPriors(nig=auto_nig(data), hyper=elicit(spec))


# ---------------------------------------------------------------------------
# Scaling benchmark
# ---------------------------------------------------------------------------

def bench_dataset(n_total: int, seed: int = 0) -> GroupedDataset:
    """Two groups of a well-separated two-component mixture; the fixed
    generator behind the timing comparison."""
    rng = np.random.default_rng(seed)
    groups = []
    for _ in range(2):
        n = n_total // 2
        comp = rng.integers(0, 2, size=n)
        y = rng.normal(np.where(comp == 0, -4.0, 4.0), math.sqrt(0.5))
        groups.append(list(y))
    return GroupedDataset(groups)


def bench(ns=(100, 200, 400, 800, 1600), iterations: int = 200,
          burn_in: int = 50, seed: int = 0):
    """Time both samplers across sample sizes.

    Returns (rows, slopes): rows of (algo, n, seconds per iteration), and
    the fitted log-log slope per algorithm.  Timing covers the sampling loop
    only, no I/O.
    """
    rows = []
    slopes = {}
    for algo, runner in (("conditional", run_conditional),
                         ("marginal", run_marginal)):
        times = []
        for n in ns:
            data = bench_dataset(n, seed=seed)
            priors = RunPriors(nig=auto_nig(data),
                               hyper=elicit(ElicitationSpec(5.0, 5.0, 0.1, 2)))
            config = SamplerConfig(iterations=iterations, burn_in=burn_in,
                                   thin=10, seed=seed, init_partition="kmeans:2")
            t0 = time.perf_counter()
            runner(data, config, priors)
            per_iter = (time.perf_counter() - t0) / iterations
            rows.append((algo, n, per_iter))
            times.append(per_iter)
        slope = float(np.polyfit(np.log(np.asarray(ns, dtype=float)),
                                 np.log(np.asarray(times)), 1)[0])
        slopes[algo] = slope
    return rows, slopes
