"""Shared machinery for the two MCMC samplers: run configuration, prior
bundle, chain output records, the intensity full conditional (common to both
samplers), Robbins-Monro step-size adaptation, and partition initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .likelihood import NigParams, RegressionSpec
from .prior import HyperPriorParams


@dataclass
class SamplerConfig:
    iterations: int = 10_000
    burn_in: int = 2_000
    thin: int = 1
    seed: int = 0
    prior_only: bool = False
    init_partition: str = "kmeans:5"  # or "single"
    m_star_cap: int = 10_000
    rw_accept_target: float = 0.44
    mala_accept_target: float = 0.574
    adapt_decay: float = 0.7
    debug_checks: bool = False

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class RunPriors:
    """Everything the samplers condition on besides the data: the NIG base
    measure, the optional hyperprior on (lambda, gamma), initial or fixed
    values for (lambda, gamma), and the optional regression prior."""

    nig: NigParams
    hyper: HyperPriorParams | None = None
    lam: float | None = None
    gamma: np.ndarray | None = None
    fix_lambda: bool = False
    fix_gamma: bool = False
    regression: RegressionSpec | None = None

    def resolve(self, d: int) -> tuple[float, np.ndarray]:
        """Initial (lambda, gamma), falling back to hyperprior means."""
        if self.lam is not None:
            lam = float(self.lam)
        elif self.hyper is not None:
            lam = self.hyper.a_lambda / self.hyper.b_lambda
        else:
            raise ValueError("either lam or a hyperprior must be given")
        if self.gamma is not None:
            gamma = np.asarray(self.gamma, dtype=float)
            if gamma.size == 1:
                gamma = np.full(d, float(gamma.reshape(-1)[0]))
            if gamma.shape != (d,):
                raise ValueError(f"gamma must have length {d}")
        elif self.hyper is not None:
            gamma = np.full(d, self.hyper.a_gamma / (lam * self.hyper.b_gamma))
        else:
            raise ValueError("either gamma or a hyperprior must be given")
        if (self.hyper is None) and not (self.fix_lambda and self.fix_gamma):
            raise ValueError("updating lambda or gamma requires a hyperprior")
        return lam, gamma


@dataclass
class ChainOutput:
    """Thinned post-burn-in records of one chain.

    allocations holds 1-based cluster labels in the canonical flat order of
    the dataset; components (conditional sampler only) holds, per record, a
    dict with mu, sigma2 (length M) and S (d-by-M).
    """

    iters: np.ndarray
    k: np.ndarray
    m: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray       # (records, d)
    u: np.ndarray           # (records, d)
    allocations: np.ndarray  # (records, n) of int
    index: list[tuple[int, int]]
    group_sizes: tuple[int, ...]
    components: list[dict] | None = None
    beta: np.ndarray | None = None  # (records, d, r)

    @property
    def n_records(self) -> int:
        return len(self.iters)


def sample_lambda(k: int, psi_bar_u: float, hyper: HyperPriorParams,
                  gamma: np.ndarray, rng: np.random.Generator) -> float:
    """Full-conditional draw of the intensity: a two-component mixture of
    gamma densities with shapes a*+K-1 and a*+K and common rate
    b*+1-psi_bar, where a* = a_lambda + d a_gamma and
    b* = b_lambda + b_gamma sum_j gamma_j."""
    d = gamma.shape[0]
    a_star = hyper.a_lambda + d * hyper.a_gamma
    b_star = hyper.b_lambda + hyper.b_gamma * float(gamma.sum())
    rate = b_star + 1.0 - psi_bar_u
    w1 = k * rate
    w2 = (a_star + k - 1.0) * psi_bar_u
    shape = (a_star + k - 1.0) if rng.random() < w1 / (w1 + w2) else (a_star + k)
    return float(rng.gamma(shape, 1.0 / rate))


class StepSizeAdapter:
    """Robbins-Monro adaptation of a log step size toward a target
    acceptance rate, with diminishing gain and a freeze switch."""

    def __init__(self, initial: float, target: float, decay: float = 0.7):
        self.log_step = math.log(initial)
        self.target = target
        self.decay = decay
        self.count = 0
        self.frozen = False

    @property
    def step(self) -> float:
        return math.exp(self.log_step)

    def update(self, accept_prob: float) -> None:
        if self.frozen:
            return
        self.count += 1
        gain = self.count ** (-self.decay)
        self.log_step += gain * (accept_prob - self.target)
        self.log_step = min(max(self.log_step, -15.0), 15.0)

    def freeze(self) -> None:
        self.frozen = True


def kmeans_labels(values: np.ndarray, n_centers: int,
                  rng: np.random.Generator, n_iter: int = 30) -> np.ndarray:
    """Plain Lloyd iterations on scalar values, seeded deterministically.
    Returns 0-based labels with empty centers dropped."""
    n = values.shape[0]
    n_centers = min(n_centers, n)
    order = rng.permutation(n)
    centers = np.array(sorted(values[order[:n_centers]]))
    labels = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        labels = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        new_centers = centers.copy()
        for c in range(centers.shape[0]):
            sel = labels == c
            if sel.any():
                new_centers[c] = values[sel].mean()
        if np.allclose(new_centers, centers):
            break
        centers = new_centers
    # compress away empty clusters
    used = np.unique(labels)
    remap = {c: i for i, c in enumerate(used)}
    return np.array([remap[c] for c in labels], dtype=int)


def initial_partition(data, config: SamplerConfig,
                      rng: np.random.Generator) -> list[np.ndarray]:
    """Per-group 0-based initial labels from the configured rule."""
    if config.init_partition == "single" or config.prior_only:
        return [np.zeros(nj, dtype=int) for nj in data.group_sizes]
    if config.init_partition.startswith("kmeans"):
        parts = config.init_partition.split(":")
        n_centers = int(parts[1]) if len(parts) > 1 else 5
        pooled = np.array([y.mean() for grp in data.groups for y in grp])
        flat = kmeans_labels(pooled, n_centers, rng)
        out = []
        pos = 0
        for nj in data.group_sizes:
            out.append(flat[pos:pos + nj].copy())
            pos += nj
        return out
    raise ValueError(f"unknown init_partition {config.init_partition!r}")
