"""Hierarchical mixtures of finite mixtures for grouped data.

The mixing measures form a vector of finite Dirichlet processes: a shared,
1-shifted-Poisson number of components with group-specific symmetric
Dirichlet weights.  The package provides the exact prior calculus, a
conditional and a marginal Gibbs sampler, clustering post-processing, the
benchmark experiment generators, and a command-line interface.
"""

from .chain import ChainOutput, RunPriors, SamplerConfig
from .conditional import ConditionalSampler, run_conditional
from .experiments import ExperimentSpec, bench, generate_experiment
from .likelihood import (ClusterSuffStats, GroupedDataset, NigParams,
                         RegressionSpec, beta_full_conditional_draw,
                         center_groups, log_marginal, nig_draw, nig_posterior,
                         residualize, restore_residualized)
from .marginal import MarginalSampler, run_marginal
from .postprocess import (PartitionEstimate, SimilarityMatrix, ari, cce,
                          cocluster_matrix, default_grid, min_vi,
                          predictive_density, predictive_score, similarity)
from .prior import (ElicitationSpec, GfcTable, GroupCounts, HyperPriorParams,
                    NumericalError, VecFdpParams, correlation, coskewness,
                    elicit, gfc_table, log_kappa, log_peppf, log_psi_big,
                    mixed_moment, prior_k, prior_k_pmf, prior_simulate, psi)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
