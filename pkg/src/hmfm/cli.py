"""Command-line surface: data ingestion, configuration, fitting, prior
calculus queries, hyperparameter elicitation, experiment simulation,
clustering metrics, and the scaling benchmark.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

Data CSV schema: header `group,obs,y[,x1..xr]`; `group` is 1-based, rows
sharing (group, obs) form one multi-mark observation, covariates must agree
across the rows of an observation.  All emitted numbers carry 17
significant digits so files round-trip losslessly.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .chain import ChainOutput, RunPriors, SamplerConfig
from .conditional import run_conditional
from .experiments import (ExperimentSpec, auto_nig, bench, generate_experiment)
from .likelihood import GroupedDataset, NigParams, RegressionSpec, center_groups
from .marginal import run_marginal
from .postprocess import (SimilarityMatrix, cocluster_matrix, default_grid,
                          min_vi, predictive_density, predictive_score,
                          similarity, ari, cce)
from .prior import (ElicitationSpec, GroupCounts, NumericalError, VecFdpParams,
                    coskewness, correlation, elicit, log_peppf, mixed_moment,
                    prior_k_pmf)


class DataError(Exception):
    """Malformed or inconsistent input data."""


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def ingest_csv(path: str) -> GroupedDataset:
    """Read a grouped dataset; rows with equal (group, obs) become one
    observation whose marks stack in file order."""
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["group", "obs", "y"]:
            raise DataError(f"{path}: header must start with group,obs,y")
        x_cols = header[3:]
        for c, name in enumerate(x_cols):
            if name != f"x{c + 1}":
                raise DataError(f"{path}: covariate columns must be x1..xr, got {name}")
        r = len(x_cols)
        marks: dict[tuple[int, int], list[float]] = {}
        covs: dict[tuple[int, int], tuple[float, ...]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 3 + r:
                raise DataError(f"{path}:{lineno}: expected {3 + r} fields, got {len(row)}")
            try:
                g = int(row[0])
                o = int(row[1])
                y = float(row[2])
                x = tuple(float(v) for v in row[3:])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if g < 1:
                raise DataError(f"{path}:{lineno}: group must be 1-based")
            key = (g, o)
            marks.setdefault(key, []).append(y)
            if r:
                if key in covs and covs[key] != x:
                    raise DataError(
                        f"{path}:{lineno}: covariates differ across the marks of obs {key}")
                covs[key] = x
    if not marks:
        raise DataError(f"{path}: no data rows")
    d = max(g for g, _ in marks)
    groups = [[] for _ in range(d)]
    covariates = [[] for _ in range(d)] if r else None
    for (g, o) in sorted(marks):
        groups[g - 1].append(np.array(marks[(g, o)]))
        if r:
            covariates[g - 1].append(np.array(covs[(g, o)]))
    for j, grp in enumerate(groups):
        if not grp:
            raise DataError(f"group {j + 1} is empty")
    return GroupedDataset(groups, covariates=covariates)


def write_dataset_csv(path: str, data: GroupedDataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        cols = ["group", "obs", "y"] + [f"x{i + 1}" for i in range(data.r)]
        w.writerow(cols)
        for j in range(data.d):
            for i, y in enumerate(data.groups[j]):
                xrow = list(data.covariates[j][i]) if data.r else []
                for mark in y:
                    w.writerow([j + 1, i + 1, _fmt(mark)] + [_fmt(v) for v in xrow])


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "algo", "iters", "burnin", "thin", "seed", "chains", "out", "prior_only",
    "fix_lambda", "fix_gamma", "lambda0", "vlambda", "gamma0",
    "a_gamma", "b_gamma", "a_lambda", "b_lambda",
    "mu0", "k0", "nu0", "sigma0_sq", "base_measure",
    "init_partition", "regression", "beta0", "beta_cov", "center",
    "grid_points", "density_groups",
}


def read_config(path: str) -> dict[str, str]:
    """Flat key=value text configuration; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise DataError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = val
    return out


# ---------------------------------------------------------------------------
# Output writers
# ---------------------------------------------------------------------------

def write_scalars_csv(path: str, out: ChainOutput) -> None:
    d = out.gamma.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "K", "M", "lambda"]
                   + [f"gamma_{j + 1}" for j in range(d)]
                   + [f"u_{j + 1}" for j in range(d)])
        for r in range(out.n_records):
            w.writerow([out.iters[r], out.k[r], out.m[r], _fmt(out.lam[r])]
                       + [_fmt(v) for v in out.gamma[r]]
                       + [_fmt(v) for v in out.u[r]])


def write_allocations_csv(path: str, out: ChainOutput) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "group", "obs", "cluster"])
        for r in range(out.n_records):
            for flat, (j, i) in enumerate(out.index):
                w.writerow([out.iters[r], j + 1, i + 1, out.allocations[r, flat]])


def write_components_csv(path: str, out: ChainOutput) -> None:
    d = out.gamma.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "component", "mu", "sigma2"]
                   + [f"S_{j + 1}" for j in range(d)])
        for r in range(out.n_records):
            comp = out.components[r]
            for m in range(comp["mu"].shape[0]):
                w.writerow([out.iters[r], m + 1, _fmt(comp["mu"][m]),
                            _fmt(comp["sigma2"][m])]
                           + [_fmt(comp["S"][j, m]) for j in range(d)])


def write_similarity_csv(path: str, sim: SimilarityMatrix) -> None:
    labels = [f"g{j + 1}_o{i + 1}" for (j, i) in sim.index]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + labels)
        for row_label, row in zip(labels, sim.values):
            w.writerow([row_label] + [_fmt(v) for v in row])


def read_similarity_csv(path: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(v) for v in row[1:]] for row in reader]
    return np.asarray(rows)


def write_partition_csv(path: str, estimate, index) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "obs", "cluster"])
        for flat, (j, i) in enumerate(index):
            w.writerow([j + 1, i + 1, estimate.labels[flat]])


def read_partition_csv(path: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return np.array([int(row[2]) for row in reader])


def write_density_csv(path: str, grid: np.ndarray, dens: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "density"])
        for g, v in zip(grid, dens):
            w.writerow([_fmt(g), _fmt(v)])


def read_density_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(float(r[0]), float(r[1])) for r in reader]
    arr = np.asarray(rows)
    return arr[:, 0], arr[:, 1]


def write_labels_csv(path: str, labels_by_group) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "obs", "cluster"])
        for j, labs in enumerate(labels_by_group):
            for i, lab in enumerate(labs):
                w.writerow([j + 1, i + 1, int(lab)])


def read_labels_csv(path: str) -> np.ndarray:
    return read_partition_csv(path)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _run_single_chain(args):
    algo, data, config, priors = args
    runner = run_conditional if algo == "conditional" else run_marginal
    return runner(data, config, priors)


def _build_priors(cfg: dict, data: GroupedDataset, d: int) -> RunPriors:
    if cfg.get("base_measure", "auto") == "auto":
        nig = auto_nig(data, sigma0_sq=float(cfg.get("sigma0_sq", "0.5")))
    else:
        nig = NigParams(mu0=float(cfg.get("mu0", "0")),
                        k0=float(cfg.get("k0", "1")),
                        nu0=float(cfg.get("nu0", "4")),
                        sigma0_sq=float(cfg.get("sigma0_sq", "1")))
    hyper = None
    if all(k in cfg for k in ("a_gamma", "b_gamma", "a_lambda", "b_lambda")):
        from .prior import HyperPriorParams
        hyper = HyperPriorParams(float(cfg["a_gamma"]), float(cfg["b_gamma"]),
                                 float(cfg["a_lambda"]), float(cfg["b_lambda"]))
    elif all(k in cfg for k in ("lambda0", "vlambda", "gamma0")):
        hyper = elicit(ElicitationSpec(float(cfg["lambda0"]), float(cfg["vlambda"]),
                                       float(cfg["gamma0"]), d))
    fix_lambda = "fix_lambda" in cfg
    fix_gamma = "fix_gamma" in cfg
    lam = float(cfg["fix_lambda"]) if fix_lambda else None
    gamma = None
    if fix_gamma:
        gamma = np.array([float(v) for v in cfg["fix_gamma"].split(",")])
    regression = None
    if cfg.get("regression", "0") in ("1", "true", "yes"):
        if data.r == 0:
            raise DataError("regression requested but the data has no covariates")
        beta0_txt = cfg.get("beta0", "0")
        vals = [float(v) for v in beta0_txt.split(",")]
        beta0 = np.full(data.r, vals[0]) if len(vals) == 1 else np.array(vals)
        cov_scale = float(cfg.get("beta_cov", "1"))
        regression = RegressionSpec(beta0=beta0, cov0=cov_scale * np.eye(data.r))
    if hyper is None and not (fix_lambda and fix_gamma):
        raise DataError("give a hyperprior (elicited or direct) or fix lambda and gamma")
    return RunPriors(nig=nig, hyper=hyper, lam=lam, gamma=gamma,
                     fix_lambda=fix_lambda, fix_gamma=fix_gamma,
                     regression=regression)


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = read_config(args.config) if args.config else {}
    for key in ("algo", "iters", "burnin", "thin", "seed", "chains", "out",
                "init_partition"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = str(val)
    if args.prior_only:
        cfg["prior_only"] = "1"
    if args.fix_lambda is not None:
        cfg["fix_lambda"] = args.fix_lambda
    if args.fix_gamma is not None:
        cfg["fix_gamma"] = args.fix_gamma

    algo = cfg.get("algo", "conditional")
    if algo not in ("conditional", "marginal"):
        raise DataError(f"unknown algorithm {algo!r}")
    data = ingest_csv(args.data)
    if cfg.get("center", "0") in ("1", "true", "yes"):
        data, _ = center_groups(data)
    out_dir = cfg.get("out", "hmfm_out")
    os.makedirs(out_dir, exist_ok=True)

    config = SamplerConfig(
        iterations=int(cfg.get("iters", "10000")),
        burn_in=int(cfg.get("burnin", "2000")),
        thin=int(cfg.get("thin", "1")),
        seed=int(cfg.get("seed", "0")),
        prior_only=cfg.get("prior_only", "0") in ("1", "true", "yes"),
        init_partition=cfg.get("init_partition", "kmeans:5"),
    )
    priors = _build_priors(cfg, data, data.d)
    n_chains = int(cfg.get("chains", "1"))

    if n_chains == 1:
        chains = [_run_single_chain((algo, data, config, priors))]
    else:
        jobs = []
        for c in range(n_chains):
            cfg_c = SamplerConfig(**{**config.__dict__, "seed": config.seed + c})
            jobs.append((algo, data, cfg_c, priors))
        with ProcessPoolExecutor(max_workers=min(n_chains, os.cpu_count() or 1)) as ex:
            chains = list(ex.map(_run_single_chain, jobs))

    for idx, chain in enumerate(chains):
        sub = out_dir if n_chains == 1 else os.path.join(out_dir, f"chain_{idx + 1:02d}")
        os.makedirs(sub, exist_ok=True)
        write_scalars_csv(os.path.join(sub, "scalars.csv"), chain)
        write_allocations_csv(os.path.join(sub, "allocations.csv"), chain)
        if chain.components is not None:
            write_components_csv(os.path.join(sub, "components.csv"), chain)

    pooled_alloc = np.concatenate([c.allocations for c in chains], axis=0)
    sim = similarity(pooled_alloc, index=chains[0].index)
    write_similarity_csv(os.path.join(out_dir, "similarity.csv"), sim)
    est = min_vi(pooled_alloc, sim)
    est_full = min_vi(chains[0], sim) if n_chains == 1 else est
    write_partition_csv(os.path.join(out_dir, "partition.csv"),
                        est_full, chains[0].index)

    grid = default_grid(data, n_points=int(cfg.get("grid_points", "512")))
    dens_groups = cfg.get("density_groups")
    groups = (range(data.d) if dens_groups in (None, "all")
              else [int(v) - 1 for v in dens_groups.split(",")])
    for j in groups:
        dens = np.zeros_like(grid)
        for chain in chains:
            dens += predictive_density(chain, j, grid, data=data, prior=priors.nig)
        dens /= len(chains)
        write_density_csv(os.path.join(out_dir, f"density_{j + 1}.csv"), grid, dens)
    return 0


# ---------------------------------------------------------------------------
# prior / elicit / simulate / metrics / bench
# ---------------------------------------------------------------------------

def _parse_vec(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def cmd_prior(args: argparse.Namespace) -> int:
    out = sys.stdout
    if args.quantity == "kprior":
        n = [int(v) for v in args.n.split(",")]
        gam = _parse_vec(args.gamma)
        params = VecFdpParams(d=len(gam), lam=args.lam, gamma=tuple(gam))
        pmf = prior_k_pmf(n, params)
        for k, p in enumerate(pmf, start=1):
            out.write(f"{k},{p:.6f}\n")
    elif args.quantity == "correlation":
        gam = _parse_vec(args.gamma)
        params = VecFdpParams(d=len(gam), lam=args.lam, gamma=tuple(gam))
        out.write("correlation\n")
        out.write(f"{correlation(params, 0, 1):.6f}\n")
    elif args.quantity == "coskewness":
        gam = _parse_vec(args.gamma)
        params = VecFdpParams(d=len(gam), lam=args.lam, gamma=tuple(gam))
        out.write("coskewness\n")
        out.write(f"{coskewness(params, args.p0a):.6f}\n")
    elif args.quantity == "mixedmom":
        n = [int(v) for v in args.n.split(",")]
        gam = _parse_vec(args.gamma)
        params = VecFdpParams(d=2, lam=args.lam, gamma=tuple(gam))
        out.write("mixed_moment\n")
        out.write(f"{mixed_moment(n[0], n[1], args.p0a, params):.6f}\n")
    elif args.quantity == "peppf":
        rows = [tuple(int(v) for v in row.split(",")) for row in args.counts.split(";")]
        k = len(rows[0])
        gam = _parse_vec(args.gamma)
        counts = GroupCounts(k=k, counts=tuple(rows))
        params = VecFdpParams(d=len(rows), lam=args.lam, gamma=tuple(gam))
        out.write("log_peppf\n")
        out.write(f"{log_peppf(counts, params):.6f}\n")
    else:
        raise DataError(f"unknown prior quantity {args.quantity!r}")
    return 0


def cmd_elicit(args: argparse.Namespace) -> int:
    hyper = elicit(ElicitationSpec(lambda0=args.lambda0, v_lambda=args.vlambda,
                                   gamma0=args.gamma0, d=args.d))
    sys.stdout.write("a_gamma,b_gamma,a_lambda,b_lambda\n")
    sys.stdout.write(
        f"{hyper.a_gamma:.6g},{hyper.b_gamma:.6g},"
        f"{hyper.a_lambda:.6g},{hyper.b_lambda:.6g}\n")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = ExperimentSpec(experiment=args.experiment, n=args.n, seed=args.seed)
    data, labels, truth = generate_experiment(spec)
    os.makedirs(args.out, exist_ok=True)
    write_dataset_csv(os.path.join(args.out, "data.csv"), data)
    write_labels_csv(os.path.join(args.out, "truth_labels.csv"), labels)
    grid = default_grid(data)
    for j in range(data.d):
        write_density_csv(os.path.join(args.out, f"truth_density_{j + 1}.csv"),
                          grid, truth.density(j)(grid))
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    out = sys.stdout
    wrote = False
    if args.truth_labels and args.partition:
        truth = read_labels_csv(args.truth_labels)
        est = read_partition_csv(args.partition)
        if truth.shape != est.shape:
            raise DataError("partition and truth have different lengths")
        out.write(f"ari,{ari(truth, est):.6f}\n")
        wrote = True
    if args.truth_labels and args.similarity:
        truth = read_labels_csv(args.truth_labels)
        sim = read_similarity_csv(args.similarity)
        out.write(f"cce,{cce(cocluster_matrix(truth), sim):.6f}\n")
        wrote = True
    if args.truth_density and args.density:
        grid_t, dens_t = read_density_csv(args.truth_density)
        grid_e, dens_e = read_density_csv(args.density)
        if grid_t.shape != grid_e.shape or not np.allclose(grid_t, grid_e):
            raise DataError("density files use different grids")
        out.write(f"ps,{predictive_score(dens_t, dens_e, grid_t):.6f}\n")
        wrote = True
    if not wrote:
        raise DataError("metrics needs file pairs, e.g. --truth-labels with --partition")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    ns = tuple(int(v) for v in args.ns.split(","))
    rows, slopes = bench(ns=ns, iterations=args.iters, burn_in=args.burnin,
                         seed=args.seed)
    out = sys.stdout
    out.write("algo,n,sec_per_iter\n")
    for algo, n, sec in rows:
        out.write(f"{algo},{n},{sec:.6g}\n")
    for algo, slope in slopes.items():
        out.write(f"slope,{algo},{slope:.4f}\n")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmfm",
                                description="Hierarchical mixture of finite mixtures")
    sub = p.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run a sampler on a dataset")
    fit.add_argument("--data", required=True)
    fit.add_argument("--config")
    fit.add_argument("--algo", choices=["conditional", "marginal"])
    fit.add_argument("--iters", type=int)
    fit.add_argument("--burnin", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--chains", type=int)
    fit.add_argument("--out")
    fit.add_argument("--init-partition", dest="init_partition")
    fit.add_argument("--prior-only", action="store_true")
    fit.add_argument("--fix-lambda", dest="fix_lambda")
    fit.add_argument("--fix-gamma", dest="fix_gamma")
    fit.set_defaults(func=cmd_fit)

    prior = sub.add_parser("prior", help="evaluate prior quantities")
    prior.add_argument("quantity",
                       choices=["kprior", "correlation", "coskewness",
                                "mixedmom", "peppf"])
    prior.add_argument("--n")
    prior.add_argument("--lambda", dest="lam", type=float, required=True)
    prior.add_argument("--gamma", required=True)
    prior.add_argument("--p0a", type=float, default=0.5)
    prior.add_argument("--counts")
    prior.set_defaults(func=cmd_prior)

    eli = sub.add_parser("elicit", help="map interpretable guesses to hyperpriors")
    eli.add_argument("--lambda0", type=float, required=True)
    eli.add_argument("--vlambda", type=float, required=True)
    eli.add_argument("--gamma0", type=float, required=True)
    eli.add_argument("--d", type=int, required=True)
    eli.set_defaults(func=cmd_elicit)

    sim = sub.add_parser("simulate", help="generate an experiment dataset")
    sim.add_argument("--experiment", type=int, required=True, choices=[1, 2, 3])
    sim.add_argument("--n", type=int)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    met = sub.add_parser("metrics", help="score estimates against truth files")
    met.add_argument("--truth-labels", dest="truth_labels")
    met.add_argument("--partition")
    met.add_argument("--similarity")
    met.add_argument("--truth-density", dest="truth_density")
    met.add_argument("--density")
    met.set_defaults(func=cmd_metrics)

    ben = sub.add_parser("bench", help="time both samplers across sample sizes")
    ben.add_argument("--ns", default="100,200,400,800,1600")
    ben.add_argument("--iters", type=int, default=200)
    ben.add_argument("--burnin", type=int, default=50)
    ben.add_argument("--seed", type=int, default=0)
    ben.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (ValueError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
