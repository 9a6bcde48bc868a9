"""Command-line front end.

Commands
--------
estimate   variance curve + correlation report from a replicated-array CSV
validate   per-array bias tests T1..T4 with p-values
select     t-test vs z-test gene calls, counts grid, power report
simulate   benchmark presets (table1 / table2 / table3)

Every command writes a manifest.json (flags, seed, package and library
versions, input digests) sufficient to re-run bit-identically.  Exit codes:
0 success, 2 usage, 3 malformed input file, 4 invalid data for the requested
analysis, 5 estimation did not converge.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .model import (
    EstimationConfig,
    GenevarError,
    IngestionError,
    MultiArraySet,
    NoReplicatedGenes,
    ReplicatedArray,
    TooFewArrays,
    default_grid,
    validate,
)
from .asymptotics import AsymptoticContext, corrected_curve_se, pooled_curve_asymptotics
from .correlation import fixed_point_solve
from .inference import gene_sigma, power_increase, t_pvalues, validation_tests, z_pvalues
from .io import read_table
from .simulation import SimDesign, run_experiment
from .smoothing import kde_values

EXIT_OK = 0
EXIT_INGESTION = 3
EXIT_VALIDATION = 4
EXIT_NONCONVERGENCE = 5

DEFAULT_ALPHAS = (0.05, 0.01, 0.005, 0.001)
DEFAULT_FOLD_CHANGES = (1.5, 2.0, 4.0)


def _float_list(text):
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _int_list(text):
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_manifest(outdir: Path, command: str, args, inputs):
    manifest = {
        "command": command,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "versions": {
            "genevar": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _build_config(args, pooled_x) -> EstimationConfig:
    try:
        if args.grid:
            if ":" in args.grid:
                lo, hi, n = args.grid.split(":")
                grid = np.linspace(float(lo), float(hi), int(n))
            else:
                grid = default_grid(pooled_x, n_points=int(args.grid))
        else:
            grid = default_grid(pooled_x)
    except ValueError as exc:
        raise GenevarError(f"bad --grid {args.grid!r}: {exc}") from None
    return EstimationConfig(bandwidth=args.bandwidth, grid=grid)


def _fit_model(mset: MultiArraySet, config: EstimationConfig, rho_flag):
    if rho_flag is None and mset.n_arrays < 2:
        raise TooFewArrays(
            "J=1: replicate correlation is not estimable; pass --rho to pin it")
    return fixed_point_solve(mset, config, fixed_rho=rho_flag)


def _density_interpolator(sample, config, n_points=512):
    """Density evaluated once on a dense grid, then interpolated; avoids a
    fresh kernel pass per gene on large inputs."""
    sample = np.asarray(sample, dtype=float).ravel()
    pad = config.kernel.support_halfwidth * config.bandwidth
    grid = np.linspace(sample.min() - pad, sample.max() + pad, n_points)
    dens = kde_values(sample, config, grid)

    def density(points):
        return np.interp(np.atleast_1d(np.asarray(points, dtype=float)),
                         grid, dens)

    return density


def cmd_estimate(args) -> int:
    mset = read_table(args.input)
    for a in mset.arrays:
        validate(a)
    config = _build_config(args, mset.pooled_x())
    fp = _fit_model(mset, config, args.rho)
    est = fp.estimate

    # Delta-method standard errors from the plug-in asymptotic variance of
    # the uncorrected curve.
    pooled_x = mset.pooled_x()
    curve = fp.curve
    eta_mean = np.mean([c.values for c in fp.uncorrected], axis=0)
    ok = curve.evaluable & np.isfinite(curve.values)
    if not ok.any():
        raise GenevarError("variance curve is degenerate everywhere")

    def sigma_fn(t):
        return np.interp(t, curve.grid[ok],
                         np.sqrt(np.clip(curve.values[ok], 0.0, None)))

    density = _density_interpolator(pooled_x, config)

    def f_x(t):
        return max(float(density(t)[0]), 1e-12)

    stderr = np.full(curve.grid.shape, np.nan)
    if mset.n_replicates >= 3:
        ctx = AsymptoticContext(
            sigma_fn=sigma_fn, sigma1=est.sigma1, sigma2=est.sigma2,
            rho=est.rho, f_x=f_x, kernel=config.kernel,
            n_genes=mset.n_genes, bandwidth=config.bandwidth,
            n_reps=mset.n_replicates)
        for k, xk in enumerate(curve.grid):
            if not ok[k] or not np.isfinite(eta_mean[k]):
                continue
            _, _, _, vstar = pooled_curve_asymptotics(ctx, float(xk))
            # Curve averages J per-array fits, so the plug-in variance shrinks.
            vstar /= mset.n_arrays
            try:
                stderr[k] = corrected_curve_se(vstar, float(eta_mean[k]), est)
            except GenevarError:
                stderr[k] = np.nan

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "curve.csv", ["x", "variance", "stderr", "flags"],
               [(float(g), float(v), float(s), int(f))
                for g, v, s, f in zip(curve.grid, curve.values, stderr, curve.flags)])
    _write_csv(outdir / "correlation.csv",
               ["rho", "sigma1", "sigma2", "rho_raw", "iterations",
                "converged", "clipped", "curve_change", "mode"],
               [(float(est.rho), float(est.sigma1), float(est.sigma2),
                 float(fp.rho_raw) if fp.rho_raw is not None else "",
                 est.iterations, est.converged, est.clipped,
                 float(fp.curve_change),
                 "paired" if mset.n_replicates == 2 else "pooled")])
    _write_manifest(outdir, "estimate", args, [args.input])
    if not est.converged:
        print("warning: fixed point did not converge "
              f"(iterations={est.iterations})", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _genewise_scales(mset, curve, config):
    """Per-array matrix of genewise standard deviations from the curve."""
    density = _density_interpolator(mset.pooled_x(), config)
    out = []
    for array in mset.arrays:
        s2 = np.array([
            gene_sigma(curve, array.x[g], density)
            for g in range(array.n_genes)
        ])
        out.append(np.sqrt(np.clip(s2, 0.0, None)))
    return out


def cmd_validate(args) -> int:
    mset = read_table(args.input)
    if mset.n_replicates < 2:
        raise NoReplicatedGenes(
            "validation needs genes with at least two replicates per array")
    for a in mset.arrays:
        validate(a)
    config = _build_config(args, mset.pooled_x())
    fp = _fit_model(mset, config, args.rho)
    scales = _genewise_scales(mset, fp.curve, config)

    results = []
    for j, (array, sigma_g) in enumerate(zip(mset.arrays, scales), start=1):
        results.append(validation_tests(array, sigma_g, array_id=f"array{j}"))

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "validation.csv",
               ["array_id", "t1", "p1", "t2", "p2", "t3", "p3", "t4", "p4"],
               [(r.array_id, r.t1, r.p1, r.t2, r.p2, r.t3, r.p3, r.t4, r.p4)
                for r in results])
    _write_manifest(outdir, "validate", args, [args.input])
    if args.format == "table":
        print(f"{'array':<10s} {'p(T1)':>8s} {'p(T2)':>8s} {'p(T3)':>8s} {'p(T4)':>8s}")
        for r in results:
            print(f"{r.array_id:<10s} {r.p1:8.4f} {r.p2:8.4f} {r.p3:8.4f} {r.p4:8.4f}")
    return EXIT_OK


def _apply_dye_swaps(mset: MultiArraySet, swapped) -> MultiArraySet:
    """Negate the log ratios of dye-swapped arrays (1-based indices)."""
    arrays = []
    for j, array in enumerate(mset.arrays, start=1):
        if j in swapped:
            arrays.append(ReplicatedArray(x=array.x, y=-array.y,
                                          gene_ids=array.gene_ids))
        else:
            arrays.append(array)
    return MultiArraySet(arrays=tuple(arrays))


def _average_pairs(mset: MultiArraySet, pairs) -> MultiArraySet:
    """Average listed array pairs (e.g. a dye swap with its partner)."""
    arrays = []
    for a, b in pairs:
        first, second = mset.arrays[a - 1], mset.arrays[b - 1]
        arrays.append(ReplicatedArray(
            x=0.5 * (first.x + second.x),
            y=0.5 * (first.y + second.y),
            gene_ids=first.gene_ids))
    return MultiArraySet(arrays=tuple(arrays))


def cmd_select(args) -> int:
    mset = read_table(args.input)
    if args.swap_arrays:
        mset = _apply_dye_swaps(mset, set(args.swap_arrays))
    if args.average_pairs:
        pairs = [tuple(int(t) for t in pair.split(":"))
                 for pair in args.average_pairs.split(",")]
        mset = _average_pairs(mset, pairs)
    if mset.n_arrays < 2:
        raise TooFewArrays("gene selection needs at least two observations per gene")

    # View the J arrays as replicated columns of one super array; between-array
    # replicates are taken as uncorrelated unless --rho overrides.
    super_array = ReplicatedArray(
        x=np.hstack([a.x for a in mset.arrays]),
        y=np.hstack([a.y for a in mset.arrays]),
        gene_ids=mset.gene_ids)
    validate(super_array)
    config = _build_config(args, super_array.x.ravel())
    rho = args.rho if args.rho is not None else 0.0
    fp = fixed_point_solve(MultiArraySet(arrays=(super_array,)), config,
                           fixed_rho=rho)
    curve = fp.curve

    density = _density_interpolator(super_array.x.ravel(), config)
    sigma_hat = np.sqrt(np.clip([
        gene_sigma(curve, super_array.x[g], density)
        for g in range(super_array.n_genes)
    ], 1e-12, None))

    n = super_array.n_replicates
    means = super_array.y.mean(axis=1)
    sample_sd = super_array.y.std(axis=1, ddof=1)
    t_stat, p_t, flagged = t_pvalues(means, sample_sd, n)
    z_stat, p_z = z_pvalues(means, sigma_hat, n)
    fold = 2.0 ** np.abs(means)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "gene_calls.csv",
               ["gene_id", "mean", "sample_sd", "sigma_hat", "fold_change",
                "t_stat", "p_t", "z_stat", "p_z", "flagged"],
               [(gid, float(means[k]), float(sample_sd[k]), float(sigma_hat[k]),
                 float(fold[k]), float(t_stat[k]), float(p_t[k]),
                 float(z_stat[k]), float(p_z[k]), bool(flagged[k]))
                for k, gid in enumerate(super_array.gene_ids)])

    counts_rows = []
    for fc in args.fold_changes:
        for alpha in args.alphas:
            passed_fc = fold > fc
            counts_rows.append((
                fc, alpha,
                int(np.sum((p_t < alpha) & passed_fc)),
                int(np.sum((p_z < alpha) & passed_fc)),
            ))
    _write_csv(outdir / "counts.csv",
               ["fold_change", "alpha", "t_selected", "z_selected"], counts_rows)

    power_rows = []
    for alpha in args.alphas:
        theo, emp = power_increase(means, sigma_hat, n, alpha, sample_sd=sample_sd)
        power_rows.append((alpha, float(theo), float(emp)))
    _write_csv(outdir / "power.csv", ["alpha", "theoretical", "empirical"],
               power_rows)
    _write_manifest(outdir, "select", args, [args.input])

    if args.format == "table":
        print(f"{'FC':>5s} {'alpha':>7s} {'t':>7s} {'z':>7s}")
        for fc, alpha, t_n, z_n in counts_rows:
            print(f"{fc:5.1f} {alpha:7.3f} {t_n:7d} {z_n:7d}")
    return EXIT_OK


PRESETS = {
    "table1": ("two_stage", "replicate_average"),
    "table2": ("replicate_average", "corrected", "oracle"),
    "table3": ("corrected",),
}


def cmd_simulate(args) -> int:
    estimators = PRESETS[args.preset]
    design = SimDesign(
        n_genes=args.n_genes,
        n_replicates=args.replicates,
        n_arrays=args.arrays,
        rho=args.rho if args.rho is not None else 0.0,
        bandwidth=args.bandwidth,
        n_runs=args.reps,
        seed=args.seed,
        effect_mode="smooth" if (args.preset == "table1"
                                 and args.alpha_mode == "smooth") else "gene",
    )
    report = run_experiment(design, estimators=estimators, threads=args.threads)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "report.csv", ["estimator", "bias2", "var", "mise"],
               [(name, report.metrics[name].bias2, report.metrics[name].var,
                 report.metrics[name].mise) for name in report.estimators])
    if report.parameter_stats:
        _write_csv(outdir / "params.csv",
                   ["parameter", "truth", "mean", "bias2", "var", "mse"],
                   [(name, p.truth, p.mean, p.bias2, p.var, p.mse)
                    for name, p in report.parameter_stats.items()])
    curve_header = ["x", "truth"] + [f"{name}_median_run" for name in report.estimators]
    curve_rows = []
    for k, xk in enumerate(report.grid):
        row = [float(xk), float(report.truth[k])]
        row.extend(float(report.metrics[name].median_curve[k])
                   for name in report.estimators)
        curve_rows.append(tuple(row))
    _write_csv(outdir / "curves.csv", curve_header, curve_rows)
    _write_csv(outdir / "ise.csv",
               ["run"] + list(report.estimators),
               [tuple([t] + [float(report.metrics[name].ise[t])
                             for name in report.estimators])
                for t in range(design.n_runs)])
    _write_manifest(outdir, "simulate", args, [])
    if args.format == "table":
        print(report.format_table())
    return EXIT_OK


def _add_common(parser, with_input=True):
    if with_input:
        parser.add_argument("--input", required=True, help="input CSV path")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--bandwidth", type=float, default=1.0,
                        help="kernel bandwidth in log2-intensity units")
    parser.add_argument("--grid", default=None,
                        help="'lo:hi:n' or point count (default 101, data-driven range)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--rho", type=float, default=None,
                        help="override the replicate correlation")
    parser.add_argument("--format", choices=["csv", "table"], default="table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genevar",
        description="Genewise variance estimation for replicated two-color arrays")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="variance curve and correlation report")
    _add_common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("validate", help="per-array bias tests T1..T4")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("select", help="t-test vs z-test gene selection")
    _add_common(p)
    p.add_argument("--alphas", type=_float_list, default=DEFAULT_ALPHAS,
                   help="comma-separated significance levels")
    p.add_argument("--fold-changes", type=_float_list, default=DEFAULT_FOLD_CHANGES,
                   help="comma-separated fold-change thresholds")
    p.add_argument("--swap-arrays", type=_int_list, default=(),
                   help="1-based indices of dye-swapped arrays (ratios negated)")
    p.add_argument("--average-pairs", default=None,
                   help="pairs to average, e.g. '1:6,2:7'")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="benchmark presets")
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)
    _add_common(p, with_input=False)
    p.add_argument("--reps", type=int, default=100, help="number of runs")
    p.add_argument("--n-genes", type=int, default=2000)
    p.add_argument("--replicates", type=int, default=3)
    p.add_argument("--arrays", type=int, default=4)
    p.add_argument("--alpha-mode", choices=["smooth", "nonsmooth"],
                   default="nonsmooth", help="gene-effect style for table1")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except GenevarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
