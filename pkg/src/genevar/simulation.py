"""Synthetic-data generator and the metric harness for estimator studies.

The benchmark design: N genes, I within-array replicates, J independent
arrays.  Intensities come from a mixture — with probability 0.7 the density
0.0004 (x-6)^3 on (6, 16) (quantile 6 + 10 u^{1/4}), otherwise Uniform[6, 16].
The variance function is

    s^2(x) = 0.15 + 0.015 (12 - x)^2  for x < 12,  0.15 otherwise.

Gene effects: the first n_active genes get standard Laplace levels, the rest
are zero, held fixed across the J arrays of one run ("gene" mode); the
alternative "smooth" mode makes the effect the bump
exp(-1/(1-(x-13)^2)) on (12, 14) evaluated at each spot's intensity.
Noise rows are equicorrelated standard normal with correlation rho, drawn
through the Cholesky factor of the equicorrelation matrix.

Each run is seeded from (seed, run, array) so parallel execution is
bit-reproducible regardless of scheduling.  Per grid point x_k over T runs,
with estimate m_t(x_k) and truth v(x_k):

    B_k = mean_t m_t(x_k) - v(x_k),   S_k = var_t m_t(x_k),
    MSE_k = B_k^2 + S_k,

and the reported Bias^2 / VAR / MISE are their averages weighted by the true
intensity density at the grid points.  ISE_t is the weighted squared error of
run t alone.  Displayed values follow the x1000 convention.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .model import (
    CorrelationEstimate,
    EstimationConfig,
    GenevarError,
    InvalidRho,
    MultiArraySet,
    ReplicatedArray,
)
from .correlation import fixed_point_solve
from .estimators import (
    average_curves,
    correct_curve,
    correct_paired_curve,
    paired_difference_curve,
    pooled_curve,
    replicate_curves,
    two_stage_curve,
)
from .synthetic import synthetic_responses

X_LOW = 6.0
X_HIGH = 16.0
POLY_WEIGHT = 0.7


def intensity_density(x) -> np.ndarray:
    """Mixture density of the intensity design on [6, 16]."""
    x = np.asarray(x, dtype=float)
    inside = (x >= X_LOW) & (x <= X_HIGH)
    return np.where(inside, POLY_WEIGHT * 0.0004 * (x - X_LOW) ** 3 + 0.03, 0.0)


def poly_component_quantile(u) -> np.ndarray:
    """Inverse CDF of the polynomial component: 6 + 10 u^{1/4}."""
    return X_LOW + 10.0 * np.asarray(u, dtype=float) ** 0.25


def sample_intensities(shape, rng) -> np.ndarray:
    u = rng.random(shape)
    pick_poly = rng.random(shape) < POLY_WEIGHT
    return np.where(pick_poly, poly_component_quantile(u), X_LOW + 10.0 * u)


def variance_function(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 0.15 + 0.015 * (12.0 - x) ** 2 * (x < 12.0)


def variance_curvature(x) -> np.ndarray:
    """Analytic (s^2)''."""
    return 0.03 * (np.asarray(x, dtype=float) < 12.0)


def scale_curvature(x) -> np.ndarray:
    """Analytic s'' for the design's noise scale."""
    x = np.asarray(x, dtype=float)
    v = variance_function(x)
    vp = np.where(x < 12.0, -0.03 * (12.0 - x), 0.0)
    vpp = variance_curvature(x)
    return vpp / (2.0 * np.sqrt(v)) - vp ** 2 / (4.0 * v ** 1.5)


def smooth_effect(x) -> np.ndarray:
    """Bump effect exp(-1/(1-(x-13)^2)) on (12, 14), zero elsewhere."""
    x = np.asarray(x, dtype=float)
    t = 1.0 - (x - 13.0) ** 2
    out = np.zeros(x.shape)
    m = t > 0
    out[m] = np.exp(-1.0 / t[m])
    return out


def sample_effects(n_active: int, n_genes: int, rng) -> np.ndarray:
    if n_active > n_genes:
        raise GenevarError("n_active cannot exceed n_genes")
    effects = np.zeros(n_genes)
    if n_active:
        effects[:n_active] = rng.laplace(0.0, 1.0, size=n_active)
    return effects


def sample_noise(n_genes: int, n_reps: int, rho: float, rng) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with unit variances and equicorrelation rho."""
    if not (-1.0 / (n_reps - 1) < rho < 1.0):
        raise InvalidRho(
            f"rho={rho!r} outside (-1/{n_reps - 1}, 1); matrix not positive definite")
    cov = (1.0 - rho) * np.eye(n_reps) + rho * np.ones((n_reps, n_reps))
    factor = np.linalg.cholesky(cov)
    return rng.standard_normal((n_genes, n_reps)) @ factor.T


@functools.lru_cache(maxsize=16)
def scale_moments(variance_fn: Callable = variance_function):
    """(E[s(X)], E[s(X)^2]) under the intensity design, by quadrature."""
    f = intensity_density
    s1, _ = integrate.quad(
        lambda t: np.sqrt(max(float(variance_fn(t)), 0.0)) * float(f(t)),
        X_LOW, X_HIGH, limit=400)
    s2, _ = integrate.quad(lambda t: float(variance_fn(t)) * float(f(t)),
                           X_LOW, X_HIGH, limit=400)
    return float(s1), float(s2)


@dataclass(frozen=True, eq=False)
class SimDesign:
    """One benchmark configuration.

    effect_mode 'gene' draws per-gene levels; 'smooth' uses the bump effect
    of the intensity.  variance_fn is an injection point for constant or
    degenerate noise studies; the truth and oracle moments follow it.
    """

    n_genes: int = 2000
    n_replicates: int = 3
    n_arrays: int = 4
    n_active: int = 250
    rho: float = 0.0
    bandwidth: float = 1.0
    n_runs: int = 100
    seed: int = 0
    effect_mode: str = "gene"
    grid: np.ndarray = field(default_factory=lambda: np.linspace(X_LOW, X_HIGH, 101))
    variance_fn: Callable = variance_function

    def __post_init__(self):
        if self.n_active > self.n_genes:
            raise GenevarError("n_active cannot exceed n_genes")
        if not (-1.0 / (self.n_replicates - 1) < self.rho < 1.0):
            raise InvalidRho(f"rho={self.rho!r} invalid for I={self.n_replicates}")
        if self.effect_mode not in ("gene", "smooth"):
            raise GenevarError("effect_mode must be 'gene' or 'smooth'")
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))

    def config(self) -> EstimationConfig:
        return EstimationConfig(bandwidth=self.bandwidth, grid=self.grid)


def _rng(design: SimDesign, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(design.seed, spawn_key=key))


def generate_set(design: SimDesign, run: int) -> MultiArraySet:
    """All J arrays of one run; effects are shared across the arrays."""
    gene_ids = tuple(f"g{k + 1}" for k in range(design.n_genes))
    effects = sample_effects(design.n_active, design.n_genes, _rng(design, run, 0))
    arrays = []
    for j in range(design.n_arrays):
        rng = _rng(design, run, j + 1)
        x = sample_intensities((design.n_genes, design.n_replicates), rng)
        eps = sample_noise(design.n_genes, design.n_replicates, design.rho, rng)
        scale = np.sqrt(np.clip(design.variance_fn(x), 0.0, None))
        mean = smooth_effect(x) if design.effect_mode == "smooth" else effects[:, None]
        arrays.append(ReplicatedArray(x=x, y=mean + scale * eps, gene_ids=gene_ids))
    return MultiArraySet(arrays=tuple(arrays))


# Estimator names accepted by run_experiment.
ESTIMATORS = ("replicate_average", "pooled", "corrected", "oracle", "two_stage")


def _run_once(design: SimDesign, run: int, estimators, truth_moments):
    # Every curve estimator is averaged across the J arrays of the run (the
    # multi-array averaging convention); correlation comes from all arrays.
    config = design.config()
    mset = generate_set(design, run)
    paired = design.n_replicates == 2
    out = {}
    params = None

    synthetic = None
    needs_pooled = {"pooled", "corrected", "oracle"} & set(estimators)
    if not paired and ({"replicate_average"} & set(estimators) or needs_pooled):
        synthetic = [synthetic_responses(a) for a in mset.arrays]

    if "replicate_average" in estimators:
        if paired:
            raise GenevarError("replicate_average needs I >= 3")
        out["replicate_average"] = np.mean(
            [average_curves(replicate_curves(sd, config)).values
             for sd in synthetic], axis=0)

    fp = None
    if "corrected" in estimators:
        fp = fixed_point_solve(mset, config)
        est = fp.estimate
        out["corrected"] = fp.curve.values
        params = (est.rho, est.sigma1, est.sigma2)

    base = None
    if needs_pooled:
        if fp is not None:
            base = fp.uncorrected
        elif paired:
            base = [paired_difference_curve(a, config) for a in mset.arrays]
        else:
            base = [pooled_curve(sd, config) for sd in synthetic]
    if "pooled" in estimators:
        out["pooled"] = np.mean([c.values for c in base], axis=0)

    if "oracle" in estimators:
        s1_true, s2_true = truth_moments
        est = CorrelationEstimate(rho=design.rho, sigma1=s1_true,
                                  sigma2=s2_true, iterations=0,
                                  converged=True, n_reps=design.n_replicates)
        corrector = correct_paired_curve if paired else correct_curve
        out["oracle"] = np.mean(
            [corrector(c, est).values for c in base], axis=0)

    if "two_stage" in estimators:
        out["two_stage"] = np.mean(
            [two_stage_curve(a, config).values for a in mset.arrays], axis=0)

    return out, params


@dataclass(frozen=True)
class EstimatorMetrics:
    bias2: float
    var: float
    mise: float
    ise: np.ndarray           # per-run weighted squared error
    median_run: int           # index of the median-ISE run
    median_curve: np.ndarray  # that run's curve, for plotting
    mean_curve: np.ndarray    # average curve across runs


@dataclass(frozen=True)
class ParameterStats:
    """Squared bias / variance / MSE of a scalar estimate across runs."""
    truth: float
    mean: float
    bias2: float
    var: float
    mse: float


@dataclass(frozen=True)
class SimulationReport:
    design: SimDesign
    estimators: tuple
    metrics: dict
    parameter_stats: Optional[dict]
    grid: np.ndarray
    truth: np.ndarray
    weights: np.ndarray

    def format_table(self) -> str:
        """Bias^2 / VAR / MISE, x1000, two decimals."""
        lines = ["estimator        Bias^2     VAR      MISE   (x 10^3)"]
        for name in self.estimators:
            m = self.metrics[name]
            lines.append(
                f"{name:<15s} {1e3 * m.bias2:8.2f} {1e3 * m.var:8.2f} "
                f"{1e3 * m.mise:8.2f}")
        if self.parameter_stats:
            lines.append("")
            lines.append("parameter        Bias^2     VAR       MSE   (x 10^6)")
            for name, p in self.parameter_stats.items():
                lines.append(
                    f"{name:<15s} {1e6 * p.bias2:8.2f} {1e6 * p.var:9.2f} "
                    f"{1e6 * p.mse:9.2f}")
        return "\n".join(lines)


def run_experiment(design: SimDesign,
                   estimators=("replicate_average", "corrected", "oracle"),
                   threads: int = 1) -> SimulationReport:
    """Run design.n_runs simulations and reduce them to a report.

    Results are bit-identical for a given seed whatever the thread count:
    per-run curves land in preallocated slots and all reductions are plain
    numpy sums over fixed-shape arrays.
    """
    for name in estimators:
        if name not in ESTIMATORS:
            raise GenevarError(f"unknown estimator {name!r}")
    truth_moments = scale_moments(design.variance_fn)
    t_runs = design.n_runs
    k = design.grid.size
    curves = {name: np.empty((t_runs, k)) for name in estimators}
    params = np.full((t_runs, 3), np.nan)

    def work(t):
        return _run_once(design, t, estimators, truth_moments)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(t_runs)))
    else:
        results = [work(t) for t in range(t_runs)]
    for t, (out, par) in enumerate(results):
        for name in estimators:
            curves[name][t] = out[name]
        if par is not None:
            params[t] = par

    truth = np.asarray(design.variance_fn(design.grid), dtype=float)
    weights = intensity_density(design.grid)
    wsum = weights.sum()

    metrics = {}
    for name in estimators:
        arr = curves[name]
        mean_curve = arr.mean(axis=0)
        b = mean_curve - truth
        s = ((arr - mean_curve) ** 2).mean(axis=0)
        mse = b * b + s
        ise = ((arr - truth) ** 2) @ weights / wsum
        order = np.argsort(ise, kind="stable")
        median_run = int(order[t_runs // 2])
        metrics[name] = EstimatorMetrics(
            bias2=float((b * b) @ weights / wsum),
            var=float(s @ weights / wsum),
            mise=float(mse @ weights / wsum),
            ise=ise,
            median_run=median_run,
            median_curve=arr[median_run],
            mean_curve=mean_curve,
        )

    parameter_stats = None
    if "corrected" in estimators:
        s1_true, s2_true = truth_moments
        truths = {"rho": design.rho, "sigma1": s1_true, "sigma2": s2_true}
        parameter_stats = {}
        for col, (name, tv) in enumerate(truths.items()):
            vals = params[:, col]
            mean = float(vals.mean())
            bias2 = (mean - tv) ** 2
            var = float(vals.var())
            parameter_stats[name] = ParameterStats(
                truth=tv, mean=mean, bias2=bias2, var=var, mse=bias2 + var)

    return SimulationReport(design=design, estimators=tuple(estimators),
                            metrics=metrics, parameter_stats=parameter_stats,
                            grid=design.grid, truth=truth, weights=weights)
