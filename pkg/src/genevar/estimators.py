"""Variance-curve estimators.

Three uncorrected estimators of the variance function come from smoothing
synthetic responses Z on intensities X:

  * one curve per replicate column,
  * their pointwise average,
  * a single pooled fit over all N*I pairs.

With correlated replicates those curves estimate the shifted target
eta^2(x) = s^2(x) - 2 rho s1 s(x) + rho s1^2, where s1 = E[s(X)].  Solving
that quadratic for s(x) and always taking the larger root gives the
correlation-corrected curve

    s_hat(x) = rho s1 + sqrt(rho^2 s1^2 - rho s1^2 + eta^2(x)).

The I=2 case collapses to smoothing the squared half-differences, with target
s^2(x)/4 + s2/4 - rho s1 s(x)/2 and corrected root
rho s1 + sqrt(rho^2 s1^2 - s2 + 4 eta^2(x)).

A naive two-stage baseline treats the gene effect as a smooth function of
intensity: smooth Y on X, then smooth the squared residuals.  It is badly
biased when the gene effects are not smooth in X.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    FLAG_CLAMPED,
    FLAG_NEGATIVE_DISCRIMINANT,
    CorrelationEstimate,
    DegenerateWindow,
    EstimationConfig,
    GenevarError,
    InvalidReplicateCount,
    ReplicatedArray,
    VarianceCurve,
)
from .smoothing import ScatterData, fit_curve, local_linear_at
from .synthetic import SyntheticData


def replicate_curves(sdata: SyntheticData, config: EstimationConfig):
    """One unclamped curve per replicate column i, smoothing (X[:, i], Z[:, i])."""
    x, z = sdata.source.x, sdata.z
    return tuple(
        fit_curve(ScatterData(x[:, i], z[:, i]), config)
        for i in range(x.shape[1])
    )


def average_curves(curves) -> VarianceCurve:
    """Pointwise mean of curves on a common grid.

    A grid point is evaluable only where every input is; flags are OR-ed.
    """
    curves = tuple(curves)
    if not curves:
        raise GenevarError("no curves to average")
    grid = curves[0].grid
    for c in curves[1:]:
        if not np.array_equal(c.grid, grid):
            raise GenevarError("curves are on different grids")
    values = np.mean([c.values for c in curves], axis=0)
    flags = np.zeros(grid.shape, dtype=np.uint8)
    for c in curves:
        flags |= c.flags
    return VarianceCurve(grid=grid, values=values, flags=flags)


def pooled_curve(sdata: SyntheticData, config: EstimationConfig) -> VarianceCurve:
    """Single fit pooling all N*I pairs (X_gi, Z_gi)."""
    return fit_curve(
        ScatterData(sdata.source.x.ravel(), sdata.z.ravel()), config)


@dataclass(frozen=True)
class CurveBundle:
    per_replicate: tuple
    averaged: VarianceCurve
    pooled: VarianceCurve


def variance_curves(sdata: SyntheticData, config: EstimationConfig) -> CurveBundle:
    per = replicate_curves(sdata, config)
    return CurveBundle(per_replicate=per,
                       averaged=average_curves(per),
                       pooled=pooled_curve(sdata, config))


def _root_to_variance(grid, root, disc, base_flags):
    # Negative discriminants arise from sampling noise near the curve minimum;
    # clamp to zero and flag rather than abort the whole analysis.
    neg = np.isfinite(disc) & (disc < 0)
    safe = np.sqrt(np.clip(disc, 0.0, None))
    sigma = root + safe
    clamped = np.isfinite(sigma) & (sigma < 0)
    sigma = np.clip(sigma, 0.0, None)
    flags = np.array(base_flags, dtype=np.uint8, copy=True)
    flags[neg] |= FLAG_NEGATIVE_DISCRIMINANT
    flags[clamped] |= FLAG_CLAMPED
    return VarianceCurve(grid=grid, values=sigma * sigma, flags=flags)


def correct_curve(eta: VarianceCurve, corr: CorrelationEstimate) -> VarianceCurve:
    """Correlation-corrected variance curve from a pooled (I >= 3) curve.

    Always the larger root: it is the one continuous in rho that stays
    nonnegative for rho < 0.  Returned squared, as a variance curve.
    """
    r, s1 = corr.rho, corr.sigma1
    disc = r * r * s1 * s1 - r * s1 * s1 + eta.values
    return _root_to_variance(eta.grid, r * s1, disc, eta.flags)


def corrected_replicate_average(curves, corr: CorrelationEstimate) -> VarianceCurve:
    """Apply the correction per replicate curve, then average (the alternative
    route; the pooled route is the default)."""
    return average_curves([correct_curve(c, corr) for c in curves])


def paired_difference_curve(array: ReplicatedArray,
                            config: EstimationConfig) -> VarianceCurve:
    """I=2 estimator: smooth (Y_g1 - Y_g2)^2 / 4 against both intensity
    columns, concatenated into 2N pairs."""
    if array.n_replicates != 2:
        raise InvalidReplicateCount("paired estimator requires exactly I=2")
    z = 0.25 * (array.y[:, 0] - array.y[:, 1]) ** 2
    data = ScatterData(
        np.concatenate([array.x[:, 0], array.x[:, 1]]),
        np.concatenate([z, z]),
    )
    return fit_curve(data, config)


def correct_paired_curve(eta2: VarianceCurve,
                         corr: CorrelationEstimate) -> VarianceCurve:
    """Correlation-corrected variance curve for the I=2 route."""
    r, s1 = corr.rho, corr.sigma1
    disc = r * r * s1 * s1 - corr.sigma2 + 4.0 * eta2.values
    return _root_to_variance(eta2.grid, r * s1, disc, eta2.flags)


def two_stage_curve(array: ReplicatedArray, config: EstimationConfig,
                    stage1_points: int = 512) -> VarianceCurve:
    """Naive baseline: fit a mean curve to pooled (X, Y), then smooth the
    squared residuals on X.

    The stage-1 fit is evaluated on a dense auxiliary grid and interpolated
    to the data points (interpolation error is far below the noise level);
    pass stage1_points=0 to evaluate exactly at every data point.
    """
    xs = array.x.ravel()
    ys = array.y.ravel()
    data = ScatterData(xs, ys)
    if stage1_points:
        dense = np.linspace(xs.min(), xs.max(), stage1_points)
        vals, degenerate = local_linear_at(data, config, dense)
        if degenerate.any():
            raise DegenerateWindow(
                f"stage-1 mean fit undefined at {int(degenerate.sum())} grid points")
        mean_hat = np.interp(xs, dense, vals)
    else:
        mean_hat, degenerate = local_linear_at(data, config, xs)
        if degenerate.any():
            raise DegenerateWindow(
                f"stage-1 mean fit undefined at {int(degenerate.sum())} data points")
    resid2 = (ys - mean_hat) ** 2
    return fit_curve(ScatterData(xs, resid2), config)


def clamp_nonnegative(curve: VarianceCurve) -> VarianceCurve:
    """Clamp final variance values at zero, flagging every clamped point."""
    below = np.isfinite(curve.values) & (curve.values < 0)
    values = np.where(below, 0.0, curve.values)
    flags = np.array(curve.flags, dtype=np.uint8, copy=True)
    flags[below] |= FLAG_CLAMPED
    return VarianceCurve(grid=curve.grid, values=values,
                         stderr=curve.stderr, flags=flags)
