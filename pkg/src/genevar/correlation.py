"""Replicate-correlation estimation via variance components and a fixed point.

With J >= 2 independent arrays, between- and within-array variance components

    s2_B,g = I/(J-1) * sum_j (Ybar_gj - Ybar_g)^2
    s2_W,g = 1/(J(I-1)) * sum_j sum_i (Y_gij - Ybar_gj)^2

yield the REML-style ratio

    rho_raw = (sum s2_B - sum s2_W) / (sum s2_B + (I-1) sum s2_W),

which under a heteroscedastic noise scale converges to rho * s1^2 / s2, not
rho.  Multiplying by s2 / s1^2 corrects it, but s1 = E[s(X)] and s2 =
E[s(X)^2] are themselves functionals of the unknown variance curve, so the
corrected correlation and the curve are solved jointly:

  1. initialise the corrected curve with the pooled uncorrected curve;
  2. read s1, s2 off the current curve at the observed intensities and set
     rho = rho_raw * s2 / s1^2;
  3. re-derive the corrected curve from the uncorrected one with (rho, s1);
  4. repeat 2-3 until successive rho values move less than the tolerance.

Multiple arrays enter the curve side only through averaging: the uncorrected
per-array curves are averaged for the iteration, and the final corrected
curve is the average of the per-array corrected curves sharing one rho.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    CorrelationEstimate,
    EstimationConfig,
    GenevarError,
    MultiArraySet,
    NonpositiveSigma,
    TooFewArrays,
    TooFewReplicates,
    VarianceCurve,
    ZeroDenominator,
    validate,
)
from .estimators import (
    average_curves,
    clamp_nonnegative,
    correct_curve,
    correct_paired_curve,
    paired_difference_curve,
    pooled_curve,
)
from .synthetic import synthetic_responses

RHO_MARGIN = 1e-6  # keeps the equicorrelation matrix strictly positive definite


@dataclass(frozen=True)
class VarianceComponents:
    """Per-gene between-array and within-array variance components."""

    s_between: np.ndarray
    s_within: np.ndarray


def variance_components(mset: MultiArraySet) -> VarianceComponents:
    """Exact per-gene components from a set of J >= 2 arrays."""
    if mset.n_arrays < 2:
        raise TooFewArrays(f"J={mset.n_arrays}; need J >= 2")
    if mset.n_replicates < 2:
        raise TooFewReplicates("variance components need I >= 2")
    y = mset.stacked_y()                       # (J, N, I)
    j, _, i = y.shape
    array_means = y.mean(axis=2)               # (J, N)
    grand = array_means.mean(axis=0)           # (N,)
    s_between = i / (j - 1) * ((array_means - grand) ** 2).sum(axis=0)
    s_within = ((y - array_means[:, :, None]) ** 2).sum(axis=(0, 2)) / (j * (i - 1))
    return VarianceComponents(s_between=s_between, s_within=s_within)


def raw_correlation(vc: VarianceComponents, n_reps: int) -> float:
    """REML-style ratio; estimates rho * s1^2 / s2 under the model."""
    sb = float(vc.s_between.sum())
    sw = float(vc.s_within.sum())
    den = sb + (n_reps - 1) * sw
    if den <= 0:
        raise ZeroDenominator("all-constant data: variance components vanish")
    return (sb - sw) / den


def rho_lower_bound(n_reps: int) -> float:
    return -1.0 / (n_reps - 1)


def corrected_correlation(rho_raw: float, sigma1: float, sigma2: float,
                          n_reps: int):
    """Moment-corrected correlation rho_raw * sigma2 / sigma1^2, clipped into
    the positive-definiteness range.  Returns (value, clipped)."""
    if not sigma1 > 0:
        raise NonpositiveSigma("sigma1 must be positive")
    rho = rho_raw * sigma2 / (sigma1 * sigma1)
    lo = rho_lower_bound(n_reps) + RHO_MARGIN
    hi = 1.0 - RHO_MARGIN
    clipped = rho < lo or rho > hi
    return float(min(max(rho, lo), hi)), clipped


@dataclass(frozen=True)
class FixedPointResult:
    estimate: CorrelationEstimate
    curve: VarianceCurve              # mean of per-array corrected curves
    per_array: tuple                  # corrected curve per array
    uncorrected: tuple                # raw per-array curves fed to the root
    rho_raw: Optional[float]          # REML ratio, None when rho was fixed
    curve_change: float               # sup-norm curve move on the last iteration
    rho_path: tuple


def _sigma_evaluations(curve_values, grid, points):
    """Noise-scale evaluations at data points: interpolate sqrt of the
    clamped curve over its evaluable grid points."""
    ok = np.isfinite(curve_values)
    if not ok.any():
        raise GenevarError("variance curve is degenerate everywhere")
    scale = np.sqrt(np.clip(curve_values[ok], 0.0, None))
    return np.interp(points, grid[ok], scale)


def fixed_point_solve(mset: MultiArraySet, config: EstimationConfig, *,
                      rho_raw: Optional[float] = None,
                      fixed_rho: Optional[float] = None,
                      initial_values=None) -> FixedPointResult:
    """Jointly estimate (rho, s1, s2) and the corrected variance curve.

    rho_raw, when given, replaces the REML ratio (useful for testing); a
    fixed_rho pins the correlation itself, in which case convergence is
    judged on s1 and a single array suffices.  initial_values replaces the
    default starting curve (grid-aligned variance values), e.g. to restart
    from a previous solution.  Non-convergence is reported through the
    returned flag, never raised.
    """
    for a in mset.arrays:
        validate(a)
    n_reps = mset.n_replicates
    paired = n_reps == 2

    if paired:
        uncorrected = tuple(paired_difference_curve(a, config) for a in mset.arrays)
    else:
        uncorrected = tuple(
            pooled_curve(synthetic_responses(a), config) for a in mset.arrays)
    eta_mean = average_curves(uncorrected)

    if fixed_rho is None and rho_raw is None:
        rho_raw = raw_correlation(variance_components(mset), n_reps)

    points = mset.pooled_x()
    grid = eta_mean.grid
    # Initial corrected-curve guess.  The pooled curve already targets the
    # variance scale for I >= 3; the paired curve targets roughly half of it.
    if initial_values is not None:
        current = np.clip(np.asarray(initial_values, dtype=float), 0.0, None)
        if current.shape != grid.shape:
            raise GenevarError("initial_values must match the grid length")
    else:
        current = np.clip(eta_mean.values, 0.0, None)
        if paired:
            current = 2.0 * current

    rho = float(fixed_rho) if fixed_rho is not None else 0.0
    sigma1 = sigma2 = float("nan")
    prev_rho = prev_sigma1 = None
    converged = False
    clipped = False
    curve_change = float("inf")
    rho_path = []
    iterations = 0

    for iterations in range(1, config.max_iterations + 1):
        scale = _sigma_evaluations(current, grid, points)
        sigma1 = float(scale.mean())
        sigma2 = float((scale * scale).mean())
        if sigma1 <= 0:
            raise NonpositiveSigma(
                "estimated mean noise scale is zero; data appear constant")
        if fixed_rho is None:
            proposal, was_clipped = corrected_correlation(
                rho_raw, sigma1, sigma2, n_reps)
            clipped = clipped or was_clipped
            # Averaging successive iterates keeps the update contractive: at
            # strong correlation the raw step overshoots (the discriminant
            # clamp kicks in on alternate iterations) and would settle into a
            # two-cycle instead of the fixed point.
            rho = proposal if prev_rho is None else 0.5 * (prev_rho + proposal)
        rho_path.append(rho)
        est = CorrelationEstimate(rho=rho, sigma1=sigma1, sigma2=sigma2,
                                  iterations=iterations, converged=False,
                                  clipped=clipped, n_reps=n_reps)
        corrected = correct_paired_curve(eta_mean, est) if paired \
            else correct_curve(eta_mean, est)
        # The curve update is damped for the same reason as the rho update:
        # the paired-route scale map has derivative -1 at its fixed point
        # (a neutral two-cycle), and near clamped discriminants the I >= 3
        # map loses smoothness as well.
        new_values = 0.5 * (current + corrected.values)
        curve_change = float(np.nanmax(np.abs(new_values - current))) \
            if np.isfinite(new_values).any() else float("inf")
        current = new_values
        # rho alone is blind to the curve's scale (it feeds through the
        # scale-invariant ratio sigma2/sigma1^2), so track sigma1 as well;
        # otherwise the iteration can stop while the scale transient from
        # the uncorrected initialisation is still running.
        move = abs(sigma1 - prev_sigma1) if prev_sigma1 is not None else float("inf")
        if fixed_rho is None and prev_rho is not None:
            move = max(move, abs(rho - prev_rho))
        if move < config.convergence_tol:
            converged = True
            break
        prev_rho = rho
        prev_sigma1 = sigma1

    estimate = CorrelationEstimate(rho=rho, sigma1=sigma1, sigma2=sigma2,
                                   iterations=iterations, converged=converged,
                                   clipped=clipped, n_reps=n_reps)
    if paired:
        per_array = tuple(correct_paired_curve(c, estimate) for c in uncorrected)
    else:
        per_array = tuple(correct_curve(c, estimate) for c in uncorrected)
    mean_curve = clamp_nonnegative(average_curves(per_array))
    return FixedPointResult(
        estimate=estimate,
        curve=mean_curve,
        per_array=per_array,
        uncorrected=uncorrected,
        rho_raw=rho_raw,
        curve_change=curve_change,
        rho_path=tuple(rho_path),
    )
