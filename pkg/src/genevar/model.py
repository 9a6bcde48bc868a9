"""Core data model for replicated two-color microarray measurements.

A gene g on an array contributes I replicated spots.  Each spot yields a
log2 ratio Y and a log2 intensity X, modelled as

    Y = a_g + s(X) * eps,

where a_g is a per-gene expression effect (a nuisance parameter whose count
grows with the number of genes), s(.) is a smooth noise-scale function of
intensity, and the noise vector of a gene is standard normal with a common
within-gene correlation rho.  Everything downstream estimates s(.)^2 and rho
from such data.

All containers here are immutable after construction (their arrays are made
read-only), so they can be shared freely across worker threads.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class GenevarError(Exception):
    """Base class for all data and estimation errors raised by this package."""


class ShapeMismatch(GenevarError):
    """Array dimensions are inconsistent."""


class NonFinite(GenevarError):
    """Input contains NaN or infinite entries."""


class TooFewReplicates(GenevarError):
    """Fewer than two replicates; within-gene differences are undefined."""


class InvalidReplicateCount(GenevarError):
    """Operation requires at least three replicates."""


class TooFewArrays(GenevarError):
    """Correlation estimation requires at least two independent arrays."""


class DegenerateWindow(GenevarError):
    """No local identifiability: kernel window holds < 2 distinct x values."""


class ZeroDenominator(GenevarError):
    """Variance-component sums vanish (all-constant data)."""


class InvalidRho(GenevarError):
    """Correlation outside the positive-definiteness range of the model."""


class ZeroDiscriminant(GenevarError):
    """Root discriminant is non-positive; delta-method derivative undefined."""


class NonpositiveSigma(GenevarError):
    """Per-gene noise scale must be strictly positive."""


class ZeroDensityEverywhere(GenevarError):
    """All density weights vanish at the gene's intensities."""


class NoReplicatedGenes(GenevarError):
    """Validation tests need at least one gene with >= 2 replicates."""


class IngestionError(GenevarError):
    """Malformed input file."""


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric probability-density kernel with compact support.

    Attributes
    ----------
    evaluate : callable
        Vectorized u -> K(u); zero outside [-support_halfwidth, support_halfwidth].
    support_halfwidth : float
    c_k : float
        Second moment, int u^2 K(u) du.
    d_k : float
        Roughness, int K(u)^2 du.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    support_halfwidth: float
    c_k: float
    d_k: float

    @classmethod
    def from_function(cls, evaluate: Callable, support_halfwidth: float,
                      tol: float = 1e-8) -> "KernelSpec":
        """Build a spec from a vectorized kernel function, checking it is a
        symmetric nonnegative density and computing c_k, d_k by quadrature."""
        s = float(support_halfwidth)
        if not s > 0:
            raise GenevarError("support_halfwidth must be positive")
        u = np.linspace(0.0, s, 513)
        left = np.asarray(evaluate(-u), dtype=float)
        right = np.asarray(evaluate(u), dtype=float)
        if np.any(right < 0) or np.any(left < 0):
            raise GenevarError("kernel must be nonnegative")
        if not np.allclose(left, right, atol=1e-12, rtol=0):
            raise GenevarError("kernel must be symmetric")
        outside = np.asarray(evaluate(np.array([-2 * s, 2 * s, 1.5 * s])), dtype=float)
        if np.any(outside != 0):
            raise GenevarError("kernel must vanish outside its support")
        total, _ = integrate.quad(lambda t: float(evaluate(t)), -s, s, limit=200)
        if abs(total - 1.0) > tol:
            raise GenevarError(f"kernel integrates to {total!r}, not 1")
        c_k, _ = integrate.quad(lambda t: t * t * float(evaluate(t)), -s, s, limit=200)
        d_k, _ = integrate.quad(lambda t: float(evaluate(t)) ** 2, -s, s, limit=200)
        if not (c_k > 0 and d_k > 0):
            raise GenevarError("kernel moments must be positive")
        return cls(evaluate=evaluate, support_halfwidth=s, c_k=c_k, d_k=d_k)


def _tricube(u):
    # clipping |u| at 1 makes the cube factor vanish outside the support,
    # avoiding a branch on large weight matrices
    a = np.minimum(np.abs(np.asarray(u, dtype=float)), 1.0)
    t = 1.0 - a * a * a
    return (70.0 / 81.0) * t * t * t


def _epanechnikov(u):
    a = np.minimum(np.abs(np.asarray(u, dtype=float)), 1.0)
    return 0.75 * (1.0 - a * a)


@functools.lru_cache(maxsize=None)
def tricube_kernel() -> KernelSpec:
    """Default kernel (70/81)(1-|u|^3)^3 on [-1, 1]."""
    return KernelSpec.from_function(_tricube, 1.0)


@functools.lru_cache(maxsize=None)
def epanechnikov_kernel() -> KernelSpec:
    """0.75 (1-u^2) on [-1, 1]; handy as an alternative for density work."""
    return KernelSpec.from_function(_epanechnikov, 1.0)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimationConfig:
    """Smoothing and fixed-point settings shared by all estimators.

    bandwidth is in log2-intensity units; grid is the strictly increasing
    sequence of evaluation points for variance curves.
    """

    bandwidth: float
    grid: np.ndarray
    kernel: KernelSpec = field(default_factory=tricube_kernel)
    convergence_tol: float = 1e-3
    max_iterations: int = 100

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise GenevarError("bandwidth must be positive")
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size < 1:
            raise GenevarError("grid must be a nonempty 1-d sequence")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise GenevarError("grid must be strictly increasing")
        if not np.all(np.isfinite(grid)):
            raise NonFinite("grid contains non-finite values")
        if not self.convergence_tol > 0:
            raise GenevarError("convergence_tol must be positive")
        if self.max_iterations < 1:
            raise GenevarError("max_iterations must be >= 1")
        object.__setattr__(self, "grid", _readonly(grid))


def default_grid(x, n_points: int = 101, trim: float = 0.005) -> np.ndarray:
    """Equispaced grid over the central (1 - 2*trim) mass of the pooled
    intensities.  Real data needs a data-driven range; trimming keeps the
    endpoints inside the region where the design density is not vanishing."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise GenevarError("cannot build a grid from empty data")
    lo, hi = np.quantile(x, [trim, 1.0 - trim])
    if not hi > lo:
        raise GenevarError("degenerate intensity range; cannot build a grid")
    return np.linspace(lo, hi, n_points)


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicatedArray:
    """One array: N genes by I replicates of log2 intensities and log2 ratios."""

    x: np.ndarray
    y: np.ndarray
    gene_ids: tuple

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or y.ndim != 2:
            raise ShapeMismatch("x and y must be 2-d (genes x replicates)")
        if x.shape != y.shape:
            raise ShapeMismatch(f"x shape {x.shape} != y shape {y.shape}")
        ids = tuple(str(g) for g in self.gene_ids)
        if len(ids) != x.shape[0]:
            raise ShapeMismatch(
                f"{len(ids)} gene ids for {x.shape[0]} gene rows")
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "gene_ids", ids)

    @property
    def n_genes(self) -> int:
        return self.x.shape[0]

    @property
    def n_replicates(self) -> int:
        return self.x.shape[1]


def validate(array: ReplicatedArray) -> ReplicatedArray:
    """Check model invariants; returns the input unchanged when they hold.

    Non-finite entries are rejected rather than dropped: silent filtering
    would change N and bias every smoother downstream.
    """
    if array.n_genes < 1:
        raise ShapeMismatch("need at least one gene")
    if array.n_replicates < 2:
        raise TooFewReplicates(
            f"I={array.n_replicates}; within-gene residuals need I >= 2")
    if not np.all(np.isfinite(array.x)):
        raise NonFinite("x contains non-finite entries")
    if not np.all(np.isfinite(array.y)):
        raise NonFinite("y contains non-finite entries")
    return array


@dataclass(frozen=True)
class MultiArraySet:
    """J independent arrays sharing gene ids and replicate count."""

    arrays: tuple

    def __post_init__(self):
        arrays = tuple(self.arrays)
        if len(arrays) < 1:
            raise ShapeMismatch("need at least one array")
        first = arrays[0]
        for a in arrays[1:]:
            if a.x.shape != first.x.shape:
                raise ShapeMismatch("all arrays must share N and I")
            if a.gene_ids != first.gene_ids:
                raise ShapeMismatch("all arrays must share gene ids")
        object.__setattr__(self, "arrays", arrays)

    @property
    def n_arrays(self) -> int:
        return len(self.arrays)

    @property
    def n_genes(self) -> int:
        return self.arrays[0].n_genes

    @property
    def n_replicates(self) -> int:
        return self.arrays[0].n_replicates

    @property
    def gene_ids(self) -> tuple:
        return self.arrays[0].gene_ids

    def stacked_y(self) -> np.ndarray:
        """(J, N, I) stack of log ratios."""
        return np.stack([a.y for a in self.arrays])

    def stacked_x(self) -> np.ndarray:
        """(J, N, I) stack of log intensities."""
        return np.stack([a.x for a in self.arrays])

    def pooled_x(self) -> np.ndarray:
        return np.concatenate([a.x.ravel() for a in self.arrays])


# ---------------------------------------------------------------------------
# Curves and correlation estimates
# ---------------------------------------------------------------------------

# Bit flags attached per grid point.
FLAG_DEGENERATE = 1           # no local identifiability at this point
FLAG_CLAMPED = 2              # value clamped up to zero
FLAG_NEGATIVE_DISCRIMINANT = 4  # root discriminant clamped to zero


@dataclass(frozen=True)
class VarianceCurve:
    """A variance function evaluated on a grid.

    values are squared log-ratio units; stderr, when present, holds pointwise
    asymptotic standard errors.  flags carries the per-point bit flags above.
    Degenerate points hold NaN values and are never silently interpolated.
    """

    grid: np.ndarray
    values: np.ndarray
    stderr: Optional[np.ndarray] = None
    flags: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = _readonly(np.asarray(self.grid, dtype=float))
        values = _readonly(np.asarray(self.values, dtype=float))
        if grid.shape != values.shape or grid.ndim != 1:
            raise ShapeMismatch("grid and values must be equal-length 1-d arrays")
        stderr = self.stderr
        if stderr is not None:
            stderr = _readonly(np.asarray(stderr, dtype=float))
            if stderr.shape != grid.shape:
                raise ShapeMismatch("stderr length must match grid")
        flags = self.flags
        if flags is None:
            flags = np.zeros(grid.shape, dtype=np.uint8)
        else:
            flags = np.array(flags, dtype=np.uint8, copy=True)
            if flags.shape != grid.shape:
                raise ShapeMismatch("flags length must match grid")
        flags.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stderr", stderr)
        object.__setattr__(self, "flags", flags)

    @property
    def evaluable(self) -> np.ndarray:
        """Mask of grid points with a defined value."""
        return (self.flags & FLAG_DEGENERATE) == 0


@dataclass(frozen=True)
class CorrelationEstimate:
    """Replicate correlation and noise-scale moments.

    sigma1 estimates the mean noise scale E[s(X)] and sigma2 the mean squared
    scale E[s(X)^2]; sigma2 >= sigma1^2 up to rounding because sigma2 averages
    the squares of the same curve evaluations (Jensen).
    """

    rho: float
    sigma1: float
    sigma2: float
    iterations: int
    converged: bool
    clipped: bool = False
    n_reps: Optional[int] = None

    def __post_init__(self):
        if not self.sigma1 > 0:
            raise NonpositiveSigma(f"sigma1={self.sigma1!r} must be positive")
        if not self.sigma2 > 0:
            raise NonpositiveSigma(f"sigma2={self.sigma2!r} must be positive")
        if self.sigma2 < self.sigma1 ** 2 - 1e-8:
            raise GenevarError(
                "sigma2 < sigma1^2 beyond tolerance; moment pair is inconsistent")
        if self.n_reps is not None:
            lo = -1.0 / (self.n_reps - 1)
            if not (lo < self.rho < 1.0):
                raise InvalidRho(
                    f"rho={self.rho!r} outside ({lo}, 1) for I={self.n_reps}")
