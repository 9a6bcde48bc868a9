import math

import numpy as np
import pytest

from genevar.model import (
    CorrelationEstimate,
    EstimationConfig,
    GenevarError,
    InvalidRho,
    KernelSpec,
    MultiArraySet,
    NonFinite,
    ReplicatedArray,
    ShapeMismatch,
    TooFewReplicates,
    VarianceCurve,
    default_grid,
    epanechnikov_kernel,
    tricube_kernel,
    validate,
)
from conftest import make_array


class TestValidate:
    def test_well_formed_accepted(self, rng):
        arr = make_array(rng.normal(size=(3, 3)), rng=rng)
        assert validate(arr) is arr

    def test_nan_rejected(self, rng):
        y = rng.normal(size=(3, 3))
        y[1, 2] = np.nan
        with pytest.raises(NonFinite):
            validate(make_array(y, rng=rng))

    def test_inf_rejected(self, rng):
        x = rng.uniform(6, 16, size=(3, 3))
        x[0, 0] = np.inf
        with pytest.raises(NonFinite):
            validate(make_array(rng.normal(size=(3, 3)), x=x))

    def test_single_replicate_rejected(self, rng):
        with pytest.raises(TooFewReplicates):
            validate(make_array(rng.normal(size=(4, 1)), rng=rng))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatch):
            ReplicatedArray(x=np.zeros((3, 3)), y=np.zeros((3, 2)),
                            gene_ids=("a", "b", "c"))

    def test_gene_id_count_must_match(self):
        with pytest.raises(ShapeMismatch):
            ReplicatedArray(x=np.zeros((3, 2)), y=np.zeros((3, 2)),
                            gene_ids=("a", "b"))

    def test_arrays_are_readonly(self, rng):
        arr = make_array(rng.normal(size=(3, 3)), rng=rng)
        with pytest.raises(ValueError):
            arr.y[0, 0] = 1.0


class TestMultiArraySet:
    def test_consistent_set(self, rng):
        a = make_array(rng.normal(size=(3, 2)), rng=rng)
        b = ReplicatedArray(x=a.x, y=a.y + 1.0, gene_ids=a.gene_ids)
        ms = MultiArraySet(arrays=(a, b))
        assert ms.n_arrays == 2 and ms.n_genes == 3 and ms.n_replicates == 2

    def test_mismatched_shapes_rejected(self, rng):
        a = make_array(rng.normal(size=(3, 2)), rng=rng)
        b = make_array(rng.normal(size=(4, 2)), rng=rng)
        with pytest.raises(ShapeMismatch):
            MultiArraySet(arrays=(a, b))

    def test_mismatched_gene_ids_rejected(self, rng):
        a = make_array(rng.normal(size=(3, 2)), rng=rng)
        b = ReplicatedArray(x=a.x, y=a.y, gene_ids=("x", "y", "z"))
        with pytest.raises(ShapeMismatch):
            MultiArraySet(arrays=(a, b))


class TestKernels:
    def test_tricube_moments(self):
        k = tricube_kernel()
        # second moment has the closed form 2*(70/81)*(1/12)
        assert abs(k.c_k - 35.0 / 243.0) < 1e-10
        # roughness from the binomial expansion of (1-u^3)^6
        series = sum(math.comb(6, j) * (-1) ** j / (3 * j + 1) for j in range(7))
        assert abs(k.d_k - 2.0 * (70.0 / 81.0) ** 2 * series) < 1e-9
        assert k.support_halfwidth == 1.0

    def test_tricube_normalized_and_peak(self):
        k = tricube_kernel()
        assert abs(float(k.evaluate(0.0)) - 70.0 / 81.0) < 1e-12
        assert float(k.evaluate(1.5)) == 0.0
        u = np.linspace(-1, 1, 401)
        assert np.all(np.asarray(k.evaluate(u)) >= 0)

    def test_epanechnikov_moments(self):
        k = epanechnikov_kernel()
        assert abs(k.c_k - 0.2) < 1e-10
        assert abs(k.d_k - 0.6) < 1e-10

    def test_unnormalized_kernel_rejected(self):
        with pytest.raises(GenevarError):
            KernelSpec.from_function(lambda u: np.where(np.abs(u) <= 1, 0.7, 0.0), 1.0)

    def test_asymmetric_kernel_rejected(self):
        def skewed(u):
            u = np.asarray(u, dtype=float)
            return np.where((u >= -0.5) & (u <= 1.5), 0.5, 0.0)
        with pytest.raises(GenevarError):
            KernelSpec.from_function(skewed, 1.5)


class TestConfig:
    def test_grid_must_increase(self):
        with pytest.raises(GenevarError):
            EstimationConfig(bandwidth=1.0, grid=np.array([1.0, 1.0, 2.0]))

    def test_bandwidth_positive(self):
        with pytest.raises(GenevarError):
            EstimationConfig(bandwidth=0.0, grid=np.array([1.0, 2.0]))

    def test_default_grid_trims_tails(self, rng):
        x = rng.normal(size=20000)
        grid = default_grid(x, n_points=51, trim=0.01)
        assert grid.size == 51
        assert grid[0] > x.min() and grid[-1] < x.max()
        assert np.all(np.diff(grid) > 0)

    def test_default_grid_rejects_degenerate(self):
        with pytest.raises(GenevarError):
            default_grid(np.full(10, 3.0))


class TestCurveAndEstimate:
    def test_curve_length_checked(self):
        with pytest.raises(ShapeMismatch):
            VarianceCurve(grid=np.array([1.0, 2.0]), values=np.array([1.0]))

    def test_curve_stderr_length_checked(self):
        with pytest.raises(ShapeMismatch):
            VarianceCurve(grid=np.array([1.0, 2.0]), values=np.array([1.0, 2.0]),
                          stderr=np.array([0.1]))

    def test_estimate_moment_consistency_enforced(self):
        with pytest.raises(GenevarError):
            CorrelationEstimate(rho=0.0, sigma1=1.0, sigma2=0.5,
                                iterations=1, converged=True)

    def test_estimate_rho_bound(self):
        with pytest.raises(InvalidRho):
            CorrelationEstimate(rho=-0.6, sigma1=0.5, sigma2=0.3,
                                iterations=1, converged=True, n_reps=3)
        est = CorrelationEstimate(rho=-0.4, sigma1=0.5, sigma2=0.3,
                                  iterations=1, converged=True, n_reps=3)
        assert est.rho == -0.4
