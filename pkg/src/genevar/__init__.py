"""Nonparametric genewise variance estimation for replicated two-color arrays."""

__version__ = "0.1.0"

from .model import (
    CorrelationEstimate,
    DegenerateWindow,
    EstimationConfig,
    GenevarError,
    IngestionError,
    InvalidReplicateCount,
    InvalidRho,
    KernelSpec,
    MultiArraySet,
    NonFinite,
    NonpositiveSigma,
    NoReplicatedGenes,
    ReplicatedArray,
    ShapeMismatch,
    TooFewArrays,
    TooFewReplicates,
    VarianceCurve,
    ZeroDenominator,
    ZeroDensityEverywhere,
    ZeroDiscriminant,
    default_grid,
    epanechnikov_kernel,
    tricube_kernel,
    validate,
)
from .smoothing import ScatterData, fit_curve, kde, kde_values, local_linear_at, local_linear_fit
from .synthetic import SyntheticData, residual_squares, synthetic_responses, unbiasing_matrix
from .estimators import (
    CurveBundle,
    average_curves,
    clamp_nonnegative,
    correct_curve,
    correct_paired_curve,
    corrected_replicate_average,
    paired_difference_curve,
    pooled_curve,
    replicate_curves,
    two_stage_curve,
    variance_curves,
)
from .correlation import (
    FixedPointResult,
    VarianceComponents,
    corrected_correlation,
    fixed_point_solve,
    raw_correlation,
    variance_components,
)
from .asymptotics import (
    AsymptoticContext,
    corrected_curve_se,
    pooled_curve_asymptotics,
    replicate_curve_asymptotics,
    residual_square_cov,
    synthetic_response_cov,
)
from .inference import (
    GeneCall,
    TestConstants,
    ValidationResult,
    gene_sigma,
    power_increase,
    select_genes,
    test_constants,
    validation_tests,
)
from .simulation import (
    SimDesign,
    SimulationReport,
    intensity_density,
    run_experiment,
    sample_intensities,
    sample_noise,
    scale_moments,
    variance_function,
)
from .io import read_table, write_table
