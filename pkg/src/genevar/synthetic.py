"""Turn squared within-gene residuals into synthetic regression responses.

With I >= 3 replicates, the conditional means of the squared residuals
(Y_gi - Ybar_g)^2 form a linear system in the unknown per-spot variances.
Its closed-form inverse is the symmetric I x I matrix

    B = ((I^2 - I) Id - E) / ((I - 1)(I - 2)),

with Id the identity and E the all-ones matrix.  Applying B to each gene's
residual-square vector yields synthetic responses Z whose conditional mean,
for uncorrelated replicates, is exactly the variance function evaluated at
that spot's intensity.  Z entries can be negative; they are deliberately not
clamped here because clamping before smoothing would bias the regression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    InvalidReplicateCount,
    ReplicatedArray,
    TooFewReplicates,
)


def residual_squares(array: ReplicatedArray) -> np.ndarray:
    """Per-spot squared deviations from the gene mean, (Y_gi - Ybar_g)^2."""
    if array.n_replicates < 2:
        raise TooFewReplicates("residuals need at least two replicates")
    d = array.y - array.y.mean(axis=1, keepdims=True)
    return d * d


def unbiasing_matrix(n_reps: int) -> np.ndarray:
    """Closed-form inverse map from residual squares to variances.

    Diagonal (I^2 - I - 1)/((I-1)(I-2)), off-diagonal -1/((I-1)(I-2)); each
    row sums to I/(I-1).  Generated analytically, never inverted numerically.
    """
    i = int(n_reps)
    if i < 3:
        raise InvalidReplicateCount(
            f"I={i}: the linear system collapses below three replicates")
    return ((i * i - i) * np.eye(i) - np.ones((i, i))) / ((i - 1) * (i - 2))


@dataclass(frozen=True)
class SyntheticData:
    """Synthetic responses Z (N x I) paired with their source array."""

    z: np.ndarray
    source: ReplicatedArray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.shape != self.source.x.shape:
            raise InvalidReplicateCount("z shape must match the source array")
        object.__setattr__(self, "z", z)


def synthetic_responses(array: ReplicatedArray) -> SyntheticData:
    """Apply the unbiasing matrix rowwise: Z_g = B r_g."""
    b = unbiasing_matrix(array.n_replicates)
    return SyntheticData(z=residual_squares(array) @ b, source=array)
