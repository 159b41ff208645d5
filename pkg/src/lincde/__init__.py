"""State-space sequence models as linear controlled differential equations."""

from .paths import Grid, Path, from_values  # noqa: F401
from .signature import TruncatedTensor, word_index  # noqa: F401
from .cde import (  # noqa: F401
    DenseCdeParams,
    DiagonalCdeParams,
    solve_dense,
    solve_diagonal,
)
from .features import SeededInit, feature_tensor, kernel_goursat  # noqa: F401
from .estimators import RandomCdeRegressor, SignatureFeatures  # noqa: F401

__version__ = "0.1.0"
