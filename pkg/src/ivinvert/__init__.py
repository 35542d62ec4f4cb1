"""Confidence sets for linear IV models that stay correct under weak instruments.

The package inverts weak-identification robust tests (AR, LM, CQLR, CLR, CIL)
over the structural coefficient of a single endogenous regressor, allowing
heteroskedastic, autocorrelated, or clustered errors.  AR and LM sets are
recovered exactly by rational root finding, CQLR by a geometric algorithm in
the rank domain, and general conditional tests by Chebyshev approximation of
the compactified acceptance inequality.  Grid baselines and set-distance
audits are included for comparison studies.
"""

from ivinvert.errors import (
    DataError,
    FitError,
    IvInvertError,
    NumericalError,
    QuadratureError,
    RootFindingError,
)
from ivinvert.setops import IntervalUnion, hausdorff, hull, normalized_distance

__version__ = "0.1.0"

__all__ = [
    "IvInvertError",
    "DataError",
    "FitError",
    "RootFindingError",
    "QuadratureError",
    "NumericalError",
    "IntervalUnion",
    "hull",
    "hausdorff",
    "normalized_distance",
    "__version__",
]
