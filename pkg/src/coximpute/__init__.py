"""Cox prediction rules calibrated and validated with multiple imputation."""

from .errors import *  # noqa: F401,F403
from .survival import (
    BINARY,
    CATEGORICAL,
    CONTINUOUS,
    ColumnKind,
    CoxFit,
    DesignMatrix,
    DesignSpec,
    StepFunction,
    SurvivalDataset,
    breslow,
    fit_cox,
    kaplan_meier_censoring,
    nelson_aalen,
    predict_survival,
)

__version__ = "0.1.0"
