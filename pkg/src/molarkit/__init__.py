"""Median-based multitask regression, batched multitask bandits and sparse multitask recovery."""
from ._accel import backend, set_backend
from .core import (
    LassoConfig,
    OlsFit,
    TaskDataset,
    coordinatewise_median,
    lasso_fit,
    ols_fit,
    soft_shrink,
    trimmed_mean,
)
from .molar import (
    MolarConfig,
    MolarResult,
    RobustMultitaskConfig,
    ShrinkOption,
    ThresholdSchedule,
    molar_fit,
    pooled_ols_fit,
    robust_multitask_fit,
    select_tau,
    threshold_schedule,
)

__version__ = "0.1.0"
