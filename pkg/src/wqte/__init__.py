"""Weighted quantile treatment effects under outcome-dependent missingness with double sampling."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DEFAULT_GRID,
    Dataset,
    EstimatorVariant,
    GSpec,
    ObservedRecord,
    QuantileGrid,
    check_dataset,
    validate_dataset,
)
from .errors import *  # noqa: E402,F401,F403
from .estimator import (  # noqa: E402
    NuisanceConfig,
    Nuisances,
    UnitWeights,
    WqteFit,
    compute_weights,
    estimate_wqte,
    estimating_equation_residual,
    fit_nuisances,
    residual_bound,
    weighted_quantile,
)
from .models import (  # noqa: E402
    KnownModel,
    LogisticDesign,
    LogisticModel,
    Stratifier,
    StratumModel,
    fit_double_sampling,
    fit_logistic,
    fit_mar_observance,
    fit_propensity,
    positivity_diagnostics,
)
from .variance import (  # noqa: E402
    InferenceResult,
    asymptotic_inference,
    asymptotic_variance,
    band_inference,
    gradient_bootstrap,
    pairs_bootstrap,
    percentile_inference,
    uniform_band,
)
